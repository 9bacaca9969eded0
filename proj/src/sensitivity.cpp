// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/sensitivity.hpp"

#include <cmath>
#include <string>

namespace moeprec {

namespace {

double checked_norm(const Matrix& w) {
  const double n = frobenius_norm(w);
  if (!(n > 0.0)) throw degenerate_error("zero-norm weight: Frobenius proxy loss is not differentiable at 0");
  return n;
}

}  // namespace

const TraceEstimate& ExpertSensitivity::trace(Projection p) const {
  switch (p) {
    case Projection::Gate: return gate_trace;
    case Projection::Up: return up_trace;
    case Projection::Down: break;
  }
  return down_trace;
}

double ExpertSensitivity::std_error() const {
  return std::sqrt(gate_trace.std_error * gate_trace.std_error + up_trace.std_error * up_trace.std_error +
                   down_trace.std_error * down_trace.std_error);
}

Matrix frobenius_gradient(const Matrix& w) { return scaled(w, 1.0 / checked_norm(w)); }

Matrix hvp_frobenius(const Matrix& w, const Matrix& v) {
  if (!w.same_shape(v))
    throw shape_error("hvp: w is " + shape_string(w.rows(), w.cols()) + ", v is " +
                      shape_string(v.rows(), v.cols()));
  const double n = checked_norm(w);
  const double wv = inner(w, v);
  const double a = 1.0 / n;
  const double b = wv / (n * n * n);
  std::vector<double> out(w.size());
  auto dw = w.data();
  auto dv = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * dv[i] - b * dw[i];
  return Matrix(w.rows(), w.cols(), std::move(out));
}

TraceEstimate hutchinson_trace(const Matrix& w, std::size_t samples, ProbeDistribution dist,
                               RngStream& rng) {
  if (samples < 1) throw validation_error("hutchinson_trace: need at least one sample");
  checked_norm(w);
  TraceEstimate est;
  est.num_samples = samples;
  est.probe = dist;
  est.per_sample.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const Matrix v = sample_probe(w.rows(), w.cols(), dist, rng);
    const Matrix hv = hvp_frobenius(w, v);
    est.per_sample.push_back(inner(v, hv));
  }
  double sum = 0.0;
  for (double t : est.per_sample) sum += t;
  est.mean = sum / static_cast<double>(samples);
  if (samples > 1) {
    double ss = 0.0;
    for (double t : est.per_sample) ss += (t - est.mean) * (t - est.mean);
    est.std_error = std::sqrt(ss / static_cast<double>(samples - 1)) / std::sqrt(static_cast<double>(samples));
  }
  return est;
}

double analytic_trace(const Matrix& w) {
  return (static_cast<double>(w.size()) - 1.0) / checked_norm(w);
}

double finite_difference_trace(const Matrix& w, double step) {
  if (w.size() > 64) throw validation_error("finite_difference_trace: at most 64 entries");
  if (!(step > 0.0)) throw validation_error("finite_difference_trace: step must be > 0");
  checked_norm(w);
  const std::size_t D = w.size();
  Matrix hessian(D, D);
  for (std::size_t j = 0; j < D; ++j) {
    Matrix plus = w;
    Matrix minus = w;
    plus.data()[j] += step;
    minus.data()[j] -= step;
    const Matrix gp = frobenius_gradient(plus);
    const Matrix gm = frobenius_gradient(minus);
    for (std::size_t i = 0; i < D; ++i) hessian(i, j) = (gp.data()[i] - gm.data()[i]) / (2.0 * step);
  }
  double trace = 0.0;
  for (std::size_t i = 0; i < D; ++i) trace += hessian(i, i);
  return trace;
}

ProjectionStreams expert_streams(std::uint64_t seed, ExpertRef ref) {
  auto make = [&](Projection p) {
    return RngStream(seed, StreamKey{StreamPurpose::HessianProbe, ref.layer, ref.expert,
                                     static_cast<std::uint64_t>(p)});
  };
  return {make(Projection::Gate), make(Projection::Up), make(Projection::Down)};
}

ExpertSensitivity expert_sensitivity(const Expert& e, std::size_t samples, ProbeDistribution dist,
                                     ProjectionStreams& streams) {
  ExpertSensitivity s;
  TraceEstimate* slots[3] = {&s.gate_trace, &s.up_trace, &s.down_trace};
  for (Projection p : kProjections) {
    const auto idx = static_cast<std::size_t>(p);
    const Matrix w = e.projection(p).cast<double>();
    try {
      *slots[idx] = hutchinson_trace(w, samples, dist, streams[idx]);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::Degenerate) throw;
      throw degenerate_error(std::string(projection_name(p)) + ": " + err.what());
    }
  }
  s.total = s.gate_trace.mean + s.up_trace.mean + s.down_trace.mean;
  return s;
}

}  // namespace moeprec
