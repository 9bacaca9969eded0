// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace moeprec {

std::uint64_t group_count(std::uint64_t numel, std::uint64_t group_size) {
  if (group_size == 0) throw validation_error("group_size must be >= 1");
  return (numel + group_size - 1) / group_size;
}

std::uint64_t quantized_tensor_bytes(std::uint64_t numel, int bits, std::uint64_t group_size) {
  const std::uint64_t code_bytes = (numel * static_cast<std::uint64_t>(bits) + 7) / 8;
  return code_bytes + group_count(numel, group_size) * 4;
}

std::uint64_t full_precision_bytes(std::uint64_t numel) { return numel * 4; }

int max_code(int bits) {
  if (bits < 1 || bits > 16) throw validation_error("bit width " + std::to_string(bits) + " out of range");
  return (1 << bits) - 1;
}

double round_half_away(double x) noexcept { return std::round(x); }

ScaleResult compute_scale(std::span<const double> group, int bits, double alpha, double beta) {
  if (group.empty()) throw validation_error("compute_scale: empty group");
  const int m = max_code(bits);
  const auto [lo_it, hi_it] = std::minmax_element(group.begin(), group.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  ScaleResult r;
  const double span = hi * alpha - lo * beta;
  if (span > 0.0) {
    r.scale = span / m;
  } else {
    const double amax = std::max(std::abs(lo), std::abs(hi));
    r.degenerate = true;
    if (amax == 0.0) {
      r.scale = 1.0;
      r.zero_point = 0;
      return r;
    }
    r.scale = 2.0 * amax / m;
  }
  r.zero_point = static_cast<int>(std::clamp(round_half_away(-lo * beta / r.scale), 0.0, static_cast<double>(m)));
  return r;
}

QuantParams make_params(const Matrix& w, int bits, std::size_t group_size, std::vector<double> alpha,
                        std::vector<double> beta, std::vector<double> rounding) {
  const std::size_t groups = group_count(w.size(), group_size);
  if (alpha.size() != groups || beta.size() != groups)
    throw shape_error("make_params: clip parameters need one entry per group");
  if (!rounding.empty() && rounding.size() != w.size())
    throw shape_error("make_params: rounding adjustment needs one entry per weight");
  QuantParams p;
  p.bits = bits;
  p.group_size = group_size;
  p.scales.resize(groups);
  p.zero_points.resize(groups);
  p.degenerate.resize(groups);
  auto data = w.data();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * group_size;
    const std::size_t end = std::min(data.size(), begin + group_size);
    const ScaleResult s = compute_scale(data.subspan(begin, end - begin), bits, alpha[g], beta[g]);
    p.scales[g] = s.scale;
    p.zero_points[g] = s.zero_point;
    p.degenerate[g] = s.degenerate ? 1 : 0;
  }
  p.alpha = std::move(alpha);
  p.beta = std::move(beta);
  p.rounding = std::move(rounding);
  return p;
}

QuantParams rtn_params(const Matrix& w, int bits, std::size_t group_size) {
  const std::size_t groups = group_count(w.size(), group_size);
  return make_params(w, bits, group_size, std::vector<double>(groups, 1.0), std::vector<double>(groups, 1.0));
}

QdqResult qdq(const Matrix& w, const QuantParams& p) {
  const std::size_t groups = group_count(w.size(), p.group_size);
  if (p.scales.size() != groups || p.zero_points.size() != groups)
    throw shape_error("qdq: parameters do not match tensor grouping");
  if (!p.rounding.empty() && p.rounding.size() != w.size())
    throw shape_error("qdq: rounding adjustment size mismatch");
  const double m = p.clip_max();
  QdqResult r;
  r.codes.resize(w.size());
  std::vector<double> out(w.size());
  auto data = w.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t g = i / p.group_size;
    const double s = p.scales[g];
    const double zp = p.zero_points[g];
    const double v = p.rounding.empty() ? 0.0 : p.rounding[i];
    const double code = std::clamp(round_half_away(data[i] / s + zp + v), 0.0, m);
    r.codes[i] = static_cast<std::uint32_t>(code);
    out[i] = s * (code - zp);
  }
  r.w_tilde = Matrix(w.rows(), w.cols(), std::move(out));
  return r;
}

Matrix input_gram(const Matrix& x) { return matmul(x, transpose(x)); }

double reconstruction_loss(const Matrix& w, const Matrix& w_tilde, const Matrix& gram) {
  if (!w.same_shape(w_tilde) || gram.rows() != w.cols() || gram.cols() != w.cols())
    throw shape_error("reconstruction_loss: shape mismatch");
  double loss = 0.0;
  std::vector<double> e(w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) e[c] = w(r, c) - w_tilde(r, c);
    for (std::size_t i = 0; i < w.cols(); ++i) {
      if (e[i] == 0.0) continue;
      auto g = gram.row(i);
      double acc = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) acc += g[j] * e[j];
      loss += e[i] * acc;
    }
  }
  return loss;
}

namespace {

double sign(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

QuantParams signround_optimize(const Matrix& w, int bits, std::size_t group_size, const Matrix& calib_inputs,
                               const SignRoundOptions& opts, SignRoundReport* report) {
  if (calib_inputs.rows() != w.cols())
    throw shape_error("signround: calibration inputs have " + std::to_string(calib_inputs.rows()) +
                      " rows, weight has " + std::to_string(w.cols()) + " columns");
  return signround_optimize_gram(w, bits, group_size, input_gram(calib_inputs), opts, report);
}

QuantParams signround_optimize_gram(const Matrix& w, int bits, std::size_t group_size, const Matrix& gram,
                                    const SignRoundOptions& opts, SignRoundReport* report) {
  if (gram.rows() != w.cols() || gram.cols() != w.cols()) throw shape_error("signround: Gram matrix shape mismatch");
  const std::size_t groups = group_count(w.size(), group_size);
  const double m = max_code(bits);
  auto data = w.data();
  std::vector<double> gmin(groups), gmax(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const auto begin = data.begin() + static_cast<std::ptrdiff_t>(g * group_size);
    const auto end = data.begin() + static_cast<std::ptrdiff_t>(std::min(data.size(), (g + 1) * group_size));
    const auto [lo, hi] = std::minmax_element(begin, end);
    gmin[g] = *lo;
    gmax[g] = *hi;
  }

  std::vector<double> v(w.size(), 0.0), alpha(groups, 1.0), beta(groups, 1.0);
  QuantParams best;
  double best_loss = 0.0;
  std::vector<double> grad_w(w.size());
  for (std::size_t t = 0;; ++t) {
    QuantParams p = make_params(w, bits, group_size, alpha, beta, v);
    const QdqResult q = qdq(w, p);
    const double loss = reconstruction_loss(w, q.w_tilde, gram);
    if (t == 0) {
      if (report) report->rtn_loss = loss;
      best = p;
      best_loss = loss;
    } else if (loss < best_loss) {
      best = p;
      best_loss = loss;
      if (report) report->best_step = t;
    }
    if (t >= opts.steps) break;

    // dL/dW~ = -2 (W - W~) X X^T
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.cols(); ++k) acc += (w(r, k) - q.w_tilde(r, k)) * gram(k, c);
        grad_w[r * w.cols() + c] = -2.0 * acc;
      }
    }
    std::vector<double> grad_s(groups, 0.0);
    std::vector<double> grad_v(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::size_t g = i / group_size;
      const double s = p.scales[g];
      const double zp = p.zero_points[g];
      const double raw = round_half_away(data[i] / s + zp + v[i]);
      if (raw < 0.0) {
        grad_s[g] += grad_w[i] * (-zp);
      } else if (raw > m) {
        grad_s[g] += grad_w[i] * (m - zp);
      } else {
        grad_v[i] = grad_w[i] * s;
        grad_s[g] += grad_w[i] * v[i];
      }
    }
    const double lr = opts.lr0 * (1.0 - static_cast<double>(t) / static_cast<double>(opts.steps));
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = std::clamp(v[i] - lr * sign(grad_v[i]), -0.5, 0.5);
    for (std::size_t g = 0; g < groups; ++g) {
      if (p.degenerate[g]) continue;  // fallback scale does not depend on alpha/beta
      alpha[g] = std::clamp(alpha[g] - lr * sign(grad_s[g] * gmax[g] / m), 0.0, 1.0);
      beta[g] = std::clamp(beta[g] - lr * sign(-grad_s[g] * gmin[g] / m), 0.0, 1.0);
    }
  }
  if (report) report->best_loss = best_loss;
  return best;
}

}  // namespace moeprec
