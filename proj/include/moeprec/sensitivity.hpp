// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "moeprec/model.hpp"
#include "moeprec/rng.hpp"
#include "moeprec/tensor.hpp"

namespace moeprec {

/// Hutchinson estimate of Tr(H) for the proxy loss L(W) = ||W||_F.
struct TraceEstimate {
  double mean = 0.0;
  std::vector<double> per_sample;
  std::size_t num_samples = 0;
  ProbeDistribution probe = ProbeDistribution::Rademacher;
  /// Sample standard deviation / sqrt(m); 0 when m == 1.
  double std_error = 0.0;
};

struct ExpertSensitivity {
  TraceEstimate gate_trace;
  TraceEstimate up_trace;
  TraceEstimate down_trace;
  double total = 0.0;

  const TraceEstimate& trace(Projection p) const;
  /// Standard error of `total`, assuming independent projections.
  double std_error() const;
};

/// H v for L(W) = ||W||_F:  v / ||W|| - W <W, v> / ||W||^3.
/// Throws a degenerate error for a zero-norm W.
Matrix hvp_frobenius(const Matrix& w, const Matrix& v);

/// Gradient of ||W||_F, i.e. W / ||W||.
Matrix frobenius_gradient(const Matrix& w);

TraceEstimate hutchinson_trace(const Matrix& w, std::size_t samples, ProbeDistribution dist,
                               RngStream& rng);

/// Closed-form trace (D - 1) / ||W||_F where D is the number of entries.
double analytic_trace(const Matrix& w);

/// Exact trace of the full central-difference Hessian (differences of the
/// analytic gradient). O(D^2); limited to 64 entries.
double finite_difference_trace(const Matrix& w, double step);

/// One stream per projection, in Gate/Up/Down order.
using ProjectionStreams = std::array<RngStream, 3>;

ExpertSensitivity expert_sensitivity(const Expert& e, std::size_t samples, ProbeDistribution dist,
                                     ProjectionStreams& streams);

/// Probe streams keyed by (layer, expert, projection) under `seed`.
ProjectionStreams expert_streams(std::uint64_t seed, ExpertRef ref);

inline constexpr std::size_t kDefaultHutchinsonSamples = 64;

}  // namespace moeprec
