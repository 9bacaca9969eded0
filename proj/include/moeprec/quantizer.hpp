// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moeprec/tensor.hpp"

namespace moeprec {

inline constexpr std::size_t kDefaultGroupSize = 32;

/// Fixed per-file overhead counted by the size formula (magic, version, header length).
inline constexpr std::uint64_t kSizeHeaderBytes = 12;

/// ceil(numel * bits / 8) + groups * (2 B scale + 2 B zero point).
std::uint64_t quantized_tensor_bytes(std::uint64_t numel, int bits, std::uint64_t group_size);
std::uint64_t full_precision_bytes(std::uint64_t numel);
std::uint64_t group_count(std::uint64_t numel, std::uint64_t group_size);

int max_code(int bits);
/// Round half away from zero.
double round_half_away(double x) noexcept;

struct ScaleResult {
  double scale = 1.0;
  int zero_point = 0;
  bool degenerate = false;
};

/// s = (max * alpha - min * beta) / (2^bits - 1), zp = round(-min * beta / s)
/// clamped to [0, 2^bits - 1]. When max * alpha <= min * beta the scale falls
/// back to 2 * max|w| / (2^bits - 1), or 1 for an all-zero group (zp = 0).
ScaleResult compute_scale(std::span<const double> group, int bits, double alpha, double beta);

/// Quantization state for one weight tensor. Groups are contiguous runs of
/// `group_size` weights in row-major order; the last group may be shorter.
struct QuantParams {
  int bits = 4;
  std::size_t group_size = kDefaultGroupSize;
  std::vector<double> scales;
  std::vector<int> zero_points;
  /// Per-weight rounding adjustment V in [-0.5, 0.5]; empty means zero.
  std::vector<double> rounding;
  /// Per-group clip parameters in [0, 1].
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<std::uint8_t> degenerate;

  int clip_min() const noexcept { return 0; }
  int clip_max() const { return max_code(bits); }
  std::size_t num_groups() const noexcept { return scales.size(); }
};

/// Scales and zero points for the given per-group clip parameters and V.
QuantParams make_params(const Matrix& w, int bits, std::size_t group_size, std::vector<double> alpha,
                        std::vector<double> beta, std::vector<double> rounding = {});

/// Round-to-nearest parameters: V = 0, alpha = beta = 1.
QuantParams rtn_params(const Matrix& w, int bits, std::size_t group_size = kDefaultGroupSize);

struct QdqResult {
  std::vector<std::uint32_t> codes;
  Matrix w_tilde;
};

/// codes = clip(round(w / s + zp + V), 0, 2^bits - 1); w~ = s * (codes - zp).
QdqResult qdq(const Matrix& w, const QuantParams& params);

/// X X^T for inputs stored one sample per column (in x T).
Matrix input_gram(const Matrix& x);

/// ||W X - W~ X||_F^2 expressed through the Gram matrix X X^T.
double reconstruction_loss(const Matrix& w, const Matrix& w_tilde, const Matrix& gram);

struct SignRoundOptions {
  std::size_t steps = 200;
  double lr0 = 0.005;
};

struct SignRoundReport {
  double rtn_loss = 0.0;
  double best_loss = 0.0;
  std::size_t best_step = 0;
};

/// Tunes V, alpha and beta by signed gradient descent on the reconstruction
/// loss (straight-through rounding, linearly decayed step size) and returns
/// the best parameters seen. The result never does worse than RTN.
QuantParams signround_optimize(const Matrix& w, int bits, std::size_t group_size,
                               const Matrix& calib_inputs, const SignRoundOptions& opts = {},
                               SignRoundReport* report = nullptr);
/// Same, with a precomputed Gram matrix.
QuantParams signround_optimize_gram(const Matrix& w, int bits, std::size_t group_size, const Matrix& gram,
                                    const SignRoundOptions& opts = {}, SignRoundReport* report = nullptr);

}  // namespace moeprec
