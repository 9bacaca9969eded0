// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "moeprec/tensor.hpp"

namespace moeprec {

/// What a random stream is used for. Part of the stream key, so values are stable.
enum class StreamPurpose : std::uint64_t {
  ModelWeights = 1,
  ExpertScale = 2,
  HessianProbe = 3,
  GateNoise = 4,
  Calibration = 5,
  EvalTokens = 6,
};

struct StreamKey {
  StreamPurpose purpose;
  std::uint64_t layer = 0;
  std::uint64_t expert = 0;
  std::uint64_t slot = 0;  // projection, tensor or token index
};

/// Mixes a key into a 64-bit stream id (splitmix64 finalizer chain).
std::uint64_t stream_id(const StreamKey& key) noexcept;

/// Independent random stream addressed by (seed, stream id). Two streams with the
/// same pair produce the same sequence no matter what other streams consumed.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);
  RngStream(std::uint64_t seed, const StreamKey& key) : RngStream(seed, stream_id(key)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t id() const noexcept { return id_; }

  std::uint64_t next_u64() { return engine_(); }
  double normal() { return normal_(engine_); }
  /// Uniform in [0, 1).
  double uniform();
  /// +1 or -1 with equal probability.
  double rademacher() { return (engine_() >> 63) != 0 ? 1.0 : -1.0; }

 private:
  std::uint64_t seed_;
  std::uint64_t id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

enum class ProbeDistribution { Gaussian, Rademacher };

const char* probe_name(ProbeDistribution d) noexcept;
ProbeDistribution parse_probe(const std::string& name);

/// i.i.d. probe matrix with E[v v^T] = I.
Matrix sample_probe(std::size_t rows, std::size_t cols, ProbeDistribution dist, RngStream& rng);

}  // namespace moeprec
