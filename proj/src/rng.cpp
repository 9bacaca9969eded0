// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/rng.hpp"

namespace moeprec {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::seed_seq make_seed(std::uint64_t seed, std::uint64_t id) {
  const std::uint64_t a = splitmix64(seed ^ splitmix64(id));
  const std::uint64_t b = splitmix64(a ^ 0x5851f42d4c957f2dULL);
  return std::seed_seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
}

}  // namespace

std::uint64_t stream_id(const StreamKey& key) noexcept {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(key.purpose));
  h = splitmix64(h ^ key.layer);
  h = splitmix64(h ^ key.expert);
  h = splitmix64(h ^ key.slot);
  return h;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t id) : seed_(seed), id_(id) {
  auto seq = make_seed(seed, id);
  engine_.seed(seq);
}

double RngStream::uniform() {
  // 53 random mantissa bits
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

const char* probe_name(ProbeDistribution d) noexcept {
  return d == ProbeDistribution::Gaussian ? "gaussian" : "rademacher";
}

ProbeDistribution parse_probe(const std::string& name) {
  if (name == "gaussian") return ProbeDistribution::Gaussian;
  if (name == "rademacher") return ProbeDistribution::Rademacher;
  throw validation_error("unknown probe distribution '" + name + "'");
}

Matrix sample_probe(std::size_t rows, std::size_t cols, ProbeDistribution dist, RngStream& rng) {
  std::vector<double> v(rows * cols);
  if (dist == ProbeDistribution::Gaussian) {
    for (double& x : v) x = rng.normal();
  } else {
    for (double& x : v) x = rng.rademacher();
  }
  return Matrix(rows, cols, std::move(v));
}

}  // namespace moeprec
