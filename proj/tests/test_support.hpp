// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <unistd.h>
#include <string>

#include "moeprec/model.hpp"
#include "moeprec/rng.hpp"
#include "moeprec/tensor.hpp"

namespace moeprec::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0) {
  RngStream rng(seed, 0xabcdefULL);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = stddev * rng.normal();
  return m;
}

inline ModelConfig small_config(std::size_t layers = 2, std::size_t experts = 4, std::size_t k = 2,
                                std::size_t d = 8, std::size_t f = 16, bool first_dense = false) {
  ModelConfig c;
  c.num_layers = layers;
  c.experts_per_layer = experts;
  c.active_experts = k;
  c.hidden_dim = d;
  c.ffn_dim = f;
  c.first_layer_dense = first_dense;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("moeprec-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace moeprec::test
