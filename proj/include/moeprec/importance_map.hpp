// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace moeprec {

enum class Metric { Frequency, Hessian, Combined };

const char* metric_name(Metric m) noexcept;
Metric parse_metric(const std::string& name);

/// Layer x expert matrix of importance scores. Only MoE layers have a row;
/// `layers[r]` is the model layer index of row r.
struct ImportanceMap {
  Metric metric = Metric::Frequency;
  std::vector<std::size_t> layers;
  std::vector<std::vector<double>> values;
  /// Per-expert standard error of the estimate (hessian maps only, else empty).
  std::vector<std::vector<double>> std_error;
  std::string model_id;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t expert_count() const noexcept;
  /// Widest row; the CSV heatmap has this many expert columns.
  std::size_t max_experts() const noexcept;
  bool same_coverage(const ImportanceMap& other) const noexcept;
};

}  // namespace moeprec
