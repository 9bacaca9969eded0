// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moeprec/importance_map.hpp"
#include "moeprec/model.hpp"

namespace moeprec {

bool is_supported_bits(int bits) noexcept;

/// Allowed expert bit widths, strictly ascending, each in {2,3,4,8,16}.
class BitPalette {
 public:
  explicit BitPalette(std::vector<int> bits);
  /// Parses "2,3,4".
  static BitPalette parse(const std::string& text);

  const std::vector<int>& bits() const noexcept { return bits_; }
  std::size_t size() const noexcept { return bits_.size(); }
  int max() const noexcept { return bits_.back(); }
  int min() const noexcept { return bits_.front(); }
  std::string to_string() const;

 private:
  std::vector<int> bits_;
};

struct ClusterSummary {
  /// Cluster id per input value. Ids are ascending in value.
  std::vector<std::size_t> assignments;
  std::vector<double> means;
  /// Cluster ids by mean, descending.
  std::vector<std::size_t> order;
  std::size_t requested = 0;
  /// True when fewer clusters than requested could be formed.
  bool degenerate = false;
  double wcss = 0.0;
};

/// Exact 1-D k-means (minimum within-cluster sum of squares) by dynamic
/// programming over sorted distinct values. Equal values never split.
ClusterSummary kmeans_1d(std::span<const double> values, std::size_t clusters);

/// Within-cluster sum of squares of a labeling.
double wcss(std::span<const double> values, std::span<const std::size_t> labels);

enum class AssignMode { LayerWise, ModelWise, Uniform };
const char* mode_name(AssignMode m) noexcept;
AssignMode parse_mode(const std::string& name);

struct PrecisionPlan {
  AssignMode mode = AssignMode::ModelWise;
  /// Metric of the source map, or "none" for uniform plans.
  std::string source_metric = "none";
  std::vector<int> palette;
  int shared_bits = 4;
  std::vector<std::size_t> layers;
  std::vector<std::vector<int>> expert_bits;
  bool degenerate = false;
  bool inverted = false;

  int bits_for(ExpertRef ref) const;
  friend bool operator==(const PrecisionPlan&, const PrecisionPlan&) = default;
};

/// Algorithm: cluster all experts' importance into len(palette) groups, sort
/// clusters by mean descending and hand out bit widths from the top down.
PrecisionPlan assign_model_wise(const ImportanceMap& map, const BitPalette& palette, int shared_bits);
/// Same procedure applied to each MoE layer independently.
PrecisionPlan assign_layer_wise(const ImportanceMap& map, const BitPalette& palette, int shared_bits);
PrecisionPlan assign(const ImportanceMap& map, const BitPalette& palette, int shared_bits, AssignMode mode);

/// Every expert at `expert_bits`.
PrecisionPlan uniform_plan(const ModelConfig& config, int expert_bits, int shared_bits);

/// Diagnostic: keeps the plan's multiset of bit widths but hands them out in
/// reverse importance order (within each layer for layer-wise plans), so the
/// most important experts get the fewest bits at identical average bits.
PrecisionPlan invert_plan(const PrecisionPlan& plan, const ImportanceMap& map);

/// Throws a coverage error listing the experts the plan does not cover.
void check_plan_covers(const PrecisionPlan& plan, const ModelConfig& config);

struct PlanStats {
  std::map<int, std::size_t> histogram;
  std::size_t experts = 0;
  double average_expert_bits = 0.0;
  std::uint64_t predicted_size_bytes = 0;
  std::uint64_t full_size_bytes = 0;
};

PlanStats plan_stats(const PrecisionPlan& plan, const ModelConfig& config, std::size_t group_size = 32);

nlohmann::json plan_to_json(const PrecisionPlan& p);
PrecisionPlan plan_from_json(const nlohmann::json& j);

}  // namespace moeprec
