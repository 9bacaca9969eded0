// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "moeprec/importance_map.hpp"
#include "moeprec/model.hpp"
#include "moeprec/rng.hpp"

namespace moeprec {

inline constexpr int kSchemaVersion = 1;

/// Raw routing counts from one forward pass over `calib`.
ImportanceMap frequency_map(const MoEModel& m, const CalibrationSet& calib, const ForwardOptions& opts = {});

enum class StreamKeying {
  PerExpert,  // probe streams keyed by (layer, expert, projection)
  Shared,     // every expert reuses the (0, 0) streams; matched probes across experts
};

struct HessianOptions {
  std::size_t samples = 64;
  ProbeDistribution probe = ProbeDistribution::Rademacher;
  std::uint64_t seed = 0;
  StreamKeying keying = StreamKeying::PerExpert;
};

/// Per-expert total Hutchinson trace (gate + up + down). Needs no data.
ImportanceMap hessian_map(const MoEModel& m, const HessianOptions& opts);

enum class NormalizationScope { ModelWide, PerLayer };

/// I = minmax(AF) * minmax(H). A constant factor normalizes to all ones.
ImportanceMap combined_map(const ImportanceMap& af, const ImportanceMap& h,
                           NormalizationScope scope = NormalizationScope::ModelWide);

nlohmann::json map_to_json(const ImportanceMap& m);
ImportanceMap map_from_json(const nlohmann::json& j);

/// "layer,expert_0,...,expert_{N-1}" followed by one row per MoE layer.
std::string heatmap_csv(const std::vector<std::size_t>& layers,
                        const std::vector<std::vector<double>>& values);

/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

}  // namespace moeprec
