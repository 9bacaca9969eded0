// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moeprec/assigner.hpp"
#include "moeprec/importance.hpp"
#include "moeprec/model.hpp"
#include "moeprec/quantized_model.hpp"

namespace moeprec {

inline constexpr const char* kToolVersion = "0.1.0";

struct EvalReport {
  double output_mse = 0.0;
  std::vector<double> layer_mse;
  std::uint64_t full_size_bytes = 0;
  std::uint64_t quantized_size_bytes = 0;
  double average_expert_bits = 0.0;
  std::map<int, std::size_t> bit_histogram;
  nlohmann::json plan_summary = nlohmann::json::object();
  std::string quantizer;
  std::string model_id;
  std::size_t eval_tokens = 0;
  std::uint64_t eval_seed = 0;
};

/// Runs both models on the same tokens (no gate noise) and compares outputs
/// and the residual stream after every layer.
EvalReport evaluate(const MoEModel& full, const QuantizedModel& q, const CalibrationSet& tokens,
                    bool renormalize = true);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
/// Human-readable summary table.
std::string report_table(const EvalReport& r);

/// Reads every map/plan/report JSON in `run_dir` and writes heatmap CSVs and
/// summary.md to `out_dir`. Returns the files written.
std::vector<std::string> write_report(const std::string& run_dir, const std::string& out_dir);

/// Everything that determines a full pipeline run.
struct RunManifest {
  std::uint64_t seed = 0;
  ModelConfig model;
  double heterogeneity = 1.0;
  std::optional<std::string> model_path;
  std::size_t calib_tokens = 128;
  std::size_t eval_tokens = 256;
  std::vector<Metric> metrics{Metric::Frequency, Metric::Hessian, Metric::Combined};
  std::vector<AssignMode> modes{AssignMode::LayerWise, AssignMode::ModelWise};
  std::vector<int> palette{2, 3, 4};
  int shared_bits = 4;
  std::size_t hessian_samples = 64;
  ProbeDistribution probe = ProbeDistribution::Rademacher;
  NormalizationScope normalization = NormalizationScope::ModelWide;
  QuantizeOptions quantizer;
  bool renormalize = true;
  double sigma = 0.0;
  bool uniform_baseline = true;
  bool inverted_baseline = true;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Runs generate/profile/assign/quantize/evaluate/report into `out_dir`.
/// Output bytes depend only on the manifest (never on thread count).
std::vector<std::string> run_pipeline(const RunManifest& manifest, const std::string& out_dir);

/// Pretty JSON with a trailing newline, as written by every command.
std::string json_text(const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace moeprec
