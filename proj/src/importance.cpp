// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/importance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "moeprec/model_io.hpp"
#include "moeprec/parallel.hpp"
#include "moeprec/sensitivity.hpp"

namespace moeprec {

const char* metric_name(Metric m) noexcept {
  switch (m) {
    case Metric::Frequency: return "frequency";
    case Metric::Hessian: return "hessian";
    case Metric::Combined: return "combined";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  if (name == "frequency") return Metric::Frequency;
  if (name == "hessian") return Metric::Hessian;
  if (name == "combined") return Metric::Combined;
  throw validation_error("unknown metric '" + name + "'");
}

std::size_t ImportanceMap::expert_count() const noexcept {
  std::size_t n = 0;
  for (const auto& row : values) n += row.size();
  return n;
}

std::size_t ImportanceMap::max_experts() const noexcept {
  std::size_t n = 0;
  for (const auto& row : values) n = std::max(n, row.size());
  return n;
}

bool ImportanceMap::same_coverage(const ImportanceMap& other) const noexcept {
  if (layers != other.layers || values.size() != other.values.size()) return false;
  for (std::size_t r = 0; r < values.size(); ++r)
    if (values[r].size() != other.values[r].size()) return false;
  return true;
}

ImportanceMap frequency_map(const MoEModel& m, const CalibrationSet& calib, const ForwardOptions& opts) {
  ForwardOptions o = opts;
  o.record_frequency = true;
  o.record_hidden = false;
  ForwardResult r = model_forward(m, calib.tokens, o);
  ImportanceMap map = std::move(*r.frequency);
  map.model_id = model_fingerprint(m);
  map.provenance = {{"calibration_tokens", calib.tokens.rows()},
                    {"calibration_seed", calib.seed},
                    {"sigma", o.sigma.value_or(m.config.gate_noise_sigma)},
                    {"noise_seed", o.noise_seed},
                    {"renormalize", o.renormalize},
                    {"active_experts", m.config.active_experts}};
  return map;
}

ImportanceMap hessian_map(const MoEModel& m, const HessianOptions& opts) {
  ImportanceMap map;
  map.metric = Metric::Hessian;
  map.layers = m.config.moe_layers();
  const std::size_t n = m.config.experts_per_layer;
  map.values.assign(map.layers.size(), std::vector<double>(n, 0.0));
  map.std_error.assign(map.layers.size(), std::vector<double>(n, 0.0));

  parallel_for(map.layers.size() * n, [&](std::size_t job) {
    const std::size_t row = job / n;
    const std::size_t e = job % n;
    const ExpertRef ref{map.layers[row], e};
    const ExpertRef key = opts.keying == StreamKeying::PerExpert ? ref : ExpertRef{0, 0};
    ProjectionStreams streams = expert_streams(opts.seed, key);
    try {
      const ExpertSensitivity s =
          expert_sensitivity(m.moe_layer(ref.layer)->experts[e], opts.samples, opts.probe, streams);
      map.values[row][e] = s.total;
      map.std_error[row][e] = s.std_error();
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::Degenerate) throw;
      throw degenerate_error("layer " + std::to_string(ref.layer) + " expert " + std::to_string(e) +
                             " " + err.what());
    }
  });
  map.model_id = model_fingerprint(m);
  map.provenance = {{"samples", opts.samples},
                    {"probe", probe_name(opts.probe)},
                    {"seed", opts.seed},
                    {"keying", opts.keying == StreamKeying::PerExpert ? "per_expert" : "shared"}};
  return map;
}

namespace {

/// Min-max normalizes the selected rows in place; a constant range maps to 1.
void normalize_rows(std::vector<std::vector<double>>& rows, std::size_t first, std::size_t last) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t r = first; r < last; ++r)
    for (double v : rows[r]) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double range = hi - lo;
  for (std::size_t r = first; r < last; ++r)
    for (double& v : rows[r]) v = range > 0.0 ? (v - lo) / range : 1.0;
}

std::vector<std::vector<double>> normalized(const ImportanceMap& map, NormalizationScope scope) {
  auto rows = map.values;
  if (scope == NormalizationScope::ModelWide) {
    normalize_rows(rows, 0, rows.size());
  } else {
    for (std::size_t r = 0; r < rows.size(); ++r) normalize_rows(rows, r, r + 1);
  }
  return rows;
}

}  // namespace

ImportanceMap combined_map(const ImportanceMap& af, const ImportanceMap& h, NormalizationScope scope) {
  if (af.metric != Metric::Frequency) throw validation_error("combined_map: first map must be a frequency map");
  if (h.metric != Metric::Hessian) throw validation_error("combined_map: second map must be a hessian map");
  if (!af.same_coverage(h)) throw coverage_error("combined_map: frequency and hessian maps cover different experts");
  if (!af.model_id.empty() && !h.model_id.empty() && af.model_id != h.model_id)
    throw coverage_error("combined_map: maps come from different models");
  const auto na = normalized(af, scope);
  const auto nh = normalized(h, scope);
  ImportanceMap out;
  out.metric = Metric::Combined;
  out.layers = af.layers;
  out.values = na;
  for (std::size_t r = 0; r < out.values.size(); ++r)
    for (std::size_t e = 0; e < out.values[r].size(); ++e) out.values[r][e] = na[r][e] * nh[r][e];
  out.model_id = af.model_id.empty() ? h.model_id : af.model_id;
  out.provenance = {{"frequency", af.provenance},
                    {"hessian", h.provenance},
                    {"normalization", scope == NormalizationScope::ModelWide ? "model" : "layer"}};
  return out;
}

nlohmann::json map_to_json(const ImportanceMap& m) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["type"] = "importance_map";
  j["metric"] = metric_name(m.metric);
  j["model_id"] = m.model_id;
  j["layers"] = m.layers;
  j["values"] = m.values;
  if (!m.std_error.empty()) j["std_error"] = m.std_error;
  j["provenance"] = m.provenance;
  return j;
}

ImportanceMap map_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type").get<std::string>() != "importance_map")
      throw FormatError(0, "JSON document is not an importance map");
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw FormatError(0, "unsupported importance map schema_version");
    ImportanceMap m;
    m.metric = parse_metric(j.at("metric").get<std::string>());
    m.model_id = j.at("model_id").get<std::string>();
    m.layers = j.at("layers").get<std::vector<std::size_t>>();
    m.values = j.at("values").get<std::vector<std::vector<double>>>();
    if (j.contains("std_error")) m.std_error = j.at("std_error").get<std::vector<std::vector<double>>>();
    if (j.contains("provenance")) m.provenance = j.at("provenance");
    if (m.values.size() != m.layers.size()) throw FormatError(0, "importance map: layers/values length mismatch");
    for (const auto& row : m.values)
      for (double v : row)
        if (!std::isfinite(v) || v < 0.0) throw FormatError(0, "importance map: values must be finite and >= 0");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, std::string("malformed importance map: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Format) throw;
    throw FormatError(0, e.what());
  }
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string heatmap_csv(const std::vector<std::size_t>& layers,
                        const std::vector<std::vector<double>>& values) {
  std::size_t width = 0;
  for (const auto& row : values) width = std::max(width, row.size());
  std::string out = "layer";
  for (std::size_t e = 0; e < width; ++e) out += ",expert_" + std::to_string(e);
  out += '\n';
  for (std::size_t r = 0; r < values.size(); ++r) {
    out += std::to_string(layers[r]);
    for (std::size_t e = 0; e < width; ++e) {
      out += ',';
      if (e < values[r].size()) out += format_number(values[r][e]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace moeprec
