// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/assigner.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

#include "moeprec/importance.hpp"
#include "moeprec/quantizer.hpp"

namespace moeprec {

bool is_supported_bits(int bits) noexcept {
  return bits == 2 || bits == 3 || bits == 4 || bits == 8 || bits == 16;
}

BitPalette::BitPalette(std::vector<int> bits) : bits_(std::move(bits)) {
  if (bits_.empty()) throw validation_error("palette must not be empty");
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (!is_supported_bits(bits_[i]))
      throw validation_error("unsupported bit width " + std::to_string(bits_[i]) + " (allowed: 2,3,4,8,16)");
    if (i > 0 && bits_[i] <= bits_[i - 1])
      throw validation_error("palette must be strictly ascending, got " + to_string());
  }
}

BitPalette BitPalette::parse(const std::string& text) {
  std::vector<int> bits;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) throw validation_error("malformed palette '" + text + "'");
    item = item.substr(first, last - first + 1);
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw validation_error("malformed palette '" + text + "'");
    }
    if (used != item.size()) throw validation_error("malformed palette '" + text + "'");
    bits.push_back(v);
  }
  if (bits.empty()) throw validation_error("malformed palette '" + text + "'");
  return BitPalette(std::move(bits));
}

std::string BitPalette::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < bits_.size(); ++i) s += (i ? "," : "") + std::to_string(bits_[i]);
  return s;
}

double wcss(std::span<const double> values, std::span<const std::size_t> labels) {
  std::map<std::size_t, std::pair<double, std::size_t>> sums;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [s, n] = sums[labels[i]];
    s += values[i];
    ++n;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& [s, n] = sums[labels[i]];
    const double d = values[i] - s / static_cast<double>(n);
    total += d * d;
  }
  return total;
}

ClusterSummary kmeans_1d(std::span<const double> values, std::size_t clusters) {
  if (clusters < 1) throw validation_error("kmeans_1d: need at least one cluster");
  if (values.empty()) throw validation_error("kmeans_1d: no values");
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  // Distinct values with multiplicities; centered to limit cancellation.
  double center = 0.0;
  for (double v : values) center += v;
  center /= static_cast<double>(n);
  std::vector<double> uniq;
  std::vector<std::size_t> first_pos;  // position in idx where each distinct value starts
  for (std::size_t p = 0; p < n; ++p) {
    if (p == 0 || values[idx[p]] != values[idx[p - 1]]) {
      uniq.push_back(values[idx[p]]);
      first_pos.push_back(p);
    }
  }
  const std::size_t m = uniq.size();
  first_pos.push_back(n);
  const std::size_t k = std::min(clusters, m);

  std::vector<double> cw(m + 1, 0.0), cs(m + 1, 0.0), cq(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double w = static_cast<double>(first_pos[i + 1] - first_pos[i]);
    const double x = uniq[i] - center;
    cw[i + 1] = cw[i] + w;
    cs[i + 1] = cs[i] + w * x;
    cq[i + 1] = cq[i] + w * x * x;
  }
  auto cost = [&](std::size_t j, std::size_t i) {  // distinct values [j, i)
    const double w = cw[i] - cw[j];
    const double s = cs[i] - cs[j];
    return std::max(0.0, (cq[i] - cq[j]) - s * s / w);
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(k + 1, std::vector<double>(m + 1, inf));
  std::vector<std::vector<std::size_t>> split(k + 1, std::vector<std::size_t>(m + 1, 0));
  best[0][0] = 0.0;
  for (std::size_t c = 1; c <= k; ++c) {
    for (std::size_t i = c; i <= m - (k - c); ++i) {
      for (std::size_t j = c - 1; j < i; ++j) {
        if (best[c - 1][j] == inf) continue;
        const double total = best[c - 1][j] + cost(j, i);
        // Exact ties keep the later split (smaller upper cluster).
        if (total <= best[c][i]) {
          best[c][i] = total;
          split[c][i] = j;
        }
      }
    }
  }

  std::vector<std::size_t> bounds(k + 1);
  bounds[k] = m;
  for (std::size_t c = k; c >= 1; --c) bounds[c - 1] = split[c][bounds[c]];

  ClusterSummary out;
  out.requested = clusters;
  out.degenerate = k < clusters;
  out.assignments.assign(n, 0);
  out.means.assign(k, 0.0);
  std::vector<double> cluster_min(k), sums(k, 0.0);
  std::vector<std::size_t> first_member(k, n), counts(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    cluster_min[c] = uniq[bounds[c]];
    for (std::size_t p = first_pos[bounds[c]]; p < first_pos[bounds[c + 1]]; ++p) {
      const std::size_t i = idx[p];
      out.assignments[i] = c;
      sums[c] += values[i];
      ++counts[c];
      first_member[c] = std::min(first_member[c], i);
    }
    out.means[c] = sums[c] / static_cast<double>(counts[c]);
  }
  out.order.resize(k);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
    if (out.means[a] != out.means[b]) return out.means[a] > out.means[b];
    if (cluster_min[a] != cluster_min[b]) return cluster_min[a] > cluster_min[b];
    return first_member[a] < first_member[b];
  });
  out.wcss = wcss(values, out.assignments);
  return out;
}

const char* mode_name(AssignMode m) noexcept {
  switch (m) {
    case AssignMode::LayerWise: return "layer_wise";
    case AssignMode::ModelWise: return "model_wise";
    case AssignMode::Uniform: return "uniform";
  }
  return "?";
}

AssignMode parse_mode(const std::string& name) {
  if (name == "layer" || name == "layer_wise") return AssignMode::LayerWise;
  if (name == "model" || name == "model_wise") return AssignMode::ModelWise;
  if (name == "uniform") return AssignMode::Uniform;
  throw validation_error("unknown assignment mode '" + name + "'");
}

int PrecisionPlan::bits_for(ExpertRef ref) const {
  for (std::size_t r = 0; r < layers.size(); ++r) {
    if (layers[r] != ref.layer) continue;
    if (ref.expert >= expert_bits[r].size()) break;
    return expert_bits[r][ref.expert];
  }
  throw coverage_error("plan does not cover layer " + std::to_string(ref.layer) + " expert " +
                       std::to_string(ref.expert));
}

namespace {

void check_shared_bits(int shared_bits) {
  if (!is_supported_bits(shared_bits))
    throw validation_error("unsupported shared bit width " + std::to_string(shared_bits));
}

/// Bits for each value: clusters ranked by mean get palette widths from the top.
std::vector<int> cluster_bits(std::span<const double> values, const BitPalette& palette, bool& degenerate) {
  const ClusterSummary cs = kmeans_1d(values, palette.size());
  degenerate = degenerate || cs.degenerate;
  std::vector<int> rank_bits(cs.means.size());
  const auto& bits = palette.bits();
  for (std::size_t r = 0; r < cs.order.size(); ++r) rank_bits[cs.order[r]] = bits[bits.size() - 1 - r];
  std::vector<int> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = rank_bits[cs.assignments[i]];
  return out;
}

PrecisionPlan plan_shell(const ImportanceMap& map, const BitPalette& palette, int shared_bits, AssignMode mode) {
  check_shared_bits(shared_bits);
  if (map.expert_count() == 0) throw validation_error("cannot assign precision from an empty importance map");
  PrecisionPlan plan;
  plan.mode = mode;
  plan.source_metric = metric_name(map.metric);
  plan.palette = palette.bits();
  plan.shared_bits = shared_bits;
  plan.layers = map.layers;
  return plan;
}

}  // namespace

PrecisionPlan assign_model_wise(const ImportanceMap& map, const BitPalette& palette, int shared_bits) {
  PrecisionPlan plan = plan_shell(map, palette, shared_bits, AssignMode::ModelWise);
  std::vector<double> flat;
  for (const auto& row : map.values) flat.insert(flat.end(), row.begin(), row.end());
  const std::vector<int> bits = cluster_bits(flat, palette, plan.degenerate);
  std::size_t at = 0;
  for (const auto& row : map.values) {
    plan.expert_bits.emplace_back(bits.begin() + static_cast<std::ptrdiff_t>(at),
                                  bits.begin() + static_cast<std::ptrdiff_t>(at + row.size()));
    at += row.size();
  }
  return plan;
}

PrecisionPlan assign_layer_wise(const ImportanceMap& map, const BitPalette& palette, int shared_bits) {
  PrecisionPlan plan = plan_shell(map, palette, shared_bits, AssignMode::LayerWise);
  for (const auto& row : map.values) {
    if (row.empty()) throw validation_error("importance map has an empty layer");
    plan.expert_bits.push_back(cluster_bits(row, palette, plan.degenerate));
  }
  return plan;
}

PrecisionPlan assign(const ImportanceMap& map, const BitPalette& palette, int shared_bits, AssignMode mode) {
  switch (mode) {
    case AssignMode::LayerWise: return assign_layer_wise(map, palette, shared_bits);
    case AssignMode::ModelWise: return assign_model_wise(map, palette, shared_bits);
    case AssignMode::Uniform: break;
  }
  throw validation_error("uniform plans are not derived from an importance map");
}

PrecisionPlan uniform_plan(const ModelConfig& config, int expert_bits, int shared_bits) {
  check_shared_bits(shared_bits);
  if (!is_supported_bits(expert_bits))
    throw validation_error("unsupported expert bit width " + std::to_string(expert_bits));
  PrecisionPlan plan;
  plan.mode = AssignMode::Uniform;
  plan.palette = {expert_bits};
  plan.shared_bits = shared_bits;
  plan.layers = config.moe_layers();
  plan.expert_bits.assign(plan.layers.size(), std::vector<int>(config.experts_per_layer, expert_bits));
  return plan;
}

PrecisionPlan invert_plan(const PrecisionPlan& plan, const ImportanceMap& map) {
  if (plan.layers != map.layers || plan.expert_bits.size() != map.values.size())
    throw coverage_error("invert_plan: plan and map cover different layers");
  PrecisionPlan out = plan;
  out.inverted = true;
  using Item = std::pair<std::size_t, std::size_t>;  // (row, expert)
  auto invert_group = [&](std::vector<Item> items) {
    std::vector<int> bits;
    for (auto [r, e] : items) bits.push_back(plan.expert_bits[r][e]);
    std::sort(bits.begin(), bits.end(), std::greater<>());
    // Least important first, so it receives the widest bits.
    std::stable_sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
      return map.values[a.first][a.second] < map.values[b.first][b.second];
    });
    for (std::size_t i = 0; i < items.size(); ++i) out.expert_bits[items[i].first][items[i].second] = bits[i];
  };
  std::vector<Item> all;
  for (std::size_t r = 0; r < map.values.size(); ++r) {
    if (map.values[r].size() != plan.expert_bits[r].size())
      throw coverage_error("invert_plan: plan and map cover different experts");
    std::vector<Item> row;
    for (std::size_t e = 0; e < map.values[r].size(); ++e) row.emplace_back(r, e);
    if (plan.mode == AssignMode::LayerWise) {
      invert_group(row);
    } else {
      all.insert(all.end(), row.begin(), row.end());
    }
  }
  if (plan.mode != AssignMode::LayerWise) invert_group(all);
  return out;
}

void check_plan_covers(const PrecisionPlan& plan, const ModelConfig& config) {
  std::vector<std::string> missing;
  for (std::size_t l : config.moe_layers()) {
    auto it = std::find(plan.layers.begin(), plan.layers.end(), l);
    const std::size_t have =
        it == plan.layers.end() ? 0 : plan.expert_bits[static_cast<std::size_t>(it - plan.layers.begin())].size();
    for (std::size_t e = have; e < config.experts_per_layer; ++e)
      missing.push_back("(" + std::to_string(l) + "," + std::to_string(e) + ")");
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 16; ++i) list += (i ? " " : "") + missing[i];
    if (missing.size() > 16) list += " ...";
    throw coverage_error("plan misses " + std::to_string(missing.size()) + " experts: " + list);
  }
  const auto moe = config.moe_layers();
  for (std::size_t r = 0; r < plan.layers.size(); ++r) {
    if (std::find(moe.begin(), moe.end(), plan.layers[r]) == moe.end() ||
        plan.expert_bits[r].size() != config.experts_per_layer)
      throw coverage_error("plan row for layer " + std::to_string(plan.layers[r]) + " does not match the model");
  }
}

PlanStats plan_stats(const PrecisionPlan& plan, const ModelConfig& config, std::size_t group_size) {
  check_plan_covers(plan, config);
  PlanStats s;
  for (const auto& row : plan.expert_bits)
    for (int b : row) {
      ++s.histogram[b];
      ++s.experts;
    }
  double total = 0.0;
  for (const auto& [b, n] : s.histogram) total += static_cast<double>(b) * static_cast<double>(n);
  s.average_expert_bits = s.experts ? total / static_cast<double>(s.experts) : 0.0;
  s.predicted_size_bytes = kSizeHeaderBytes;
  s.full_size_bytes = kSizeHeaderBytes;
  for (const auto& slot : tensor_slots(config)) {
    const std::size_t numel = slot.rows * slot.cols;
    s.full_size_bytes += full_precision_bytes(numel);
    switch (slot.role) {
      case TensorRole::Router: s.predicted_size_bytes += full_precision_bytes(numel); break;
      case TensorRole::Shared:
        s.predicted_size_bytes += quantized_tensor_bytes(numel, plan.shared_bits, group_size);
        break;
      case TensorRole::Expert:
        s.predicted_size_bytes += quantized_tensor_bytes(numel, plan.bits_for(slot.ref), group_size);
        break;
    }
  }
  return s;
}

nlohmann::json plan_to_json(const PrecisionPlan& p) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["type"] = "precision_plan";
  j["mode"] = mode_name(p.mode);
  j["metric"] = p.source_metric;
  j["palette"] = p.palette;
  j["shared_bits"] = p.shared_bits;
  j["layer_indices"] = p.layers;
  j["layers"] = p.expert_bits;
  j["degenerate"] = p.degenerate;
  j["inverted"] = p.inverted;
  return j;
}

PrecisionPlan plan_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type").get<std::string>() != "precision_plan")
      throw FormatError(0, "JSON document is not a precision plan");
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw FormatError(0, "unsupported precision plan schema_version");
    PrecisionPlan p;
    p.mode = parse_mode(j.at("mode").get<std::string>());
    p.source_metric = j.at("metric").get<std::string>();
    p.palette = j.at("palette").get<std::vector<int>>();
    BitPalette check(p.palette);
    p.shared_bits = j.at("shared_bits").get<int>();
    check_shared_bits(p.shared_bits);
    p.layers = j.at("layer_indices").get<std::vector<std::size_t>>();
    p.expert_bits = j.at("layers").get<std::vector<std::vector<int>>>();
    p.degenerate = j.value("degenerate", false);
    p.inverted = j.value("inverted", false);
    if (p.layers.size() != p.expert_bits.size())
      throw FormatError(0, "precision plan: layer_indices/layers length mismatch");
    for (const auto& row : p.expert_bits)
      for (int b : row)
        if (std::find(p.palette.begin(), p.palette.end(), b) == p.palette.end())
          throw FormatError(0, "precision plan: bit width " + std::to_string(b) + " not in palette");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, std::string("malformed precision plan: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Format) throw;
    throw FormatError(0, std::string("invalid precision plan: ") + e.what());
  }
}

}  // namespace moeprec
