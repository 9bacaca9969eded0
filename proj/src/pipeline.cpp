// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "moeprec/container.hpp"
#include "moeprec/model_io.hpp"

namespace fs = std::filesystem;

namespace moeprec {

std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

nlohmann::json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(e.byte, "'" + path + "' is not valid JSON");
  }
}

namespace {

double mse(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw shape_error("mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

nlohmann::json plan_summary(const PrecisionPlan& p) {
  return {{"mode", mode_name(p.mode)},     {"metric", p.source_metric}, {"palette", p.palette},
          {"shared_bits", p.shared_bits},  {"inverted", p.inverted},    {"degenerate", p.degenerate}};
}

}  // namespace

EvalReport evaluate(const MoEModel& full, const QuantizedModel& q, const CalibrationSet& tokens, bool renormalize) {
  if (!(full.config == q.config)) throw coverage_error("evaluate: full and quantized models differ in structure");
  const MoEModel deq = dequantize_model(q);
  ForwardOptions fo;
  fo.record_hidden = true;
  fo.sigma = 0.0;
  fo.renormalize = renormalize;
  const ForwardResult a = model_forward(full, tokens.tokens, fo);
  const ForwardResult b = model_forward(deq, tokens.tokens, fo);
  EvalReport r;
  r.output_mse = mse(a.outputs, b.outputs);
  for (std::size_t l = 0; l < a.layer_outputs.size(); ++l) r.layer_mse.push_back(mse(a.layer_outputs[l], b.layer_outputs[l]));
  r.full_size_bytes = serialized_size(full);
  r.quantized_size_bytes = serialized_size(q);
  const PlanStats stats = plan_stats(q.plan, q.config, q.options.group_size);
  r.average_expert_bits = stats.average_expert_bits;
  r.bit_histogram = stats.histogram;
  r.plan_summary = plan_summary(q.plan);
  r.quantizer = quant_mode_name(q.options.mode);
  r.model_id = model_fingerprint(full);
  r.eval_tokens = tokens.tokens.rows();
  r.eval_seed = tokens.seed;
  return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [b, n] : r.bit_histogram) hist[std::to_string(b)] = n;
  return {{"schema_version", kSchemaVersion},
          {"type", "eval_report"},
          {"output_mse", r.output_mse},
          {"layer_mse", r.layer_mse},
          {"sizes", {{"full_bytes", r.full_size_bytes}, {"quantized_bytes", r.quantized_size_bytes}}},
          {"average_expert_bits", r.average_expert_bits},
          {"bit_histogram", hist},
          {"plan", r.plan_summary},
          {"quantizer", r.quantizer},
          {"model_id", r.model_id},
          {"eval", {{"tokens", r.eval_tokens}, {"seed", r.eval_seed}}}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type").get<std::string>() != "eval_report") throw FormatError(0, "JSON document is not an eval report");
    EvalReport r;
    r.output_mse = j.at("output_mse").get<double>();
    r.layer_mse = j.at("layer_mse").get<std::vector<double>>();
    r.full_size_bytes = j.at("sizes").at("full_bytes").get<std::uint64_t>();
    r.quantized_size_bytes = j.at("sizes").at("quantized_bytes").get<std::uint64_t>();
    r.average_expert_bits = j.at("average_expert_bits").get<double>();
    for (auto it = j.at("bit_histogram").begin(); it != j.at("bit_histogram").end(); ++it)
      r.bit_histogram[std::stoi(it.key())] = it.value().get<std::size_t>();
    r.plan_summary = j.at("plan");
    r.quantizer = j.at("quantizer").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.eval_tokens = j.at("eval").at("tokens").get<std::size_t>();
    r.eval_seed = j.at("eval").at("seed").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, std::string("malformed eval report: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(0, std::string("malformed eval report: ") + e.what());
  }
}

std::string report_table(const EvalReport& r) {
  char line[256];
  std::string out;
  auto add = [&](const char* key, const std::string& value) {
    std::snprintf(line, sizeof line, "%-22s %s\n", key, value.c_str());
    out += line;
  };
  const auto& p = r.plan_summary;
  add("plan", p.value("metric", std::string("?")) + " / " + p.value("mode", std::string("?")) +
                  (p.value("inverted", false) ? " (inverted)" : ""));
  add("quantizer", r.quantizer);
  add("output MSE", format_number(r.output_mse));
  add("average expert bits", format_number(r.average_expert_bits));
  std::string hist;
  for (const auto& [b, n] : r.bit_histogram) hist += (hist.empty() ? "" : "  ") + std::to_string(b) + "b:" + std::to_string(n);
  add("bit histogram", hist);
  add("size (full)", std::to_string(r.full_size_bytes) + " B");
  add("size (quantized)", std::to_string(r.quantized_size_bytes) + " B");
  for (std::size_t l = 0; l < r.layer_mse.size(); ++l) {
    const std::string key = "layer " + std::to_string(l) + " MSE";
    add(key.c_str(), format_number(r.layer_mse[l]));
  }
  return out;
}

namespace {

std::string metric_label(const std::string& metric) {
  if (metric == "frequency") return "Activation Frequency";
  if (metric == "hessian") return "Hessian Sensitivity";
  if (metric == "combined") return "Frequency x Hessian";
  return "Uniform";
}

std::string mode_label(const std::string& mode) {
  if (mode == "layer_wise") return "Layer-wise";
  if (mode == "model_wise") return "Model-wise";
  return "-";
}

}  // namespace

std::vector<std::string> write_report(const std::string& run_dir, const std::string& out_dir) {
  if (!fs::is_directory(run_dir)) throw Error(ErrorKind::Io, "'" + run_dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(run_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  fs::create_directories(out_dir);

  std::vector<std::string> written;
  std::string maps_md, plans_md, evals_md;
  struct EvalRow {
    std::string label;
    std::string file;
    EvalReport report;
  };
  std::vector<EvalRow> evals;
  for (const auto& path : files) {
    const nlohmann::json j = read_json_file(path.string());
    const std::string type = j.is_object() ? j.value("type", std::string()) : std::string();
    const std::string stem = path.stem().string();
    if (type == "importance_map") {
      const ImportanceMap m = map_from_json(j);
      const fs::path csv = fs::path(out_dir) / (stem + ".heatmap.csv");
      write_text_file(csv.string(), heatmap_csv(m.layers, m.values));
      written.push_back(csv.string());
      double lo = 0.0, hi = 0.0;
      bool first = true;
      for (const auto& row : m.values)
        for (double v : row) {
          lo = first ? v : std::min(lo, v);
          hi = first ? v : std::max(hi, v);
          first = false;
        }
      maps_md += "| " + stem + " | " + metric_name(m.metric) + " | " + std::to_string(m.layers.size()) + " x " +
                 std::to_string(m.max_experts()) + " | " + format_number(lo) + " | " + format_number(hi) + " |\n";
    } else if (type == "precision_plan") {
      const PrecisionPlan p = plan_from_json(j);
      std::vector<std::vector<double>> bits;
      std::map<int, std::size_t> hist;
      std::size_t count = 0;
      double total = 0.0;
      for (const auto& row : p.expert_bits) {
        bits.emplace_back(row.begin(), row.end());
        for (int b : row) {
          ++hist[b];
          ++count;
          total += b;
        }
      }
      const fs::path csv = fs::path(out_dir) / (stem + ".bits.csv");
      write_text_file(csv.string(), heatmap_csv(p.layers, bits));
      written.push_back(csv.string());
      std::string h;
      for (const auto& [b, n] : hist) h += (h.empty() ? "" : " ") + std::to_string(b) + "b:" + std::to_string(n);
      plans_md += "| " + stem + " | " + metric_label(p.source_metric) + " | " + mode_label(mode_name(p.mode)) +
                  (p.inverted ? " (inverted)" : "") + " | " + format_number(count ? total / count : 0.0) + " | " +
                  h + " |\n";
    } else if (type == "eval_report") {
      EvalReport r = report_from_json(j);
      const auto& ps = r.plan_summary;
      std::string label = metric_label(ps.value("metric", std::string())) + " / " +
                          mode_label(ps.value("mode", std::string()));
      if (ps.value("mode", std::string()) == "uniform") {
        const auto pal = ps.value("palette", std::vector<int>{});
        label = "Uniform " + (pal.empty() ? std::string("?") : std::to_string(pal.front())) + "-bit";
      }
      if (ps.value("inverted", false)) label += " (inverted)";
      evals.push_back({label, stem, std::move(r)});
    }
  }
  std::stable_sort(evals.begin(), evals.end(), [](const EvalRow& a, const EvalRow& b) { return a.label < b.label; });
  for (const auto& e : evals) {
    evals_md += "| " + e.label + " | " + e.report.quantizer + " | " + format_number(e.report.average_expert_bits) +
                " | " + std::to_string(e.report.quantized_size_bytes) + " | " + format_number(e.report.output_mse) +
                " | " + e.file + " |\n";
  }

  std::string md = "# Run summary\n\n";
  md += "## Importance maps\n\n| file | metric | layers x experts | min | max |\n|---|---|---|---|---|\n" + maps_md + "\n";
  md += "## Precision plans\n\n| file | metric | assignment | avg bits | histogram |\n|---|---|---|---|---|\n" +
        plans_md + "\n";
  md += "## Evaluation\n\n| variant | quantizer | avg expert bits | size (B) | output MSE | report |\n"
        "|---|---|---|---|---|---|\n" +
        evals_md;
  const fs::path summary = fs::path(out_dir) / "summary.md";
  write_text_file(summary.string(), md);
  written.push_back(summary.string());
  return written;
}

nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json metrics = nlohmann::json::array();
  for (Metric x : m.metrics) metrics.push_back(metric_name(x));
  nlohmann::json modes = nlohmann::json::array();
  for (AssignMode x : m.modes) modes.push_back(mode_name(x));
  nlohmann::json j = {
      {"schema_version", kSchemaVersion},
      {"type", "run_manifest"},
      {"tool_version", kToolVersion},
      {"seed", m.seed},
      {"model", to_json(m.model)},
      {"heterogeneity", m.heterogeneity},
      {"calib_tokens", m.calib_tokens},
      {"eval_tokens", m.eval_tokens},
      {"metrics", metrics},
      {"modes", modes},
      {"palette", m.palette},
      {"shared_bits", m.shared_bits},
      {"hessian", {{"samples", m.hessian_samples}, {"probe", probe_name(m.probe)}}},
      {"normalization", m.normalization == NormalizationScope::ModelWide ? "model" : "layer"},
      {"quantizer",
       {{"mode", quant_mode_name(m.quantizer.mode)},
        {"group_size", m.quantizer.group_size},
        {"steps", m.quantizer.signround.steps},
        {"lr0", m.quantizer.signround.lr0}}},
      {"renormalize", m.renormalize},
      {"sigma", m.sigma},
      {"uniform_baseline", m.uniform_baseline},
      {"inverted_baseline", m.inverted_baseline}};
  if (m.model_path) j["model_path"] = *m.model_path;
  return j;
}

RunManifest manifest_from_json(const nlohmann::json& patch) {
  if (!patch.is_object()) throw FormatError(0, "run manifest must be a JSON object");
  // Keys missing from the input take their defaults.
  nlohmann::json j = manifest_to_json(RunManifest{});
  j.merge_patch(patch);
  try {
    RunManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.model = config_from_json(j.at("model"));
    m.heterogeneity = j.at("heterogeneity").get<double>();
    if (j.contains("model_path")) m.model_path = j.at("model_path").get<std::string>();
    m.calib_tokens = j.at("calib_tokens").get<std::size_t>();
    m.eval_tokens = j.at("eval_tokens").get<std::size_t>();
    m.metrics.clear();
    for (const auto& x : j.at("metrics")) m.metrics.push_back(parse_metric(x.get<std::string>()));
    m.modes.clear();
    for (const auto& x : j.at("modes")) m.modes.push_back(parse_mode(x.get<std::string>()));
    m.palette = j.at("palette").get<std::vector<int>>();
    m.shared_bits = j.at("shared_bits").get<int>();
    m.hessian_samples = j.at("hessian").at("samples").get<std::size_t>();
    m.probe = parse_probe(j.at("hessian").at("probe").get<std::string>());
    m.normalization =
        j.at("normalization").get<std::string>() == "layer" ? NormalizationScope::PerLayer : NormalizationScope::ModelWide;
    const auto& q = j.at("quantizer");
    m.quantizer.mode = parse_quant_mode(q.at("mode").get<std::string>());
    m.quantizer.group_size = q.at("group_size").get<std::size_t>();
    m.quantizer.signround.steps = q.at("steps").get<std::size_t>();
    m.quantizer.signround.lr0 = q.at("lr0").get<double>();
    m.renormalize = j.at("renormalize").get<bool>();
    m.sigma = j.at("sigma").get<double>();
    m.uniform_baseline = j.at("uniform_baseline").get<bool>();
    m.inverted_baseline = j.at("inverted_baseline").get<bool>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, std::string("malformed run manifest: ") + e.what());
  }
}

std::vector<std::string> run_pipeline(const RunManifest& manifest, const std::string& out_dir) {
  BitPalette palette(manifest.palette);
  if (manifest.quantizer.group_size < 1) throw validation_error("group_size must be >= 1");
  if (manifest.hessian_samples < 1) throw validation_error("hessian samples must be >= 1");
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  std::vector<std::string> written;
  auto emit_text = [&](const std::string& name, const std::string& text) {
    write_text_file((dir / name).string(), text);
    written.push_back((dir / name).string());
  };
  const nlohmann::json manifest_json = manifest_to_json(manifest);
  emit_text("manifest.json", json_text(manifest_json));

  MoEModel model;
  if (manifest.model_path) {
    model = load_model(*manifest.model_path);
  } else {
    model = generate_synthetic(manifest.model, manifest.seed, manifest.heterogeneity);
    save_model(model, (dir / "model.mopq").string());
    written.push_back((dir / "model.mopq").string());
  }
  const std::size_t d = model.config.hidden_dim;
  const CalibrationSet calib = generate_tokens(manifest.calib_tokens, d, manifest.seed, StreamPurpose::Calibration);
  const CalibrationSet eval = generate_tokens(manifest.eval_tokens, d, manifest.seed, StreamPurpose::EvalTokens);
  save_tokens(calib, (dir / "calib.mopq").string());
  save_tokens(eval, (dir / "eval.mopq").string());
  written.push_back((dir / "calib.mopq").string());
  written.push_back((dir / "eval.mopq").string());

  ForwardOptions fo;
  fo.sigma = manifest.sigma;
  fo.noise_seed = manifest.seed;
  fo.renormalize = manifest.renormalize;
  HessianOptions ho;
  ho.samples = manifest.hessian_samples;
  ho.probe = manifest.probe;
  ho.seed = manifest.seed;

  std::optional<ImportanceMap> freq, hess;
  auto need = [&](Metric m) {
    return std::find(manifest.metrics.begin(), manifest.metrics.end(), m) != manifest.metrics.end();
  };
  const bool want_combined = need(Metric::Combined);
  if (need(Metric::Frequency) || want_combined) freq = frequency_map(model, calib, fo);
  if (need(Metric::Hessian) || want_combined) hess = hessian_map(model, ho);

  std::vector<std::pair<std::string, ImportanceMap>> maps;
  if (need(Metric::Frequency)) maps.emplace_back("frequency", *freq);
  if (need(Metric::Hessian)) maps.emplace_back("hessian", *hess);
  if (want_combined) maps.emplace_back("combined", combined_map(*freq, *hess, manifest.normalization));

  auto quantize_and_eval = [&](const std::string& tag, const PrecisionPlan& plan) {
    emit_text("plan-" + tag + ".json", json_text(plan_to_json(plan)));
    std::vector<std::vector<double>> bits;
    for (const auto& row : plan.expert_bits) bits.emplace_back(row.begin(), row.end());
    emit_text("plan-" + tag + ".csv", heatmap_csv(plan.layers, bits));
    QuantizedModel q = quantize_model(model, plan, &calib, manifest.quantizer);
    q.manifest = manifest_json;
    save_quantized(q, (dir / ("q-" + tag + ".mopq")).string());
    written.push_back((dir / ("q-" + tag + ".mopq")).string());
    const EvalReport r = evaluate(model, q, eval, manifest.renormalize);
    emit_text("eval-" + tag + ".json", json_text(report_to_json(r)));
  };

  for (const auto& [name, map] : maps) {
    emit_text(name + ".json", json_text(map_to_json(map)));
    emit_text(name + ".csv", heatmap_csv(map.layers, map.values));
    for (AssignMode mode : manifest.modes) {
      const PrecisionPlan plan = assign(map, palette, manifest.shared_bits, mode);
      const std::string tag = name + "-" + (mode == AssignMode::LayerWise ? "layer" : "model");
      quantize_and_eval(tag, plan);
      if (manifest.inverted_baseline && name == "hessian" && mode == AssignMode::ModelWise)
        quantize_and_eval(tag + "-inverted", invert_plan(plan, map));
    }
  }
  if (manifest.uniform_baseline) {
    for (int b : {palette.min(), palette.max()})
      quantize_and_eval("uniform-" + std::to_string(b), uniform_plan(model.config, b, manifest.shared_bits));
  }
  const auto report_files = write_report(out_dir, (dir / "report").string());
  written.insert(written.end(), report_files.begin(), report_files.end());
  return written;
}

}  // namespace moeprec
