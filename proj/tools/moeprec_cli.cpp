// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

// moeprec command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "moeprec/moeprec.h"

namespace {

/// Carries a status out of a subcommand to main.
struct Failure {
  moeprec_status status;
  std::string message;
};

[[noreturn]] void fail(moeprec_status s, const std::string& message) { throw Failure{s, message}; }

void check(moeprec_status s) {
  if (s != MOEPREC_OK) fail(s, moeprec_last_error());
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Model = std::unique_ptr<moeprec_model, Deleter<moeprec_model, moeprec_model_free>>;
using Tokens = std::unique_ptr<moeprec_tokens, Deleter<moeprec_tokens, moeprec_tokens_free>>;
using Map = std::unique_ptr<moeprec_map, Deleter<moeprec_map, moeprec_map_free>>;
using Plan = std::unique_ptr<moeprec_plan, Deleter<moeprec_plan, moeprec_plan_free>>;
using QModel = std::unique_ptr<moeprec_qmodel, Deleter<moeprec_qmodel, moeprec_qmodel_free>>;

/// Takes ownership of a library-allocated string.
std::string take(char* s) {
  std::string out = s ? s : "";
  moeprec_string_free(s);
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(MOEPREC_ERR_IO, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(MOEPREC_ERR_IO, "cannot write '" + path + "'");
  out << text;
  if (!out.flush()) fail(MOEPREC_ERR_IO, "write to '" + path + "' failed");
}

std::string sibling_csv(const std::string& json_path) {
  return std::filesystem::path(json_path).replace_extension(".csv").string();
}

Model load_model(const std::string& path) {
  moeprec_model* m = nullptr;
  check(moeprec_model_load(path.c_str(), &m));
  return Model(m);
}

/// Calibration source: a token file, or `count` tokens generated from `seed`.
struct TokenSource {
  std::string file;
  std::size_t count = 0;

  bool given() const { return !file.empty() || count > 0; }

  Tokens resolve(std::size_t dim, std::uint64_t seed, moeprec_token_purpose purpose) const {
    moeprec_tokens* t = nullptr;
    if (!file.empty()) {
      check(moeprec_tokens_load(file.c_str(), &t));
      Tokens owned(t);
      if (moeprec_tokens_dim(t) != dim)
        fail(MOEPREC_ERR_SHAPE, "token dim " + std::to_string(moeprec_tokens_dim(t)) + " != model dim " +
                                    std::to_string(dim));
      return owned;
    }
    check(moeprec_tokens_generate(count, dim, seed, purpose, &t));
    return Tokens(t);
  }

  nlohmann::json describe(std::uint64_t seed) const {
    if (!file.empty()) return {{"file", file}};
    return {{"generated", count}, {"seed", seed}};
  }
};

moeprec_model_config model_config(const moeprec_model* m) {
  moeprec_model_config c{};
  check(moeprec_model_config_get(m, &c));
  return c;
}

struct GenerateArgs {
  moeprec_model_config config{4, 8, 2, 32, 64, 0, 0.0};
  bool first_dense = false;
  std::uint64_t seed = 0;
  double heterogeneity = 1.0;
  std::string out;
};

void add_config_flags(CLI::App* cmd, GenerateArgs& a) {
  cmd->add_option("--layers", a.config.num_layers, "Number of layers")->capture_default_str();
  cmd->add_option("--experts", a.config.experts_per_layer, "Experts per MoE layer")->capture_default_str();
  cmd->add_option("--topk", a.config.active_experts, "Active experts per token")->capture_default_str();
  cmd->add_option("--dim", a.config.hidden_dim, "Hidden dimension")->capture_default_str();
  cmd->add_option("--ffn", a.config.ffn_dim, "Expert intermediate dimension")->capture_default_str();
  cmd->add_option("--gate-noise", a.config.gate_noise_sigma, "Router noise sigma")->capture_default_str();
  cmd->add_flag("--first-layer-dense", a.first_dense, "Layer 0 is a dense FFN without a router");
  cmd->add_option("--heterogeneity", a.heterogeneity, "Max/min ratio of expert weight scales")
      ->capture_default_str();
  cmd->add_option("--seed", a.seed, "Master seed")->capture_default_str();
}

void run_generate(GenerateArgs& a) {
  a.config.first_layer_dense = a.first_dense ? 1 : 0;
  moeprec_model* m = nullptr;
  check(moeprec_model_generate(&a.config, a.seed, a.heterogeneity, &m));
  Model owned(m);
  check(moeprec_model_save(m, a.out.c_str()));
}

struct TokensArgs {
  std::size_t count = 128;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  std::string purpose = "calib";
  std::string out;
};

void run_tokens(const TokensArgs& a) {
  moeprec_tokens* t = nullptr;
  check(moeprec_tokens_generate(a.count, a.dim, a.seed,
                                a.purpose == "eval" ? MOEPREC_TOKENS_EVAL : MOEPREC_TOKENS_CALIBRATION, &t));
  Tokens owned(t);
  check(moeprec_tokens_save(t, a.out.c_str()));
}

struct ProfileArgs {
  std::string model;
  std::string metric = "hessian";
  TokenSource calib;
  std::size_t samples = 64;
  std::string probe = "rademacher";
  std::uint64_t seed = 0;
  bool per_layer_norm = false;
  bool no_renorm = false;
  std::optional<double> sigma;
  std::string out;
};

void print_std_error_summary(const nlohmann::json& map) {
  const auto& values = map.at("values");
  const auto& errors = map.at("std_error");
  const auto& layers = map.at("layers");
  double worst = 0.0, sum = 0.0;
  std::size_t n = 0;
  std::string where;
  for (std::size_t i = 0; i < errors.size(); ++i)
    for (std::size_t e = 0; e < errors[i].size(); ++e) {
      const double v = values[i][e].get<double>();
      const double rel = v != 0.0 ? errors[i][e].get<double>() / v : 0.0;
      sum += rel;
      ++n;
      if (rel >= worst) {
        worst = rel;
        where = "layer " + std::to_string(layers[i].get<std::size_t>()) + " expert " + std::to_string(e);
      }
    }
  std::printf("hessian trace std_error over %zu experts: mean relative %.3g, max relative %.3g (%s)\n", n,
              n ? sum / static_cast<double>(n) : 0.0, worst, where.c_str());
}

void run_profile(const ProfileArgs& a) {
  moeprec_profile_options o = moeprec_profile_options_default();
  if (a.metric == "frequency") {
    o.metric = MOEPREC_METRIC_FREQUENCY;
  } else if (a.metric == "combined") {
    o.metric = MOEPREC_METRIC_COMBINED;
  } else {
    o.metric = MOEPREC_METRIC_HESSIAN;
  }
  if (o.metric != MOEPREC_METRIC_HESSIAN && !a.calib.given())
    fail(MOEPREC_ERR_VALIDATION, a.metric + " profiling requires --calib or --calib-tokens");
  o.hessian_samples = a.samples;
  o.probe = a.probe == "gaussian" ? MOEPREC_PROBE_GAUSSIAN : MOEPREC_PROBE_RADEMACHER;
  o.seed = a.seed;
  o.per_layer_norm = a.per_layer_norm ? 1 : 0;
  o.renormalize = a.no_renorm ? 0 : 1;
  o.sigma = a.sigma.value_or(-1.0);

  Model model = load_model(a.model);
  Tokens calib;
  if (o.metric != MOEPREC_METRIC_HESSIAN)
    calib = a.calib.resolve(model_config(model.get()).hidden_dim, a.seed, MOEPREC_TOKENS_CALIBRATION);
  moeprec_map* m = nullptr;
  check(moeprec_profile(model.get(), calib.get(), &o, &m));
  Map map(m);
  char* json = nullptr;
  check(moeprec_map_to_json(m, &json));
  const std::string text = take(json);
  char* csv = nullptr;
  check(moeprec_map_heatmap_csv(m, &csv));
  write_text(a.out, text);
  write_text(sibling_csv(a.out), take(csv));
  if (o.metric == MOEPREC_METRIC_HESSIAN) print_std_error_summary(nlohmann::json::parse(text));
}

struct AssignArgs {
  std::string map;
  std::string mode = "model";
  std::string palette = "2,3,4";
  int shared_bits = 4;
  bool invert = false;
  std::optional<int> uniform;
  std::string model;
  std::string out;
};

void run_assign(const AssignArgs& a) {
  moeprec_plan* p = nullptr;
  if (a.uniform) {
    if (a.model.empty()) fail(MOEPREC_ERR_VALIDATION, "--uniform requires --model");
    Model model = load_model(a.model);
    check(moeprec_plan_uniform(model.get(), *a.uniform, a.shared_bits, &p));
  } else {
    if (a.map.empty()) fail(MOEPREC_ERR_VALIDATION, "--map is required unless --uniform is given");
    moeprec_map* m = nullptr;
    check(moeprec_map_from_json(read_text(a.map).c_str(), &m));
    Map map(m);
    check(moeprec_assign(m, a.palette.c_str(), a.shared_bits,
                         a.mode == "layer" ? MOEPREC_ASSIGN_LAYER : MOEPREC_ASSIGN_MODEL, a.invert ? 1 : 0, &p));
  }
  Plan plan(p);
  char* json = nullptr;
  check(moeprec_plan_to_json(p, &json));
  char* csv = nullptr;
  check(moeprec_plan_heatmap_csv(p, &csv));
  write_text(a.out, take(json));
  write_text(sibling_csv(a.out), take(csv));
}

struct QuantizeArgs {
  std::string model;
  std::string plan;
  std::string mode = "rtn";
  TokenSource calib;
  std::uint64_t seed = 0;
  std::size_t steps = 200;
  double lr = 0.005;
  std::size_t group_size = 32;
  std::string out;
};

void run_quantize(const QuantizeArgs& a) {
  moeprec_quantize_options o = moeprec_quantize_options_default();
  o.mode = a.mode == "signround" ? MOEPREC_QUANT_SIGNROUND : MOEPREC_QUANT_RTN;
  o.group_size = a.group_size;
  o.steps = a.steps;
  o.lr0 = a.lr;
  if (o.mode == MOEPREC_QUANT_SIGNROUND && !a.calib.given())
    fail(MOEPREC_ERR_VALIDATION, "signround requires --calib or --calib-tokens");

  Model model = load_model(a.model);
  moeprec_plan* p = nullptr;
  check(moeprec_plan_from_json(read_text(a.plan).c_str(), &p));
  Plan plan(p);
  Tokens calib;
  if (o.mode == MOEPREC_QUANT_SIGNROUND)
    calib = a.calib.resolve(model_config(model.get()).hidden_dim, a.seed, MOEPREC_TOKENS_CALIBRATION);

  nlohmann::json manifest = {{"tool_version", moeprec_version()},
                             {"command", "quantize"},
                             {"model", a.model},
                             {"plan", a.plan},
                             {"mode", a.mode},
                             {"seed", a.seed},
                             {"group_size", a.group_size}};
  if (o.mode == MOEPREC_QUANT_SIGNROUND) {
    manifest["steps"] = a.steps;
    manifest["lr0"] = a.lr;
    manifest["calib"] = a.calib.describe(a.seed);
  }
  moeprec_qmodel* q = nullptr;
  check(moeprec_quantize(model.get(), p, calib.get(), &o, manifest.dump().c_str(), &q));
  QModel owned(q);
  check(moeprec_qmodel_save(q, a.out.c_str()));
}

struct EvaluateArgs {
  std::string model;
  std::string quantized;
  TokenSource tokens{"", 256};
  std::uint64_t seed = 0;
  bool no_renorm = false;
  std::string out;
};

void run_evaluate(const EvaluateArgs& a) {
  Model model = load_model(a.model);
  moeprec_qmodel* q = nullptr;
  check(moeprec_qmodel_load(a.quantized.c_str(), &q));
  QModel owned(q);
  Tokens tokens = a.tokens.resolve(model_config(model.get()).hidden_dim, a.seed, MOEPREC_TOKENS_EVAL);
  char* json = nullptr;
  char* table = nullptr;
  check(moeprec_evaluate(model.get(), q, tokens.get(), a.no_renorm ? 0 : 1, &json, &table));
  const std::string report = take(json);
  if (!a.out.empty()) write_text(a.out, report);
  std::fputs(take(table).c_str(), stdout);
}

struct RunArgs {
  GenerateArgs gen;
  std::string manifest;
  std::string out;
};

void run_run(RunArgs& a) {
  std::string text;
  if (!a.manifest.empty()) {
    text = read_text(a.manifest);
  } else {
    a.gen.config.first_layer_dense = a.gen.first_dense ? 1 : 0;
    char* m = nullptr;
    check(moeprec_default_manifest(&a.gen.config, a.gen.seed, &m));
    auto j = nlohmann::json::parse(take(m));
    j["heterogeneity"] = a.gen.heterogeneity;
    text = j.dump();
  }
  check(moeprec_run(text.c_str(), a.out.c_str()));
}

int report_failure(moeprec_status s, const std::string& message) {
  std::string line = message;
  for (char& c : line)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "error[%s]: %s\n", moeprec_status_name(s), line.c_str());
  return moeprec_exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-precision quantization planner for mixture-of-experts models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", moeprec_version());
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a seeded synthetic MoE model");
  add_config_flags(generate, gen);
  generate->add_option("-o,--out", gen.out, "Output model file")->required();

  TokensArgs tok;
  auto* tokens = app.add_subcommand("tokens", "Write seeded calibration or evaluation tokens");
  tokens->add_option("--count", tok.count)->capture_default_str();
  tokens->add_option("--dim", tok.dim)->capture_default_str();
  tokens->add_option("--seed", tok.seed)->capture_default_str();
  tokens->add_option("--purpose", tok.purpose)->check(CLI::IsMember({"calib", "eval"}))->capture_default_str();
  tokens->add_option("-o,--out", tok.out)->required();

  ProfileArgs prof;
  auto* profile = app.add_subcommand("profile", "Compute a per-expert importance map");
  profile->add_option("--model", prof.model)->required();
  profile->add_option("--metric", prof.metric)
      ->check(CLI::IsMember({"frequency", "hessian", "combined"}))
      ->capture_default_str();
  profile->add_option("--calib", prof.calib.file, "Calibration token file");
  profile->add_option("--calib-tokens", prof.calib.count, "Generate this many calibration tokens from --seed");
  profile->add_option("--samples", prof.samples, "Hutchinson probe count")->capture_default_str();
  profile->add_option("--probe", prof.probe)->check(CLI::IsMember({"rademacher", "gaussian"}))->capture_default_str();
  profile->add_option("--seed", prof.seed)->capture_default_str();
  profile->add_flag("--per-layer-norm", prof.per_layer_norm, "Normalize the combined metric per layer");
  profile->add_flag("--no-renorm", prof.no_renorm, "Use raw softmax weights for the selected experts");
  profile->add_option("--sigma", prof.sigma, "Router noise sigma for the frequency pass");
  profile->add_option("-o,--out", prof.out, "Output JSON; the CSV heatmap goes next to it")->required();

  AssignArgs asg;
  auto* assign = app.add_subcommand("assign", "Cluster an importance map into a precision plan");
  assign->add_option("--map", asg.map);
  assign->add_option("--mode", asg.mode)
      ->check(CLI::IsMember({"layer", "model"}))
      ->capture_default_str();
  assign->add_option("--palette", asg.palette)->capture_default_str();
  assign->add_option("--shared-bits", asg.shared_bits)->capture_default_str();
  assign->add_flag("--invert", asg.invert, "Reverse bit order across importance (diagnostic baseline)");
  assign->add_option("--uniform", asg.uniform, "Every expert at this width (needs --model)");
  assign->add_option("--model", asg.model);
  assign->add_option("-o,--out", asg.out, "Output JSON; the CSV heatmap goes next to it")->required();

  QuantizeArgs qa;
  auto* quantize = app.add_subcommand("quantize", "Quantize a model according to a plan");
  quantize->add_option("--model", qa.model)->required();
  quantize->add_option("--plan", qa.plan)->required();
  quantize->add_option("--mode", qa.mode)->check(CLI::IsMember({"rtn", "signround"}))->capture_default_str();
  quantize->add_option("--calib", qa.calib.file);
  quantize->add_option("--calib-tokens", qa.calib.count);
  quantize->add_option("--seed", qa.seed)->capture_default_str();
  quantize->add_option("--steps", qa.steps)->capture_default_str();
  quantize->add_option("--lr", qa.lr)->capture_default_str();
  quantize->add_option("--group-size", qa.group_size)->capture_default_str();
  quantize->add_option("-o,--out", qa.out)->required();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Compare a quantized model against the full model");
  evaluate->add_option("--model", ev.model)->required();
  evaluate->add_option("--quantized", ev.quantized)->required();
  evaluate->add_option("--tokens", ev.tokens.file, "Evaluation token file");
  evaluate->add_option("--eval-tokens", ev.tokens.count, "Generate this many tokens from --seed")
      ->capture_default_str();
  evaluate->add_option("--seed", ev.seed)->capture_default_str();
  evaluate->add_flag("--no-renorm", ev.no_renorm);
  evaluate->add_option("-o,--out", ev.out, "Write the JSON report here");

  std::string report_run, report_out;
  auto* report = app.add_subcommand("report", "Write heatmap CSVs and summary.md for a run directory");
  report->add_option("--run", report_run)->required();
  report->add_option("-o,--out", report_out)->required();

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run the whole pipeline from a manifest or generation flags");
  add_config_flags(run, ra.gen);
  run->add_option("--manifest", ra.manifest, "Run manifest JSON");
  run->add_option("-o,--out", ra.out, "Run directory")->required();

  std::string check_path;
  auto* check_cmd = app.add_subcommand("check", "Validate a container file");
  check_cmd->add_option("file", check_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_failure(MOEPREC_ERR_VALIDATION, e.what());
  }

  moeprec_set_threads(threads);
  try {
    if (*generate) run_generate(gen);
    if (*tokens) run_tokens(tok);
    if (*profile) run_profile(prof);
    if (*assign) run_assign(asg);
    if (*quantize) run_quantize(qa);
    if (*evaluate) run_evaluate(ev);
    if (*report) check(moeprec_report(report_run.c_str(), report_out.c_str()));
    if (*run) run_run(ra);
    if (*check_cmd) check(moeprec_file_check(check_path.c_str()));
  } catch (const Failure& f) {
    return report_failure(f.status, f.message);
  } catch (const std::exception& e) {
    return report_failure(MOEPREC_ERR_INTERNAL, e.what());
  }
  return 0;
}
