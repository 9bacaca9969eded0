// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/moeprec.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <new>
#include <string>
#include <thread>

#include "moeprec/container.hpp"
#include "moeprec/model_io.hpp"
#include "moeprec/parallel.hpp"
#include "moeprec/pipeline.hpp"
#include "moeprec/sensitivity.hpp"

using namespace moeprec;

struct moeprec_model {
  MoEModel value;
};
struct moeprec_tokens {
  CalibrationSet value;
};
struct moeprec_map {
  ImportanceMap value;
};
struct moeprec_plan {
  PrecisionPlan value;
};
struct moeprec_qmodel {
  QuantizedModel value;
};

namespace {

thread_local std::string g_last_error;

moeprec_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return MOEPREC_ERR_VALIDATION;
    case ErrorKind::Shape: return MOEPREC_ERR_SHAPE;
    case ErrorKind::Coverage: return MOEPREC_ERR_COVERAGE;
    case ErrorKind::Format: return MOEPREC_ERR_FORMAT;
    case ErrorKind::Degenerate: return MOEPREC_ERR_DEGENERATE;
    case ErrorKind::Io: return MOEPREC_ERR_IO;
  }
  return MOEPREC_ERR_INTERNAL;
}

template <class F>
moeprec_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return MOEPREC_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MOEPREC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MOEPREC_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return MOEPREC_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw validation_error(std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_json(const char* text) {
  require(text, "json");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(e.byte, "invalid JSON");
  }
}

ModelConfig to_config(const moeprec_model_config& c) {
  ModelConfig m;
  m.num_layers = c.num_layers;
  m.experts_per_layer = c.experts_per_layer;
  m.active_experts = c.active_experts;
  m.hidden_dim = c.hidden_dim;
  m.ffn_dim = c.ffn_dim;
  m.first_layer_dense = c.first_layer_dense != 0;
  m.gate_noise_sigma = c.gate_noise_sigma;
  return m;
}

std::vector<std::vector<double>> plan_grid(const PrecisionPlan& p) {
  std::vector<std::vector<double>> grid;
  for (const auto& row : p.expert_bits) grid.emplace_back(row.begin(), row.end());
  return grid;
}

void check_container(const Container& c) {
  const std::string kind = c.meta.is_object() ? c.meta.value("kind", std::string()) : std::string();
  if (kind == "model") {
    (void)model_from_container(c);
  } else if (kind == "tokens") {
    (void)tokens_from_container(c);
  } else if (kind == "quantized_model") {
    (void)quantized_from_container(c);
  } else {
    throw FormatError(kPreambleBytes, "unknown container kind '" + kind + "'");
  }
}

}  // namespace

extern "C" {

const char* moeprec_version(void) { return kToolVersion; }
const char* moeprec_last_error(void) { return g_last_error.c_str(); }

const char* moeprec_status_name(moeprec_status s) {
  switch (s) {
    case MOEPREC_OK: return "ok";
    case MOEPREC_ERR_VALIDATION: return "validation";
    case MOEPREC_ERR_SHAPE: return "shape";
    case MOEPREC_ERR_COVERAGE: return "coverage";
    case MOEPREC_ERR_FORMAT: return "format";
    case MOEPREC_ERR_DEGENERATE: return "degenerate";
    case MOEPREC_ERR_IO: return "io";
    case MOEPREC_ERR_INTERNAL: return "internal";
  }
  return "internal";
}

int moeprec_exit_code(moeprec_status s) {
  switch (s) {
    case MOEPREC_OK: return 0;
    case MOEPREC_ERR_VALIDATION:
    case MOEPREC_ERR_SHAPE:
    case MOEPREC_ERR_COVERAGE: return 2;
    case MOEPREC_ERR_FORMAT:
    case MOEPREC_ERR_IO: return 3;
    case MOEPREC_ERR_DEGENERATE: return 4;
    case MOEPREC_ERR_INTERNAL: return 1;
  }
  return 1;
}

void moeprec_set_threads(size_t n) {
  set_thread_count(n == 0 ? std::max(1u, std::thread::hardware_concurrency()) : n);
}
void moeprec_string_free(char* s) { std::free(s); }

moeprec_status moeprec_model_generate(const moeprec_model_config* config, uint64_t seed, double heterogeneity,
                                      moeprec_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = new moeprec_model{generate_synthetic(to_config(*config), seed, heterogeneity)};
  });
}

moeprec_status moeprec_model_load(const char* path, moeprec_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new moeprec_model{load_model(path)};
  });
}

moeprec_status moeprec_model_save(const moeprec_model* m, const char* path) {
  return guarded([&] {
    require(m, "model");
    require(path, "path");
    save_model(m->value, path);
  });
}

moeprec_status moeprec_model_config_get(const moeprec_model* m, moeprec_model_config* out) {
  return guarded([&] {
    require(m, "model");
    require(out, "out");
    const ModelConfig& c = m->value.config;
    *out = {c.num_layers, c.experts_per_layer, c.active_experts, c.hidden_dim,
            c.ffn_dim,    c.first_layer_dense ? 1 : 0, c.gate_noise_sigma};
  });
}

size_t moeprec_model_tensor_count(const moeprec_model* m) {
  return m == nullptr ? 0 : tensor_slots(m->value.config).size();
}

moeprec_status moeprec_model_tensor_name(const moeprec_model* m, size_t index, char** out) {
  return guarded([&] {
    require(m, "model");
    require(out, "out");
    const auto slots = tensor_slots(m->value.config);
    if (index >= slots.size()) throw validation_error("tensor index out of range");
    *out = dup_string(slots[index].name);
  });
}

void moeprec_model_free(moeprec_model* m) { delete m; }

moeprec_status moeprec_tokens_generate(size_t count, size_t dim, uint64_t seed, moeprec_token_purpose purpose,
                                       moeprec_tokens** out) {
  return guarded([&] {
    require(out, "out");
    if (count < 1 || dim < 1) throw validation_error("token count and dim must be >= 1");
    const StreamPurpose p = purpose == MOEPREC_TOKENS_EVAL ? StreamPurpose::EvalTokens : StreamPurpose::Calibration;
    *out = new moeprec_tokens{generate_tokens(count, dim, seed, p)};
  });
}

moeprec_status moeprec_tokens_load(const char* path, moeprec_tokens** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new moeprec_tokens{load_tokens(path)};
  });
}

moeprec_status moeprec_tokens_save(const moeprec_tokens* t, const char* path) {
  return guarded([&] {
    require(t, "tokens");
    require(path, "path");
    save_tokens(t->value, path);
  });
}

size_t moeprec_tokens_count(const moeprec_tokens* t) { return t == nullptr ? 0 : t->value.tokens.rows(); }
size_t moeprec_tokens_dim(const moeprec_tokens* t) { return t == nullptr ? 0 : t->value.tokens.cols(); }
void moeprec_tokens_free(moeprec_tokens* t) { delete t; }

moeprec_profile_options moeprec_profile_options_default(void) {
  moeprec_profile_options o;
  o.metric = MOEPREC_METRIC_HESSIAN;
  o.hessian_samples = kDefaultHutchinsonSamples;
  o.probe = MOEPREC_PROBE_RADEMACHER;
  o.seed = 0;
  o.per_layer_norm = 0;
  o.renormalize = 1;
  o.sigma = -1.0;
  return o;
}

moeprec_status moeprec_profile(const moeprec_model* m, const moeprec_tokens* calib,
                               const moeprec_profile_options* opts, moeprec_map** out) {
  return guarded([&] {
    require(m, "model");
    require(opts, "options");
    require(out, "out");
    const bool needs_calib = opts->metric != MOEPREC_METRIC_HESSIAN;
    if (needs_calib && calib == nullptr)
      throw validation_error(std::string(opts->metric == MOEPREC_METRIC_COMBINED ? "combined" : "frequency") +
                             " profiling requires calibration tokens");
    if (opts->hessian_samples < 1) throw validation_error("hessian samples must be >= 1");
    ForwardOptions fo;
    fo.renormalize = opts->renormalize != 0;
    if (opts->sigma >= 0.0) fo.sigma = opts->sigma;
    fo.noise_seed = opts->seed;
    HessianOptions ho;
    ho.samples = opts->hessian_samples;
    ho.probe = opts->probe == MOEPREC_PROBE_GAUSSIAN ? ProbeDistribution::Gaussian : ProbeDistribution::Rademacher;
    ho.seed = opts->seed;
    switch (opts->metric) {
      case MOEPREC_METRIC_FREQUENCY:
        *out = new moeprec_map{frequency_map(m->value, calib->value, fo)};
        break;
      case MOEPREC_METRIC_HESSIAN:
        *out = new moeprec_map{hessian_map(m->value, ho)};
        break;
      case MOEPREC_METRIC_COMBINED: {
        const NormalizationScope scope =
            opts->per_layer_norm ? NormalizationScope::PerLayer : NormalizationScope::ModelWide;
        *out = new moeprec_map{
            combined_map(frequency_map(m->value, calib->value, fo), hessian_map(m->value, ho), scope)};
        break;
      }
      default:
        throw validation_error("unknown metric");
    }
  });
}

moeprec_status moeprec_map_from_json(const char* json, moeprec_map** out) {
  return guarded([&] {
    require(out, "out");
    *out = new moeprec_map{map_from_json(parse_json(json))};
  });
}

moeprec_status moeprec_map_to_json(const moeprec_map* m, char** out) {
  return guarded([&] {
    require(m, "map");
    require(out, "out");
    *out = dup_string(json_text(map_to_json(m->value)));
  });
}

moeprec_status moeprec_map_heatmap_csv(const moeprec_map* m, char** out) {
  return guarded([&] {
    require(m, "map");
    require(out, "out");
    *out = dup_string(heatmap_csv(m->value.layers, m->value.values));
  });
}

void moeprec_map_free(moeprec_map* m) { delete m; }

moeprec_status moeprec_assign(const moeprec_map* map, const char* palette, int shared_bits, moeprec_assign_mode mode,
                              int invert, moeprec_plan** out) {
  return guarded([&] {
    require(map, "map");
    require(palette, "palette");
    require(out, "out");
    const AssignMode m = mode == MOEPREC_ASSIGN_LAYER ? AssignMode::LayerWise : AssignMode::ModelWise;
    PrecisionPlan plan = assign(map->value, BitPalette::parse(palette), shared_bits, m);
    if (invert) plan = invert_plan(plan, map->value);
    *out = new moeprec_plan{std::move(plan)};
  });
}

moeprec_status moeprec_plan_uniform(const moeprec_model* m, int expert_bits, int shared_bits, moeprec_plan** out) {
  return guarded([&] {
    require(m, "model");
    require(out, "out");
    *out = new moeprec_plan{uniform_plan(m->value.config, expert_bits, shared_bits)};
  });
}

moeprec_status moeprec_plan_from_json(const char* json, moeprec_plan** out) {
  return guarded([&] {
    require(out, "out");
    *out = new moeprec_plan{plan_from_json(parse_json(json))};
  });
}

moeprec_status moeprec_plan_to_json(const moeprec_plan* p, char** out) {
  return guarded([&] {
    require(p, "plan");
    require(out, "out");
    *out = dup_string(json_text(plan_to_json(p->value)));
  });
}

moeprec_status moeprec_plan_heatmap_csv(const moeprec_plan* p, char** out) {
  return guarded([&] {
    require(p, "plan");
    require(out, "out");
    *out = dup_string(heatmap_csv(p->value.layers, plan_grid(p->value)));
  });
}

void moeprec_plan_free(moeprec_plan* p) { delete p; }

moeprec_quantize_options moeprec_quantize_options_default(void) {
  const QuantizeOptions d;
  moeprec_quantize_options o;
  o.mode = MOEPREC_QUANT_RTN;
  o.group_size = d.group_size;
  o.steps = d.signround.steps;
  o.lr0 = d.signround.lr0;
  return o;
}

moeprec_status moeprec_quantize(const moeprec_model* m, const moeprec_plan* plan, const moeprec_tokens* calib,
                                const moeprec_quantize_options* opts, const char* manifest_json,
                                moeprec_qmodel** out) {
  return guarded([&] {
    require(m, "model");
    require(plan, "plan");
    require(opts, "options");
    require(out, "out");
    QuantizeOptions qo;
    qo.mode = opts->mode == MOEPREC_QUANT_SIGNROUND ? QuantMode::SignRound : QuantMode::Rtn;
    qo.group_size = opts->group_size;
    qo.signround.steps = opts->steps;
    qo.signround.lr0 = opts->lr0;
    QuantizedModel q = quantize_model(m->value, plan->value, calib ? &calib->value : nullptr, qo);
    if (manifest_json != nullptr) q.manifest = parse_json(manifest_json);
    *out = new moeprec_qmodel{std::move(q)};
  });
}

moeprec_status moeprec_qmodel_load(const char* path, moeprec_qmodel** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new moeprec_qmodel{load_quantized(path)};
  });
}

moeprec_status moeprec_qmodel_save(const moeprec_qmodel* q, const char* path) {
  return guarded([&] {
    require(q, "quantized model");
    require(path, "path");
    save_quantized(q->value, path);
  });
}

uint64_t moeprec_qmodel_size(const moeprec_qmodel* q) { return q == nullptr ? 0 : serialized_size(q->value); }
void moeprec_qmodel_free(moeprec_qmodel* q) { delete q; }

moeprec_status moeprec_evaluate(const moeprec_model* full, const moeprec_qmodel* q, const moeprec_tokens* tokens,
                                int renormalize, char** report_json, char** table) {
  return guarded([&] {
    require(full, "model");
    require(q, "quantized model");
    require(tokens, "tokens");
    const EvalReport r = evaluate(full->value, q->value, tokens->value, renormalize != 0);
    const std::string json = json_text(report_to_json(r));
    const std::string text = report_table(r);
    char* j = report_json ? dup_string(json) : nullptr;
    try {
      if (table) *table = dup_string(text);
    } catch (...) {
      std::free(j);
      throw;
    }
    if (report_json) *report_json = j;
  });
}

moeprec_status moeprec_report(const char* run_dir, const char* out_dir) {
  return guarded([&] {
    require(run_dir, "run_dir");
    require(out_dir, "out_dir");
    (void)write_report(run_dir, out_dir);
  });
}

moeprec_status moeprec_run(const char* manifest_json, const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    (void)run_pipeline(manifest_from_json(parse_json(manifest_json)), out_dir);
  });
}

moeprec_status moeprec_default_manifest(const moeprec_model_config* config, uint64_t seed, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    RunManifest m;
    m.model = to_config(*config);
    m.seed = seed;
    *out = dup_string(json_text(manifest_to_json(m)));
  });
}

moeprec_status moeprec_container_check(const uint8_t* bytes, size_t len) {
  return guarded([&] {
    if (bytes == nullptr && len > 0) throw validation_error("bytes must not be null");
    check_container(decode_container(std::span<const std::uint8_t>(bytes, len)));
  });
}

moeprec_status moeprec_file_check(const char* path) {
  return guarded([&] {
    require(path, "path");
    const auto bytes = read_file(path);
    check_container(decode_container(bytes));
  });
}

}  // extern "C"
