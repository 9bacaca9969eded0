/* Copyright (C) 2026 The moeprec Authors
 * SPDX-License-Identifier: Apache-2.0 */

/* C interface to the moeprec library. All objects are opaque handles owned by
 * the caller and released with the matching *_free function. Functions return
 * a moeprec_status; on failure moeprec_last_error() describes the cause for the
 * calling thread. Strings returned through char** out-parameters are
 * allocated by the library and released with moeprec_string_free. */

#ifndef MOEPREC_MOEPREC_H
#define MOEPREC_MOEPREC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(MOEPREC_BUILDING_LIBRARY)
#define MOEPREC_API __declspec(dllexport)
#else
#define MOEPREC_API __declspec(dllimport)
#endif
#else
#define MOEPREC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum moeprec_status {
  MOEPREC_OK = 0,
  MOEPREC_ERR_VALIDATION = 1,
  MOEPREC_ERR_SHAPE = 2,
  MOEPREC_ERR_COVERAGE = 3,
  MOEPREC_ERR_FORMAT = 4,
  MOEPREC_ERR_DEGENERATE = 5,
  MOEPREC_ERR_IO = 6,
  MOEPREC_ERR_INTERNAL = 7
} moeprec_status;

typedef struct moeprec_model moeprec_model;
typedef struct moeprec_tokens moeprec_tokens;
typedef struct moeprec_map moeprec_map;
typedef struct moeprec_plan moeprec_plan;
typedef struct moeprec_qmodel moeprec_qmodel;

MOEPREC_API const char* moeprec_version(void);
/* Message of the last failed call on this thread, "" if none. */
MOEPREC_API const char* moeprec_last_error(void);
/* Short name of a status ("validation", "format", ...). */
MOEPREC_API const char* moeprec_status_name(moeprec_status s);
/* Process exit code for a status: 0 ok, 2 usage/validation, 3 format, 4 numeric. */
MOEPREC_API int moeprec_exit_code(moeprec_status s);
/* Worker threads used by parallel stages; 0 means one per hardware thread.
 * Results never depend on it. */
MOEPREC_API void moeprec_set_threads(size_t n);
MOEPREC_API void moeprec_string_free(char* s);

/* ---- models ---- */

typedef struct moeprec_model_config {
  size_t num_layers;
  size_t experts_per_layer;
  size_t active_experts;
  size_t hidden_dim;
  size_t ffn_dim;
  int first_layer_dense;
  double gate_noise_sigma;
} moeprec_model_config;

MOEPREC_API moeprec_status moeprec_model_generate(const moeprec_model_config* config, uint64_t seed,
                                                  double heterogeneity, moeprec_model** out);
MOEPREC_API moeprec_status moeprec_model_load(const char* path, moeprec_model** out);
MOEPREC_API moeprec_status moeprec_model_save(const moeprec_model* m, const char* path);
MOEPREC_API moeprec_status moeprec_model_config_get(const moeprec_model* m, moeprec_model_config* out);
/* Number of tensors stored in the model file. */
MOEPREC_API size_t moeprec_model_tensor_count(const moeprec_model* m);
MOEPREC_API moeprec_status moeprec_model_tensor_name(const moeprec_model* m, size_t index, char** out);
MOEPREC_API void moeprec_model_free(moeprec_model* m);

/* ---- token sets ---- */

typedef enum moeprec_token_purpose { MOEPREC_TOKENS_CALIBRATION = 0, MOEPREC_TOKENS_EVAL = 1 } moeprec_token_purpose;

MOEPREC_API moeprec_status moeprec_tokens_generate(size_t count, size_t dim, uint64_t seed,
                                                   moeprec_token_purpose purpose, moeprec_tokens** out);
MOEPREC_API moeprec_status moeprec_tokens_load(const char* path, moeprec_tokens** out);
MOEPREC_API moeprec_status moeprec_tokens_save(const moeprec_tokens* t, const char* path);
MOEPREC_API size_t moeprec_tokens_count(const moeprec_tokens* t);
MOEPREC_API size_t moeprec_tokens_dim(const moeprec_tokens* t);
MOEPREC_API void moeprec_tokens_free(moeprec_tokens* t);

/* ---- importance maps ---- */

typedef enum moeprec_metric {
  MOEPREC_METRIC_FREQUENCY = 0,
  MOEPREC_METRIC_HESSIAN = 1,
  MOEPREC_METRIC_COMBINED = 2
} moeprec_metric;

typedef enum moeprec_probe { MOEPREC_PROBE_RADEMACHER = 0, MOEPREC_PROBE_GAUSSIAN = 1 } moeprec_probe;

typedef struct moeprec_profile_options {
  moeprec_metric metric;
  size_t hessian_samples;
  moeprec_probe probe;
  uint64_t seed;
  int per_layer_norm;
  int renormalize;
  /* Gate noise during the frequency pass; negative uses the model's own. */
  double sigma;
} moeprec_profile_options;

MOEPREC_API moeprec_profile_options moeprec_profile_options_default(void);
/* `calib` may be NULL for the hessian metric only. */
MOEPREC_API moeprec_status moeprec_profile(const moeprec_model* m, const moeprec_tokens* calib,
                                           const moeprec_profile_options* opts, moeprec_map** out);
MOEPREC_API moeprec_status moeprec_map_from_json(const char* json, moeprec_map** out);
MOEPREC_API moeprec_status moeprec_map_to_json(const moeprec_map* m, char** out);
/* CSV with header layer,expert_0,...,expert_{N-1}. */
MOEPREC_API moeprec_status moeprec_map_heatmap_csv(const moeprec_map* m, char** out);
MOEPREC_API void moeprec_map_free(moeprec_map* m);

/* ---- precision plans ---- */

typedef enum moeprec_assign_mode { MOEPREC_ASSIGN_LAYER = 0, MOEPREC_ASSIGN_MODEL = 1 } moeprec_assign_mode;

/* `palette` is a comma list such as "2,3,4". `invert` builds the reversed
 * diagnostic plan with the same bit multiset. */
MOEPREC_API moeprec_status moeprec_assign(const moeprec_map* map, const char* palette, int shared_bits,
                                          moeprec_assign_mode mode, int invert, moeprec_plan** out);
MOEPREC_API moeprec_status moeprec_plan_uniform(const moeprec_model* m, int expert_bits, int shared_bits,
                                                moeprec_plan** out);
MOEPREC_API moeprec_status moeprec_plan_from_json(const char* json, moeprec_plan** out);
MOEPREC_API moeprec_status moeprec_plan_to_json(const moeprec_plan* p, char** out);
MOEPREC_API moeprec_status moeprec_plan_heatmap_csv(const moeprec_plan* p, char** out);
MOEPREC_API void moeprec_plan_free(moeprec_plan* p);

/* ---- quantization ---- */

typedef enum moeprec_quant_mode { MOEPREC_QUANT_RTN = 0, MOEPREC_QUANT_SIGNROUND = 1 } moeprec_quant_mode;

typedef struct moeprec_quantize_options {
  moeprec_quant_mode mode;
  size_t group_size;
  size_t steps;
  double lr0;
} moeprec_quantize_options;

MOEPREC_API moeprec_quantize_options moeprec_quantize_options_default(void);
/* `calib` is required for signround and ignored for rtn. `manifest_json` (may
 * be NULL) is stored verbatim in the output header. */
MOEPREC_API moeprec_status moeprec_quantize(const moeprec_model* m, const moeprec_plan* plan,
                                            const moeprec_tokens* calib, const moeprec_quantize_options* opts,
                                            const char* manifest_json, moeprec_qmodel** out);
MOEPREC_API moeprec_status moeprec_qmodel_load(const char* path, moeprec_qmodel** out);
MOEPREC_API moeprec_status moeprec_qmodel_save(const moeprec_qmodel* q, const char* path);
/* Accounted size: fixed header plus packed codes, scales and zero points plus
 * f32 bytes of unquantized tensors. Excludes the JSON header. */
MOEPREC_API uint64_t moeprec_qmodel_size(const moeprec_qmodel* q);
MOEPREC_API void moeprec_qmodel_free(moeprec_qmodel* q);

/* ---- evaluation and runs ---- */

/* Either out pointer may be NULL. */
MOEPREC_API moeprec_status moeprec_evaluate(const moeprec_model* full, const moeprec_qmodel* q,
                                            const moeprec_tokens* tokens, int renormalize, char** report_json,
                                            char** table);
MOEPREC_API moeprec_status moeprec_report(const char* run_dir, const char* out_dir);
/* Runs the whole pipeline from a manifest (JSON text; missing keys take defaults). */
MOEPREC_API moeprec_status moeprec_run(const char* manifest_json, const char* out_dir);
/* Default manifest for a model config and seed. */
MOEPREC_API moeprec_status moeprec_default_manifest(const moeprec_model_config* config, uint64_t seed, char** out);

/* Parses a container image without building a model. Used for validation. */
MOEPREC_API moeprec_status moeprec_container_check(const uint8_t* bytes, size_t len);
/* Decodes a model, token set or quantized model from a file, by its kind. */
MOEPREC_API moeprec_status moeprec_file_check(const char* path);

#ifdef __cplusplus
}
#endif

#endif /* MOEPREC_MOEPREC_H */
