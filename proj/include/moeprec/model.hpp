// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "moeprec/importance_map.hpp"
#include "moeprec/rng.hpp"
#include "moeprec/tensor.hpp"

namespace moeprec {

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t experts_per_layer = 1;
  std::size_t active_experts = 1;
  std::size_t hidden_dim = 1;
  std::size_t ffn_dim = 1;
  bool first_layer_dense = false;
  double gate_noise_sigma = 0.0;

  /// Throws a validation error when the config is unusable.
  void validate() const;
  bool is_moe_layer(std::size_t layer) const noexcept { return !(first_layer_dense && layer == 0); }
  std::vector<std::size_t> moe_layers() const;
  std::size_t expert_count() const noexcept { return moe_layers().size() * experts_per_layer; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

enum class Projection : std::uint8_t { Gate = 0, Up = 1, Down = 2 };
inline constexpr std::array<Projection, 3> kProjections{Projection::Gate, Projection::Up,
                                                        Projection::Down};
const char* projection_name(Projection p) noexcept;

/// SwiGLU feed-forward block: down * (silu(gate * x) .* (up * x)).
struct Expert {
  MatrixF gate_proj;  // f x d
  MatrixF up_proj;    // f x d
  MatrixF down_proj;  // d x f

  const MatrixF& projection(Projection p) const;
  MatrixF& projection(Projection p);
};

struct MoELayer {
  MatrixF router;  // N x d, row e holds expert e's logit weights
  std::vector<Expert> experts;
};

/// Non-MoE transformer block; its FFN always runs.
struct DenseLayer {
  Expert ffn;
};

using Layer = std::variant<DenseLayer, MoELayer>;

struct ExpertRef {
  std::size_t layer = 0;
  std::size_t expert = 0;
  friend auto operator<=>(const ExpertRef&, const ExpertRef&) = default;
};

inline constexpr const char* kEmbedProj = "embed_proj";
inline constexpr const char* kOutputProj = "output_proj";

struct MoEModel {
  ModelConfig config;
  std::vector<Layer> layers;
  /// Non-expert stand-ins (embedding and output projections), d x d each.
  std::map<std::string, MatrixF> dense_tensors;

  const MoELayer* moe_layer(std::size_t layer) const;
  /// Checks every tensor shape against the config.
  void validate() const;
};

enum class TensorRole { Expert, Shared, Router };

/// One named tensor of a model in canonical (file) order.
struct TensorSlot {
  std::string name;
  TensorRole role;
  ExpertRef ref;  // meaningful for Expert role
  Projection projection = Projection::Gate;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Canonical tensor list implied by a config.
std::vector<TensorSlot> tensor_slots(const ModelConfig& config);
const MatrixF& tensor_at(const MoEModel& m, const TensorSlot& slot);
/// The mutable overload creates the shared embed/output entries on demand.
MatrixF& tensor_at(MoEModel& m, const TensorSlot& slot);

/// Per-expert scale factor, log-uniform in [1, heterogeneity].
double expert_scale_factor(std::uint64_t seed, ExpertRef ref, double heterogeneity);

/// Weights i.i.d. N(0, 1/d); every matrix of expert (l, e) is multiplied by
/// expert_scale_factor(seed, {l, e}, heterogeneity).
MoEModel generate_synthetic(const ModelConfig& config, std::uint64_t seed, double heterogeneity);

struct CalibrationSet {
  MatrixF tokens;  // T x d
  std::uint64_t seed = 0;
};

/// Seeded standard Gaussian token embeddings.
CalibrationSet generate_tokens(std::size_t count, std::size_t dim, std::uint64_t seed,
                               StreamPurpose purpose = StreamPurpose::Calibration);

struct RouteChoice {
  std::size_t expert;
  double weight;
};

/// softmax(W_g x + eps), eps ~ N(0, sigma^2), then the k largest weights.
/// Ties go to the lower expert index. `rng` may be null when sigma == 0.
std::vector<RouteChoice> route(const MoELayer& layer, std::span<const double> x, std::size_t k,
                               double sigma, RngStream* rng, bool renormalize = true);

double silu(double z) noexcept;
std::vector<double> expert_forward(const Expert& e, std::span<const double> x);
/// Intermediate activation silu(gate x) .* (up x), the input seen by down_proj.
std::vector<double> expert_hidden(const Expert& e, std::span<const double> x);
/// Parameter-free RMS normalization applied before every block.
std::vector<double> rms_normalize(std::span<const double> x);

struct ForwardOptions {
  bool record_frequency = false;
  bool record_hidden = false;
  bool renormalize = true;
  /// Overrides config.gate_noise_sigma when set.
  std::optional<double> sigma;
  std::uint64_t noise_seed = 0;
};

struct ForwardResult {
  Matrix outputs;  // T x d
  /// Raw routing counts, present when record_frequency.
  std::optional<ImportanceMap> frequency;
  /// Normalized block inputs per layer (T x d), present when record_hidden.
  std::vector<Matrix> block_inputs;
  /// Residual stream after each layer (T x d), present when record_hidden.
  std::vector<Matrix> layer_outputs;
};

ForwardResult model_forward(const MoEModel& m, const MatrixF& tokens, const ForwardOptions& opts = {});

}  // namespace moeprec
