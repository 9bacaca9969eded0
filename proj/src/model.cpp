// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moeprec/parallel.hpp"

namespace moeprec {

void ModelConfig::validate() const {
  if (num_layers < 1) throw validation_error("num_layers must be >= 1");
  if (experts_per_layer < 1) throw validation_error("experts_per_layer must be >= 1");
  if (active_experts < 1 || active_experts > experts_per_layer)
    throw validation_error("active_experts must satisfy 1 <= k <= experts_per_layer");
  if (hidden_dim < 1) throw validation_error("hidden_dim must be >= 1");
  if (ffn_dim < 1) throw validation_error("ffn_dim must be >= 1");
  if (!(gate_noise_sigma >= 0.0) || !std::isfinite(gate_noise_sigma))
    throw validation_error("gate_noise_sigma must be finite and >= 0");
  constexpr std::size_t kLimit = std::size_t{1} << 16;
  if (num_layers > kLimit || experts_per_layer > kLimit || hidden_dim > kLimit || ffn_dim > kLimit)
    throw validation_error("model dimension exceeds 65536");
  if (num_layers * experts_per_layer > (std::size_t{1} << 20))
    throw validation_error("model has more than 2^20 experts");
}

std::vector<std::size_t> ModelConfig::moe_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < num_layers; ++l)
    if (is_moe_layer(l)) out.push_back(l);
  return out;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"experts_per_layer", c.experts_per_layer},
          {"active_experts", c.active_experts},
          {"hidden_dim", c.hidden_dim},
          {"ffn_dim", c.ffn_dim},
          {"first_layer_dense", c.first_layer_dense},
          {"gate_noise_sigma", c.gate_noise_sigma}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.experts_per_layer = j.at("experts_per_layer").get<std::size_t>();
  c.active_experts = j.at("active_experts").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.first_layer_dense = j.at("first_layer_dense").get<bool>();
  c.gate_noise_sigma = j.at("gate_noise_sigma").get<double>();
  return c;
}

const char* projection_name(Projection p) noexcept {
  switch (p) {
    case Projection::Gate: return "gate_proj";
    case Projection::Up: return "up_proj";
    case Projection::Down: return "down_proj";
  }
  return "?";
}

const MatrixF& Expert::projection(Projection p) const {
  switch (p) {
    case Projection::Gate: return gate_proj;
    case Projection::Up: return up_proj;
    case Projection::Down: break;
  }
  return down_proj;
}

MatrixF& Expert::projection(Projection p) {
  return const_cast<MatrixF&>(std::as_const(*this).projection(p));
}

const MoELayer* MoEModel::moe_layer(std::size_t layer) const {
  if (layer >= layers.size()) return nullptr;
  return std::get_if<MoELayer>(&layers[layer]);
}

std::vector<TensorSlot> tensor_slots(const ModelConfig& c) {
  const std::size_t d = c.hidden_dim;
  const std::size_t f = c.ffn_dim;
  auto proj_shape = [&](Projection p) {
    return p == Projection::Down ? std::pair{d, f} : std::pair{f, d};
  };
  std::vector<TensorSlot> out;
  out.push_back({kEmbedProj, TensorRole::Shared, {}, Projection::Gate, d, d});
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l);
    if (!c.is_moe_layer(l)) {
      for (Projection p : kProjections) {
        auto [r, cc] = proj_shape(p);
        out.push_back({prefix + ".dense." + projection_name(p), TensorRole::Shared, {l, 0}, p, r, cc});
      }
      continue;
    }
    out.push_back({prefix + ".router", TensorRole::Router, {l, 0}, Projection::Gate,
                   c.experts_per_layer, d});
    for (std::size_t e = 0; e < c.experts_per_layer; ++e) {
      for (Projection p : kProjections) {
        auto [r, cc] = proj_shape(p);
        out.push_back({prefix + ".experts." + std::to_string(e) + "." + projection_name(p),
                       TensorRole::Expert, {l, e}, p, r, cc});
      }
    }
  }
  out.push_back({kOutputProj, TensorRole::Shared, {}, Projection::Gate, d, d});
  return out;
}

MatrixF& tensor_at(MoEModel& m, const TensorSlot& slot) {
  if (slot.name == kEmbedProj || slot.name == kOutputProj) return m.dense_tensors[slot.name];
  return const_cast<MatrixF&>(tensor_at(std::as_const(m), slot));
}

const MatrixF& tensor_at(const MoEModel& m, const TensorSlot& slot) {
  if (slot.name == kEmbedProj || slot.name == kOutputProj) {
    auto it = m.dense_tensors.find(slot.name);
    if (it == m.dense_tensors.end()) throw coverage_error("model lacks tensor " + slot.name);
    return it->second;
  }
  if (slot.ref.layer >= m.layers.size()) throw coverage_error("model lacks tensor " + slot.name);
  const Layer& layer = m.layers[slot.ref.layer];
  if (slot.role == TensorRole::Shared) {
    const auto* dense = std::get_if<DenseLayer>(&layer);
    if (!dense) throw coverage_error("model lacks tensor " + slot.name);
    return dense->ffn.projection(slot.projection);
  }
  const auto* moe = std::get_if<MoELayer>(&layer);
  if (!moe) throw coverage_error("model lacks tensor " + slot.name);
  if (slot.role == TensorRole::Router) return moe->router;
  if (slot.ref.expert >= moe->experts.size()) throw coverage_error("model lacks tensor " + slot.name);
  return moe->experts[slot.ref.expert].projection(slot.projection);
}

void MoEModel::validate() const {
  config.validate();
  if (layers.size() != config.num_layers)
    throw shape_error("layer count " + std::to_string(layers.size()) + " != config.num_layers " +
                      std::to_string(config.num_layers));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const bool moe = std::holds_alternative<MoELayer>(layers[l]);
    if (moe != config.is_moe_layer(l))
      throw shape_error("layer " + std::to_string(l) + " kind disagrees with config");
    if (moe && std::get<MoELayer>(layers[l]).experts.size() != config.experts_per_layer)
      throw shape_error("layer " + std::to_string(l) + " expert count disagrees with config");
  }
  for (const auto& slot : tensor_slots(config)) {
    const MatrixF& t = tensor_at(*this, slot);
    if (t.rows() != slot.rows || t.cols() != slot.cols)
      throw shape_error(slot.name + " has shape " + shape_string(t.rows(), t.cols()) + ", expected " +
                        shape_string(slot.rows, slot.cols));
  }
}

double expert_scale_factor(std::uint64_t seed, ExpertRef ref, double heterogeneity) {
  if (!(heterogeneity >= 1.0) || !std::isfinite(heterogeneity))
    throw validation_error("heterogeneity must be finite and >= 1");
  if (heterogeneity == 1.0) return 1.0;
  RngStream rng(seed, StreamKey{StreamPurpose::ExpertScale, ref.layer, ref.expert, 0});
  return std::exp(rng.uniform() * std::log(heterogeneity));
}

namespace {

MatrixF gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, double scale,
                        RngStream& rng) {
  std::vector<float> v(rows * cols);
  for (float& x : v) x = static_cast<float>(rng.normal() * stddev * scale);
  return MatrixF(rows, cols, std::move(v));
}

Expert generate_expert(const ModelConfig& c, std::uint64_t seed, std::uint64_t layer,
                       std::uint64_t expert, double scale) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(c.hidden_dim));
  Expert e;
  for (Projection p : kProjections) {
    RngStream rng(seed, StreamKey{StreamPurpose::ModelWeights, layer, expert,
                                  static_cast<std::uint64_t>(p) + 1});
    const bool down = p == Projection::Down;
    e.projection(p) = gaussian_matrix(down ? c.hidden_dim : c.ffn_dim,
                                      down ? c.ffn_dim : c.hidden_dim, stddev, scale, rng);
  }
  return e;
}

}  // namespace

MoEModel generate_synthetic(const ModelConfig& config, std::uint64_t seed, double heterogeneity) {
  config.validate();
  const std::size_t d = config.hidden_dim;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  MoEModel m;
  m.config = config;
  // Layer index 2^32 is reserved for the shared projections.
  constexpr std::uint64_t kShared = std::uint64_t{1} << 32;
  {
    RngStream rng(seed, StreamKey{StreamPurpose::ModelWeights, kShared, 0, 0});
    m.dense_tensors[kEmbedProj] = gaussian_matrix(d, d, stddev, 1.0, rng);
  }
  {
    RngStream rng(seed, StreamKey{StreamPurpose::ModelWeights, kShared, 0, 1});
    m.dense_tensors[kOutputProj] = gaussian_matrix(d, d, stddev, 1.0, rng);
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    if (!config.is_moe_layer(l)) {
      m.layers.emplace_back(DenseLayer{generate_expert(config, seed, l, kShared, 1.0)});
      continue;
    }
    MoELayer layer;
    RngStream router_rng(seed, StreamKey{StreamPurpose::ModelWeights, l, kShared, 0});
    layer.router = gaussian_matrix(config.experts_per_layer, d, stddev, 1.0, router_rng);
    for (std::size_t e = 0; e < config.experts_per_layer; ++e) {
      const double scale = expert_scale_factor(seed, {l, e}, heterogeneity);
      layer.experts.push_back(generate_expert(config, seed, l, e, scale));
    }
    m.layers.emplace_back(std::move(layer));
  }
  return m;
}

CalibrationSet generate_tokens(std::size_t count, std::size_t dim, std::uint64_t seed,
                               StreamPurpose purpose) {
  if (count < 1) throw validation_error("token count must be >= 1");
  if (dim < 1) throw validation_error("token dim must be >= 1");
  RngStream rng(seed, StreamKey{purpose, 0, 0, 0});
  std::vector<float> v(count * dim);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return {MatrixF(count, dim, std::move(v)), seed};
}

std::vector<RouteChoice> route(const MoELayer& layer, std::span<const double> x, std::size_t k,
                               double sigma, RngStream* rng, bool renormalize) {
  const std::size_t n = layer.router.rows();
  if (k < 1 || k > n) throw validation_error("route: k must satisfy 1 <= k <= N");
  std::vector<double> logits = matvec(layer.router, x);
  if (sigma > 0.0) {
    if (!rng) throw validation_error("route: sigma > 0 requires a random stream");
    for (double& z : logits) z += sigma * rng->normal();
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - top);
    total += probs[i];
  }
  for (double& p : probs) p /= total;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Rank on logits so ties are exact; stable sort keeps lower indices first.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  std::vector<RouteChoice> out;
  out.reserve(k);
  double selected = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({order[i], probs[order[i]]});
    selected += probs[order[i]];
  }
  if (renormalize && k < n) {
    for (auto& c : out) c.weight /= selected;
  }
  return out;
}

double silu(double z) noexcept { return z / (1.0 + std::exp(-z)); }

std::vector<double> expert_hidden(const Expert& e, std::span<const double> x) {
  std::vector<double> g = matvec(e.gate_proj, x);
  const std::vector<double> u = matvec(e.up_proj, x);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = silu(g[i]) * u[i];
  return g;
}

std::vector<double> expert_forward(const Expert& e, std::span<const double> x) {
  const std::vector<double> h = expert_hidden(e, x);
  return matvec(e.down_proj, h);
}

std::vector<double> rms_normalize(std::span<const double> x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v *= inv;
  return out;
}

ForwardResult model_forward(const MoEModel& m, const MatrixF& tokens, const ForwardOptions& opts) {
  const ModelConfig& c = m.config;
  const std::size_t d = c.hidden_dim;
  if (tokens.cols() != d)
    throw shape_error("token dim " + std::to_string(tokens.cols()) + " != hidden_dim " +
                      std::to_string(d));
  if (m.layers.size() != c.num_layers) throw shape_error("model layer count disagrees with config");
  const std::size_t T = tokens.rows();
  const double sigma = opts.sigma.value_or(c.gate_noise_sigma);
  const MatrixF& embed = m.dense_tensors.at(kEmbedProj);
  const MatrixF& output = m.dense_tensors.at(kOutputProj);

  ForwardResult result;
  result.outputs = Matrix(T, d);
  if (opts.record_hidden) {
    result.block_inputs.assign(c.num_layers, Matrix(T, d));
    result.layer_outputs.assign(c.num_layers, Matrix(T, d));
  }
  const std::vector<std::size_t> moe = c.moe_layers();
  std::vector<std::size_t> row_of(c.num_layers, 0);
  for (std::size_t r = 0; r < moe.size(); ++r) row_of[moe[r]] = r;

  constexpr std::size_t kChunk = 32;
  const std::size_t chunks = (T + kChunk - 1) / kChunk;
  std::vector<std::vector<std::vector<std::uint64_t>>> counts(
      opts.record_frequency ? chunks : 0,
      std::vector<std::vector<std::uint64_t>>(moe.size(),
                                              std::vector<std::uint64_t>(c.experts_per_layer, 0)));

  parallel_for(chunks, [&](std::size_t chunk) {
    const std::size_t end = std::min(T, (chunk + 1) * kChunk);
    for (std::size_t t = chunk * kChunk; t < end; ++t) {
      std::vector<double> x(tokens.row(t).begin(), tokens.row(t).end());
      std::vector<double> h = matvec(embed, x);
      for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::vector<double> in = rms_normalize(h);
        std::vector<double> y(d, 0.0);
        if (const auto* dense = std::get_if<DenseLayer>(&m.layers[l])) {
          y = expert_forward(dense->ffn, in);
        } else {
          const auto& layer = std::get<MoELayer>(m.layers[l]);
          std::optional<RngStream> noise;
          if (sigma > 0.0) noise.emplace(opts.noise_seed, StreamKey{StreamPurpose::GateNoise, l, 0, t});
          const auto choices = route(layer, in, c.active_experts, sigma, noise ? &*noise : nullptr,
                                     opts.renormalize);
          for (const auto& ch : choices) {
            const std::vector<double> out = expert_forward(layer.experts[ch.expert], in);
            for (std::size_t i = 0; i < d; ++i) y[i] += ch.weight * out[i];
            if (opts.record_frequency) ++counts[chunk][row_of[l]][ch.expert];
          }
        }
        for (std::size_t i = 0; i < d; ++i) h[i] += y[i];
        if (opts.record_hidden) {
          std::copy(in.begin(), in.end(), result.block_inputs[l].row(t).begin());
          std::copy(h.begin(), h.end(), result.layer_outputs[l].row(t).begin());
        }
      }
      const std::vector<double> out = matvec(output, h);
      std::copy(out.begin(), out.end(), result.outputs.row(t).begin());
    }
  });

  if (opts.record_frequency) {
    ImportanceMap freq;
    freq.metric = Metric::Frequency;
    freq.layers = moe;
    freq.values.assign(moe.size(), std::vector<double>(c.experts_per_layer, 0.0));
    for (const auto& chunk_counts : counts)
      for (std::size_t r = 0; r < moe.size(); ++r)
        for (std::size_t e = 0; e < c.experts_per_layer; ++e)
          freq.values[r][e] += static_cast<double>(chunk_counts[r][e]);
    result.frequency = std::move(freq);
  }
  return result;
}

}  // namespace moeprec
