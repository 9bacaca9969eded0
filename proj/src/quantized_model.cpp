// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/quantized_model.hpp"

#include <algorithm>
#include <cmath>

#include "moeprec/half.hpp"
#include "moeprec/parallel.hpp"

namespace moeprec {

MatrixF QuantizedTensor::dequantize() const {
  std::vector<float> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const std::size_t g = i / group_size;
    const double s = half_to_double(scales[g]);
    out[i] = static_cast<float>(s * (static_cast<double>(codes[i]) - zero_points[g]));
  }
  return MatrixF(rows, cols, std::move(out));
}

std::uint64_t QuantizedTensor::serialized_bytes() const {
  return quantized_tensor_bytes(rows * cols, bits, group_size);
}

QuantizedTensor pack_tensor(const std::string& name, const Matrix& w, const QuantParams& p) {
  const std::size_t groups = group_count(w.size(), p.group_size);
  if (p.scales.size() != groups || p.alpha.size() != groups || p.beta.size() != groups)
    throw shape_error("pack_tensor: parameters do not match tensor grouping");
  QuantizedTensor q;
  q.name = name;
  q.rows = w.rows();
  q.cols = w.cols();
  q.bits = p.bits;
  q.group_size = p.group_size;
  q.scales.resize(groups);
  q.zero_points.resize(groups);
  const double m = max_code(p.bits);
  auto data = w.data();
  QuantParams stored = p;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * p.group_size;
    const std::size_t end = std::min(data.size(), begin + p.group_size);
    const double lo = *std::min_element(data.begin() + static_cast<std::ptrdiff_t>(begin),
                                        data.begin() + static_cast<std::ptrdiff_t>(end));
    q.scales[g] = half_ceil(p.scales[g]);
    const double s = half_to_double(q.scales[g]);
    const int zp = static_cast<int>(std::clamp(round_half_away(-lo * p.beta[g] / s), 0.0, m));
    q.zero_points[g] = static_cast<std::uint16_t>(zp);
    stored.scales[g] = s;
    stored.zero_points[g] = zp;
  }
  q.codes = qdq(w, stored).codes;
  return q;
}

const char* quant_mode_name(QuantMode m) noexcept { return m == QuantMode::Rtn ? "rtn" : "signround"; }

QuantMode parse_quant_mode(const std::string& name) {
  if (name == "rtn") return QuantMode::Rtn;
  if (name == "signround") return QuantMode::SignRound;
  throw validation_error("unknown quantizer mode '" + name + "'");
}

const QuantizedTensor* QuantizedModel::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

int planned_bits(const PrecisionPlan& plan, const TensorSlot& slot) {
  return slot.role == TensorRole::Expert ? plan.bits_for(slot.ref) : plan.shared_bits;
}

Matrix rows_as_columns(const Matrix& rows) { return transpose(rows); }

}  // namespace

QuantizedModel quantize_model(const MoEModel& m, const PrecisionPlan& plan, const CalibrationSet* calib,
                              const QuantizeOptions& opts) {
  m.validate();
  check_plan_covers(plan, m.config);
  if (opts.group_size < 1) throw validation_error("group_size must be >= 1");
  const auto slots = tensor_slots(m.config);

  // Gram matrices of the inputs each tensor sees, keyed by tensor name.
  std::map<std::string, Matrix> grams;
  if (opts.mode == QuantMode::SignRound) {
    if (!calib) throw validation_error("signround quantization needs calibration tokens");
    ForwardOptions fo;
    fo.record_hidden = true;
    fo.sigma = 0.0;
    const ForwardResult fr = model_forward(m, calib->tokens, fo);
    const Matrix tokens = calib->tokens.cast<double>();
    grams[kEmbedProj] = input_gram(rows_as_columns(tokens));
    grams[kOutputProj] = input_gram(rows_as_columns(fr.layer_outputs.back()));
    std::vector<Matrix> block_grams(m.config.num_layers);
    for (std::size_t l = 0; l < m.config.num_layers; ++l)
      block_grams[l] = input_gram(rows_as_columns(fr.block_inputs[l]));
    std::vector<const TensorSlot*> down_slots;
    for (const auto& slot : slots) {
      if (slot.role == TensorRole::Router || slot.name == kEmbedProj || slot.name == kOutputProj) continue;
      if (slot.projection != Projection::Down) {
        grams[slot.name] = block_grams[slot.ref.layer];
      } else {
        down_slots.push_back(&slot);
        grams[slot.name] = Matrix();
      }
    }
    parallel_for(down_slots.size(), [&](std::size_t i) {
      const TensorSlot& slot = *down_slots[i];
      const Layer& layer = m.layers[slot.ref.layer];
      const Expert& e = std::holds_alternative<DenseLayer>(layer)
                            ? std::get<DenseLayer>(layer).ffn
                            : std::get<MoELayer>(layer).experts[slot.ref.expert];
      const Matrix& in = fr.block_inputs[slot.ref.layer];
      Matrix hidden(in.rows(), m.config.ffn_dim);
      for (std::size_t t = 0; t < in.rows(); ++t) {
        const auto h = expert_hidden(e, in.row(t));
        std::copy(h.begin(), h.end(), hidden.row(t).begin());
      }
      grams.at(slot.name) = input_gram(rows_as_columns(hidden));
    });
  }

  QuantizedModel q;
  q.config = m.config;
  q.plan = plan;
  q.options = opts;
  std::vector<const TensorSlot*> quantized;
  for (const auto& slot : slots) {
    if (slot.role == TensorRole::Router) {
      q.full_precision[slot.name] = tensor_at(m, slot);
    } else {
      quantized.push_back(&slot);
    }
  }
  q.tensors.resize(quantized.size());
  parallel_for(quantized.size(), [&](std::size_t i) {
    const TensorSlot& slot = *quantized[i];
    const Matrix w = tensor_at(m, slot).cast<double>();
    const int bits = planned_bits(plan, slot);
    QuantParams params = opts.mode == QuantMode::SignRound
                             ? signround_optimize_gram(w, bits, opts.group_size, grams.at(slot.name), opts.signround)
                             : rtn_params(w, bits, opts.group_size);
    q.tensors[i] = pack_tensor(slot.name, w, params);
  });
  return q;
}

MoEModel dequantize_model(const QuantizedModel& q) {
  MoEModel m;
  m.config = q.config;
  for (std::size_t l = 0; l < q.config.num_layers; ++l) {
    if (q.config.is_moe_layer(l)) {
      m.layers.emplace_back(MoELayer{MatrixF(), std::vector<Expert>(q.config.experts_per_layer)});
    } else {
      m.layers.emplace_back(DenseLayer{});
    }
  }
  for (const auto& slot : tensor_slots(q.config)) {
    if (slot.role == TensorRole::Router) {
      auto it = q.full_precision.find(slot.name);
      if (it == q.full_precision.end()) throw coverage_error("quantized model lacks " + slot.name);
      tensor_at(m, slot) = it->second;
    } else {
      const QuantizedTensor* t = q.find(slot.name);
      if (!t) throw coverage_error("quantized model lacks " + slot.name);
      tensor_at(m, slot) = t->dequantize();
    }
  }
  m.validate();
  return m;
}

std::uint64_t serialized_size(const QuantizedModel& q) {
  std::uint64_t total = kSizeHeaderBytes;
  for (const auto& t : q.tensors) total += t.serialized_bytes();
  for (const auto& [name, t] : q.full_precision) total += full_precision_bytes(t.size());
  return total;
}

std::uint64_t serialized_size(const MoEModel& m) {
  std::uint64_t total = kSizeHeaderBytes;
  for (const auto& slot : tensor_slots(m.config)) total += full_precision_bytes(slot.rows * slot.cols);
  return total;
}

std::vector<std::uint8_t> pack_codes(const std::vector<std::uint32_t>& codes, int bits) {
  std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint32_t c : codes) {
    for (int b = 0; b < bits; ++b, ++bit)
      if ((c >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }
  return out;
}

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, int bits) {
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    for (int b = 0; b < bits; ++b, ++bit)
      if ((bytes[bit / 8] >> (bit % 8)) & 1u) out[i] |= 1u << b;
  }
  return out;
}

Container quantized_to_container(const QuantizedModel& q) {
  Container c;
  c.version = kQuantizedVersion;
  c.meta["kind"] = "quantized_model";
  c.meta["config"] = to_json(q.config);
  c.meta["plan"] = plan_to_json(q.plan);
  c.meta["quantizer"] = {{"mode", quant_mode_name(q.options.mode)},
                         {"group_size", q.options.group_size},
                         {"steps", q.options.signround.steps},
                         {"lr0", q.options.signround.lr0}};
  c.meta["manifest"] = q.manifest;
  for (const auto& slot : tensor_slots(q.config)) {
    if (slot.role == TensorRole::Router) {
      const MatrixF& t = q.full_precision.at(slot.name);
      c.tensors.push_back({slot.name, "f32", t.rows(), t.cols(), encode_f32(t.data())});
      continue;
    }
    const QuantizedTensor* t = q.find(slot.name);
    if (!t) throw coverage_error("quantized model lacks " + slot.name);
    ContainerTensor ct{slot.name, "q", t->rows, t->cols, pack_codes(t->codes, t->bits)};
    ct.attrs = {{"bits", t->bits}, {"group_size", t->group_size}, {"num_groups", t->scales.size()},
                {"codes_bytes", ct.bytes.size()}};
    for (std::uint16_t s : t->scales) {
      ct.bytes.push_back(static_cast<std::uint8_t>(s & 0xff));
      ct.bytes.push_back(static_cast<std::uint8_t>(s >> 8));
    }
    for (std::uint16_t z : t->zero_points) {
      ct.bytes.push_back(static_cast<std::uint8_t>(z & 0xff));
      ct.bytes.push_back(static_cast<std::uint8_t>(z >> 8));
    }
    c.tensors.push_back(std::move(ct));
  }
  return c;
}

QuantizedModel quantized_from_container(const Container& c) {
  if (c.version != kQuantizedVersion)
    throw FormatError(4, "expected container version 2, found " + std::to_string(c.version));
  QuantizedModel q;
  try {
    if (c.meta.at("kind").get<std::string>() != "quantized_model")
      throw FormatError(kPreambleBytes, "container kind is not 'quantized_model'");
    q.config = config_from_json(c.meta.at("config"));
    q.config.validate();
    q.plan = plan_from_json(c.meta.at("plan"));
    check_plan_covers(q.plan, q.config);
    const auto& qz = c.meta.at("quantizer");
    q.options.mode = parse_quant_mode(qz.at("mode").get<std::string>());
    q.options.group_size = qz.at("group_size").get<std::size_t>();
    q.options.signround.steps = qz.at("steps").get<std::size_t>();
    q.options.signround.lr0 = qz.at("lr0").get<double>();
    if (c.meta.contains("manifest")) q.manifest = c.meta.at("manifest");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kPreambleBytes, std::string("bad quantized model header: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(kPreambleBytes, std::string("bad quantized model header: ") + e.what());
  }

  const auto slots = tensor_slots(q.config);
  if (c.tensors.size() != slots.size())
    throw FormatError(kPreambleBytes, "expected " + std::to_string(slots.size()) + " tensors, found " +
                                          std::to_string(c.tensors.size()));
  for (const auto& slot : slots) {
    const ContainerTensor* t = c.find(slot.name);
    if (!t) throw FormatError(kPreambleBytes, "missing tensor " + slot.name);
    if (t->rows != slot.rows || t->cols != slot.cols)
      throw FormatError(t->file_offset, slot.name + ": expected shape " + shape_string(slot.rows, slot.cols));
    if (slot.role == TensorRole::Router) {
      if (t->dtype != "f32") throw FormatError(t->file_offset, slot.name + ": router must be f32");
      q.full_precision[slot.name] = MatrixF(t->rows, t->cols, decode_f32(*t));
      continue;
    }
    if (t->dtype != "q") throw FormatError(t->file_offset, slot.name + ": expected quantized tensor");
    QuantizedTensor qt;
    qt.name = slot.name;
    qt.rows = t->rows;
    qt.cols = t->cols;
    std::uint64_t groups = 0, code_bytes = 0;
    try {
      qt.bits = t->attrs.at("bits").get<int>();
      qt.group_size = t->attrs.at("group_size").get<std::size_t>();
      groups = t->attrs.at("num_groups").get<std::uint64_t>();
      code_bytes = t->attrs.at("codes_bytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(t->file_offset, slot.name + ": bad quantization metadata: " + e.what());
    }
    const int expected_bits = slot.role == TensorRole::Expert ? q.plan.bits_for(slot.ref) : q.plan.shared_bits;
    if (qt.bits != expected_bits)
      throw FormatError(t->file_offset, slot.name + ": stored bit width disagrees with plan");
    if (qt.group_size != q.options.group_size || qt.group_size == 0)
      throw FormatError(t->file_offset, slot.name + ": group size disagrees with quantizer settings");
    const std::uint64_t numel = slot.rows * slot.cols;
    if (groups != group_count(numel, qt.group_size) || code_bytes != (numel * qt.bits + 7) / 8 ||
        t->bytes.size() != code_bytes + 4 * groups)
      throw FormatError(t->file_offset, slot.name + ": quantized blob size disagrees with metadata");
    qt.codes = unpack_codes(std::span(t->bytes).first(code_bytes), numel, qt.bits);
    const std::uint32_t mcode = static_cast<std::uint32_t>(max_code(qt.bits));
    for (std::uint64_t g = 0; g < groups; ++g) {
      const std::size_t so = code_bytes + 2 * g;
      const std::size_t zo = code_bytes + 2 * groups + 2 * g;
      const auto s = static_cast<std::uint16_t>(t->bytes[so] | (t->bytes[so + 1] << 8));
      const auto z = static_cast<std::uint16_t>(t->bytes[zo] | (t->bytes[zo + 1] << 8));
      if (!half_is_finite(s) || !(half_to_double(s) > 0.0))
        throw FormatError(t->file_offset + so, slot.name + ": scale must be a positive finite binary16");
      if (z > mcode) throw FormatError(t->file_offset + zo, slot.name + ": zero point exceeds code range");
      qt.scales.push_back(s);
      qt.zero_points.push_back(z);
    }
    q.tensors.push_back(std::move(qt));
  }
  return q;
}

void save_quantized(const QuantizedModel& q, const std::string& path) {
  write_file(path, encode_container(quantized_to_container(q)));
}

QuantizedModel load_quantized(const std::string& path) {
  const auto bytes = read_file(path);
  return quantized_from_container(decode_container(bytes));
}

}  // namespace moeprec
