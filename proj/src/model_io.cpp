// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/model_io.hpp"

namespace moeprec {

namespace {

ModelConfig read_config(const Container& c) {
  try {
    ModelConfig config = config_from_json(c.meta.at("config"));
    config.validate();
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kPreambleBytes, std::string("bad model config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Format) throw;
    throw FormatError(kPreambleBytes, std::string("bad model config: ") + e.what());
  }
}

void expect_kind(const Container& c, const char* kind, std::uint32_t version) {
  if (c.version != version)
    throw FormatError(4, "expected container version " + std::to_string(version) + ", found " +
                             std::to_string(c.version));
  const auto it = c.meta.find("kind");
  if (it == c.meta.end() || !it->is_string() || it->get<std::string>() != kind)
    throw FormatError(kPreambleBytes, std::string("container kind is not '") + kind + "'");
}

}  // namespace

Container model_to_container(const MoEModel& m) {
  m.validate();
  Container c;
  c.version = kFloatVersion;
  c.meta["kind"] = "model";
  c.meta["config"] = to_json(m.config);
  for (const auto& slot : tensor_slots(m.config)) {
    const MatrixF& t = tensor_at(m, slot);
    c.tensors.push_back({slot.name, "f32", t.rows(), t.cols(), encode_f32(t.data())});
  }
  return c;
}

MoEModel model_from_container(const Container& c) {
  expect_kind(c, "model", kFloatVersion);
  MoEModel m;
  m.config = read_config(c);
  const auto slots = tensor_slots(m.config);
  if (c.tensors.size() != slots.size())
    throw FormatError(kPreambleBytes, "expected " + std::to_string(slots.size()) + " tensors, found " +
                                          std::to_string(c.tensors.size()));
  for (std::size_t l = 0; l < m.config.num_layers; ++l) {
    if (m.config.is_moe_layer(l)) {
      m.layers.emplace_back(MoELayer{MatrixF(), std::vector<Expert>(m.config.experts_per_layer)});
    } else {
      m.layers.emplace_back(DenseLayer{});
    }
  }
  for (const auto& slot : slots) {
    const ContainerTensor* t = c.find(slot.name);
    if (!t) throw FormatError(kPreambleBytes, "missing tensor " + slot.name);
    if (t->dtype != "f32" || t->rows != slot.rows || t->cols != slot.cols)
      throw FormatError(t->file_offset, slot.name + ": expected f32 " + shape_string(slot.rows, slot.cols));
    tensor_at(m, slot) = MatrixF(t->rows, t->cols, decode_f32(*t));
  }
  return m;
}

void save_model(const MoEModel& m, const std::string& path) {
  write_file(path, encode_container(model_to_container(m)));
}

MoEModel load_model(const std::string& path) {
  const auto bytes = read_file(path);
  return model_from_container(decode_container(bytes));
}

Container tokens_to_container(const CalibrationSet& s) {
  Container c;
  c.meta["kind"] = "tokens";
  c.meta["seed"] = s.seed;
  c.tensors.push_back({"tokens", "f32", s.tokens.rows(), s.tokens.cols(), encode_f32(s.tokens.data())});
  return c;
}

CalibrationSet tokens_from_container(const Container& c) {
  expect_kind(c, "tokens", kFloatVersion);
  if (c.tensors.size() != 1 || c.tensors[0].name != "tokens")
    throw FormatError(kPreambleBytes, "token container must hold exactly one 'tokens' tensor");
  const ContainerTensor& t = c.tensors[0];
  if (t.dtype != "f32" || t.rows < 1 || t.cols < 1)
    throw FormatError(t.file_offset, "tokens must be a non-empty f32 matrix");
  CalibrationSet s;
  try {
    s.seed = c.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kPreambleBytes, std::string("bad token seed: ") + e.what());
  }
  s.tokens = MatrixF(t.rows, t.cols, decode_f32(t));
  return s;
}

void save_tokens(const CalibrationSet& s, const std::string& path) {
  write_file(path, encode_container(tokens_to_container(s)));
}

CalibrationSet load_tokens(const std::string& path) {
  const auto bytes = read_file(path);
  return tokens_from_container(decode_container(bytes));
}

std::string model_fingerprint(const MoEModel& m) {
  return fnv1a_hex(encode_container(model_to_container(m)));
}

}  // namespace moeprec
