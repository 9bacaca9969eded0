// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "moeprec/assigner.hpp"
#include "moeprec/container.hpp"
#include "moeprec/model.hpp"
#include "moeprec/quantizer.hpp"

namespace moeprec {

/// Stored form of one quantized weight: integer codes plus binary16 scales and
/// 16-bit zero points. Scales are rounded up to binary16 before the codes are
/// computed, so the in-memory and on-disk forms dequantize identically.
struct QuantizedTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 4;
  std::size_t group_size = kDefaultGroupSize;
  std::vector<std::uint32_t> codes;
  std::vector<std::uint16_t> scales;  // binary16 bit patterns
  std::vector<std::uint16_t> zero_points;

  MatrixF dequantize() const;
  std::uint64_t serialized_bytes() const;
};

/// Rounds each group's scale up to binary16, recomputes its zero point from
/// the clip parameters and emits codes (including the rounding adjustment).
QuantizedTensor pack_tensor(const std::string& name, const Matrix& w, const QuantParams& params);

enum class QuantMode { Rtn, SignRound };
const char* quant_mode_name(QuantMode m) noexcept;
QuantMode parse_quant_mode(const std::string& name);

struct QuantizeOptions {
  QuantMode mode = QuantMode::Rtn;
  std::size_t group_size = kDefaultGroupSize;
  SignRoundOptions signround;
};

struct QuantizedModel {
  ModelConfig config;
  /// Expert and shared tensors in canonical order.
  std::vector<QuantizedTensor> tensors;
  /// Tensors kept in f32 (routers).
  std::map<std::string, MatrixF> full_precision;
  PrecisionPlan plan;
  QuantizeOptions options;
  nlohmann::json manifest = nlohmann::json::object();

  const QuantizedTensor* find(const std::string& name) const;
};

/// Quantizes every expert tensor at its planned width and every shared tensor
/// at plan.shared_bits. SignRound mode needs `calib`; each tensor is tuned on
/// the inputs it sees during one full-precision forward pass over it.
QuantizedModel quantize_model(const MoEModel& m, const PrecisionPlan& plan, const CalibrationSet* calib,
                              const QuantizeOptions& opts);

MoEModel dequantize_model(const QuantizedModel& q);

/// Header + sum of quantized_tensor_bytes + f32 bytes of unquantized tensors.
std::uint64_t serialized_size(const QuantizedModel& q);
/// Same accounting with every tensor in f32.
std::uint64_t serialized_size(const MoEModel& m);

Container quantized_to_container(const QuantizedModel& q);
QuantizedModel quantized_from_container(const Container& c);
void save_quantized(const QuantizedModel& q, const std::string& path);
QuantizedModel load_quantized(const std::string& path);

std::vector<std::uint8_t> pack_codes(const std::vector<std::uint32_t>& codes, int bits);
std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, int bits);

}  // namespace moeprec
