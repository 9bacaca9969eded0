// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace moeprec {

/// "MOPQ" container layout (all integers little-endian):
///
///   offset 0   4 bytes  magic "MOPQ"
///   offset 4   u32      version (1 = float model / tokens, 2 = quantized model)
///   offset 8   u32      header length H
///   offset 12  H bytes  UTF-8 JSON header
///   offset 12+H         payload; each tensor's blob at header-declared offset
///
/// The header object carries `tensors`: [{name, dtype, shape: [rows, cols],
/// offset, nbytes, ...}] with offsets relative to the payload start, and
/// `payload_bytes`, which must equal the remaining file length.
inline constexpr char kMagic[4] = {'M', 'O', 'P', 'Q'};
inline constexpr std::uint32_t kFloatVersion = 1;
inline constexpr std::uint32_t kQuantizedVersion = 2;
inline constexpr std::size_t kPreambleBytes = 12;

struct ContainerTensor {
  std::string name;
  std::string dtype;  // "f32" or "q"
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bytes;
  /// Extra per-tensor header fields (quantization metadata).
  nlohmann::json attrs = nlohmann::json::object();
  /// Absolute file offset of the blob; filled in by decode.
  std::uint64_t file_offset = 0;
};

struct Container {
  std::uint32_t version = kFloatVersion;
  /// Top-level header fields other than `tensors` and `payload_bytes`.
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ContainerTensor> tensors;

  const ContainerTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
/// Never crashes on hostile input: every defect surfaces as FormatError.
Container decode_container(std::span<const std::uint8_t> bytes);

void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::string& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::string& path);
std::string read_text_file(const std::string& path);

std::vector<std::uint8_t> encode_f32(std::span<const float> values);
/// Fails with FormatError on non-finite values.
std::vector<float> decode_f32(const ContainerTensor& t);

/// 64-bit FNV-1a hash as 16 hex digits.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);

}  // namespace moeprec
