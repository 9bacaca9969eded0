// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "moeprec/error.hpp"

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian host");

namespace moeprec {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

bool checked_mul(std::uint64_t a, std::uint64_t b, std::uint64_t& out) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return false;
  out = a * b;
  return true;
}

}  // namespace

const ContainerTensor* Container::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  nlohmann::json header = c.meta;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    nlohmann::json entry = t.attrs;
    entry["name"] = t.name;
    entry["dtype"] = t.dtype;
    entry["shape"] = {t.rows, t.cols};
    entry["offset"] = offset;
    entry["nbytes"] = t.bytes.size();
    list.push_back(std::move(entry));
    offset += t.bytes.size();
  }
  header["tensors"] = std::move(list);
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreambleBytes + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, c.version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : c.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleBytes) throw FormatError(bytes.size(), "file shorter than container preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(0, "bad magic, expected MOPQ");
  Container c;
  c.version = get_u32(bytes, 4);
  if (c.version != kFloatVersion && c.version != kQuantizedVersion)
    throw FormatError(4, "unsupported container version " + std::to_string(c.version));
  const std::uint64_t header_len = get_u32(bytes, 8);
  if (header_len > bytes.size() - kPreambleBytes)
    throw FormatError(bytes.size(), "truncated header: declares " + std::to_string(header_len) + " bytes");
  const std::uint64_t payload_start = kPreambleBytes + header_len;
  const std::uint64_t payload_size = bytes.size() - payload_start;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreambleBytes, bytes.begin() + payload_start);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(kPreambleBytes + e.byte, "malformed JSON header");
  }

  try {
    if (!header.is_object()) throw FormatError(kPreambleBytes, "header is not a JSON object");
    const std::uint64_t declared = header.at("payload_bytes").get<std::uint64_t>();
    if (declared != payload_size)
      throw FormatError(bytes.size(), "payload length " + std::to_string(payload_size) +
                                          " != declared " + std::to_string(declared));
    const auto& list = header.at("tensors");
    if (!list.is_array()) throw FormatError(kPreambleBytes, "tensors is not an array");
    for (const auto& entry : list) {
      ContainerTensor t;
      t.name = entry.at("name").get<std::string>();
      t.dtype = entry.at("dtype").get<std::string>();
      const auto& shape = entry.at("shape");
      if (!shape.is_array() || shape.size() != 2) throw FormatError(kPreambleBytes, t.name + ": shape must be [rows, cols]");
      t.rows = shape[0].get<std::size_t>();
      t.cols = shape[1].get<std::size_t>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (offset > payload_size || nbytes > payload_size - offset)
        throw FormatError(payload_start + std::min(offset, payload_size),
                          t.name + ": blob extends past end of payload");
      std::uint64_t numel = 0;
      if (!checked_mul(t.rows, t.cols, numel)) throw FormatError(kPreambleBytes, t.name + ": shape overflows");
      if (t.dtype == "f32") {
        std::uint64_t expect = 0;
        if (!checked_mul(numel, 4, expect) || expect != nbytes)
          throw FormatError(payload_start + offset, t.name + ": f32 blob size disagrees with shape");
      } else if (t.dtype != "q") {
        throw FormatError(kPreambleBytes, t.name + ": unknown dtype '" + t.dtype + "'");
      }
      t.file_offset = payload_start + offset;
      t.bytes.assign(bytes.begin() + t.file_offset, bytes.begin() + t.file_offset + nbytes);
      for (auto it = entry.begin(); it != entry.end(); ++it) {
        const std::string& key = it.key();
        if (key != "name" && key != "dtype" && key != "shape" && key != "offset" && key != "nbytes")
          t.attrs[key] = it.value();
      }
      c.tensors.push_back(std::move(t));
    }
    for (auto it = header.begin(); it != header.end(); ++it)
      if (it.key() != "tensors" && it.key() != "payload_bytes") c.meta[it.key()] = it.value();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kPreambleBytes, std::string("malformed header field: ") + e.what());
  }
  return c;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::string& path) {
  const auto b = read_file(path);
  return {b.begin(), b.end()};
}

std::vector<std::uint8_t> encode_f32(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

std::vector<float> decode_f32(const ContainerTensor& t) {
  std::vector<float> out(t.bytes.size() / 4);
  if (!out.empty()) std::memcpy(out.data(), t.bytes.data(), out.size() * 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!std::isfinite(out[i])) throw FormatError(t.file_offset + 4 * i, t.name + ": non-finite value");
  return out;
}

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace moeprec
