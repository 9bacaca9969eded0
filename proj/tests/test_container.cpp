// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "moeprec/container.hpp"
#include "moeprec/error.hpp"
#include "moeprec/rng.hpp"

namespace moeprec {
namespace {

Container sample() {
  Container c;
  c.meta["kind"] = "test";
  c.tensors.push_back({"a", "f32", 2, 3, encode_f32(std::vector<float>{1, 2, 3, 4, 5, 6})});
  c.tensors.push_back({"b", "f32", 1, 1, encode_f32(std::vector<float>{-0.5f})});
  return c;
}

TEST(Container, RoundTrip) {
  const auto bytes = encode_container(sample());
  EXPECT_EQ(std::memcmp(bytes.data(), "MOPQ", 4), 0);
  const Container back = decode_container(bytes);
  EXPECT_EQ(back.version, kFloatVersion);
  EXPECT_EQ(back.meta.at("kind"), "test");
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(decode_f32(back.tensors[0]), (std::vector<float>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(back.find("b")->rows, 1u);
  EXPECT_EQ(back.find("zzz"), nullptr);
  EXPECT_EQ(encode_container(back), bytes);
}

TEST(Container, LittleEndianFloats) {
  const auto b = encode_f32(std::vector<float>{1.0f});
  EXPECT_EQ(b, (std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3f}));
}

TEST(Container, RejectsBadMagic) {
  auto bytes = encode_container(sample());
  bytes[0] = 'X';
  try {
    decode_container(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Container, RejectsTrailingBytes) {
  auto bytes = encode_container(sample());
  bytes.push_back(0);
  EXPECT_THROW(decode_container(bytes), FormatError);
}

TEST(Container, RejectsNonFiniteF32) {
  Container c;
  c.tensors.push_back({"a", "f32", 1, 1, encode_f32(std::vector<float>{std::numeric_limits<float>::quiet_NaN()})});
  const Container back = decode_container(encode_container(c));
  EXPECT_THROW(decode_f32(back.tensors[0]), FormatError);
}

TEST(Container, EveryTruncationIsClassified) {
  const auto bytes = encode_container(sample());
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(decode_container(cut), FormatError) << "length " << n;
  }
}

TEST(Container, RandomBitFlipsNeverCrash) {
  const auto bytes = encode_container(sample());
  RngStream rng(1, 1);
  for (int i = 0; i < 2000; ++i) {
    auto copy = bytes;
    const std::size_t pos = rng.next_u64() % copy.size();
    copy[pos] ^= static_cast<std::uint8_t>(1u << (rng.next_u64() % 8));
    try {
      const Container c = decode_container(copy);
      for (const auto& t : c.tensors)
        if (t.dtype == "f32") (void)decode_f32(t);
    } catch (const FormatError&) {
    }
  }
}

TEST(Container, FnvKnownValue) {
  // FNV-1a 64 of the empty input is the offset basis.
  EXPECT_EQ(fnv1a_hex({}), "cbf29ce484222325");
  const std::string a = "a";
  EXPECT_EQ(fnv1a_hex(std::span(reinterpret_cast<const std::uint8_t*>(a.data()), 1)), "af63dc4c8601ec8c");
}

}  // namespace
}  // namespace moeprec
