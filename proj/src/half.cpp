// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/half.hpp"

#include <cmath>
#include <string>

#include "moeprec/error.hpp"

namespace moeprec {

namespace {
constexpr std::uint16_t kMaxFinite = 0x7bff;  // 65504
}

double half_to_double(std::uint16_t bits) noexcept {
  const int exp = (bits >> 10) & 0x1f;
  const int mant = bits & 0x3ff;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(mant), -24);
  } else if (exp == 31) {
    v = mant ? NAN : INFINITY;
  } else {
    v = std::ldexp(static_cast<double>(1024 + mant), exp - 25);
  }
  return (bits & 0x8000) ? -v : v;
}

bool half_is_finite(std::uint16_t bits) noexcept { return ((bits >> 10) & 0x1f) != 31; }

std::uint16_t half_ceil(double x) {
  if (!(x > 0.0) || x > half_to_double(kMaxFinite))
    throw degenerate_error("scale " + std::to_string(x) + " is not representable as a positive binary16");
  // Positive binary16 patterns are monotone in value.
  std::uint16_t lo = 1, hi = kMaxFinite;
  while (lo < hi) {
    const auto mid = static_cast<std::uint16_t>(lo + (hi - lo) / 2);
    if (half_to_double(mid) >= x) {
      hi = mid;
    } else {
      lo = static_cast<std::uint16_t>(mid + 1);
    }
  }
  return lo;
}

}  // namespace moeprec
