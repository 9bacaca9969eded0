// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace moeprec {

/// IEEE binary16 helpers for stored quantization scales.
double half_to_double(std::uint16_t bits) noexcept;
bool half_is_finite(std::uint16_t bits) noexcept;
/// Smallest positive binary16 value >= x. Throws a degenerate error when x is
/// not positive or exceeds the binary16 range.
std::uint16_t half_ceil(double x);

}  // namespace moeprec
