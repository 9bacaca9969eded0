// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeprec/error.hpp"

namespace moeprec {

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Validation:
    case ErrorKind::Shape:
    case ErrorKind::Coverage:
      return 2;
    case ErrorKind::Format:
    case ErrorKind::Io:
      return 3;
    case ErrorKind::Degenerate:
      return 4;
  }
  return 1;
}

const char* kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Coverage: return "coverage";
    case ErrorKind::Format: return "format";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

FormatError::FormatError(std::uint64_t offset, const std::string& what)
    : Error(ErrorKind::Format, what + " (at byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

}  // namespace moeprec
