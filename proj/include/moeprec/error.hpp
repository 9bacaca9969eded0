// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace moeprec {

enum class ErrorKind {
  Validation,  // bad arguments, palettes, configs
  Shape,       // dimension mismatch between operands
  Coverage,    // plan/map/model structures disagree
  Format,      // container or JSON could not be parsed
  Degenerate,  // numeric degeneracy (zero-norm weights, unrepresentable scales)
  Io,
};

/// Process exit code for an error kind: 2 usage/validation, 3 format, 4 numeric.
int exit_code(ErrorKind kind) noexcept;
const char* kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& what);
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

inline Error validation_error(const std::string& what) { return Error(ErrorKind::Validation, what); }
inline Error shape_error(const std::string& what) { return Error(ErrorKind::Shape, what); }
inline Error coverage_error(const std::string& what) { return Error(ErrorKind::Coverage, what); }
inline Error degenerate_error(const std::string& what) { return Error(ErrorKind::Degenerate, what); }

}  // namespace moeprec
