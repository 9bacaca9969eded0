// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace moeprec {

/// Worker count used by parallel_for. Results never depend on it.
void set_thread_count(std::size_t n) noexcept;
std::size_t thread_count() noexcept;

/// Runs fn(i) for i in [0, n). If any task throws, the exception of the lowest
/// failing index is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace moeprec
