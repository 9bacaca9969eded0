// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "moeprec/container.hpp"
#include "moeprec/model.hpp"

namespace moeprec {

Container model_to_container(const MoEModel& m);
MoEModel model_from_container(const Container& c);

void save_model(const MoEModel& m, const std::string& path);
MoEModel load_model(const std::string& path);

/// Calibration / evaluation tokens: a version-1 container with one "tokens" tensor.
Container tokens_to_container(const CalibrationSet& s);
CalibrationSet tokens_from_container(const Container& c);
void save_tokens(const CalibrationSet& s, const std::string& path);
CalibrationSet load_tokens(const std::string& path);

/// Content hash of the encoded model; stable identity for maps and manifests.
std::string model_fingerprint(const MoEModel& m);

}  // namespace moeprec
