// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

// nlohmann::json conversions for the core value types.

#pragma once

#include <nlohmann/json.hpp>

#include "moeup/model.hpp"

namespace moeup {

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace moeup
