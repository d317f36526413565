// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// nlohmann::json bindings shared by the file formats.

#pragma once

#include <nlohmann/json.hpp>

#include "sdb/model.h"
#include "sdb/synth.h"

namespace sdb {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

}  // namespace sdb
