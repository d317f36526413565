// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints: an 8-byte magic, a length-prefixed JSON header (format
// version, model config, tag, parameter manifest, mask metadata), then every
// parameter as row-major little-endian doubles, the LMH gate weight and, when
// present, bit-packed binary masks followed by real masks.

#pragma once

#include <optional>
#include <string>

#include "sdb/mask_set.h"
#include "sdb/model.h"

namespace sdb {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::string tag;  // e.g. "pretrained", "stage1", "stage3"
    ParameterRegistry registry;
    Tensor gate_weight;  // [pooled_dim]
    std::optional<MaskSet> masks;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Throws std::runtime_error on a bad magic, version, truncation or shape mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sdb
