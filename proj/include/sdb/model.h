// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Miniature two-stream cross-modal transformer: word embedding and visual fc,
// a language encoder, an object-relationship encoder, a cross-modality encoder,
// a pooler and an answer classifier.
//
// Every cross-modality layer holds one cross-attention module (shared by both
// directions), a language and a visual self-attention module, and one FFN after
// each self-attention module.

#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "sdb/autodiff.h"
#include "sdb/mask_set.h"
#include "sdb/tensor.h"

namespace sdb {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t d_ffn = 128;
    std::size_t heads = 4;
    std::size_t lang_layers = 4;     // T
    std::size_t vis_layers = 2;      // I
    std::size_t cross_layers = 2;    // X
    std::size_t vocab_size = 64;
    std::size_t visual_dim = 16;
    std::size_t answer_count = 16;
    std::size_t pooled_dim = 64;
    std::size_t max_question_len = 8;
    std::size_t visual_objects = 8;

    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Full-scale shapes of the published base model, for parameter accounting only.
ModelConfig reference_scale_config();

enum class ModuleTag : std::uint8_t { Language, Visual, Cross, Pooler, Classifier };

const char* tag_name(ModuleTag tag);
ModuleTag parse_tag(const std::string& name);

struct ParamSpec {
    std::string name;
    Shape shape;
    ModuleTag tag;
    bool prunable;
};

// Names, shapes and tags of every parameter, in registry order. No storage.
std::vector<ParamSpec> model_manifest(const ModelConfig& cfg);

struct ParamEntry {
    std::string name;
    Tensor value;
    ModuleTag tag;
    bool prunable;
};

class ParameterRegistry {
public:
    ModelConfig config;

    ParamEntry& add(std::string name, Tensor value, ModuleTag tag, bool prunable);
    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;
    const ParamEntry* find(const std::string& name) const;

    std::vector<ParamSpec> manifest() const;
    // FNV-1a over the raw bytes of every entry matching the predicate.
    std::uint64_t checksum(bool include_classifier = true) const;

private:
    std::vector<ParamEntry> entries_;
};

struct CountFilter {
    std::set<ModuleTag> tags;
    bool prunable_only = false;
};

std::size_t count_parameters(const std::vector<ParamSpec>& manifest, const CountFilter& filter);
std::size_t count_parameters(const ParameterRegistry& registry, const CountFilter& filter);

// Scaled-normal (std 0.02) weights and embeddings, zero biases, unit layer-norm gains.
ParameterRegistry build_model(const ModelConfig& cfg, std::uint64_t seed);

// Fixed-length model inputs for `size` examples.
struct Batch {
    std::size_t size = 0;
    std::size_t question_len = 0;
    std::vector<int> tokens;        // size * question_len
    std::size_t objects = 0;
    std::vector<double> visual;     // size * objects * visual_dim
};

struct ForwardVars {
    Var logits;   // [batch, answer_count]
    Var pooled;   // [batch, pooled_dim]
};

struct ForwardOutput {
    Tensor logits;
    Tensor pooled;
};

// Records the forward pass on `tape`. Parameters bind as leaves, so their
// requires_grad flags decide what receives gradient; likewise the binary mask
// tensors when `masks` is given. Each prunable matrix enters as m * W.
ForwardVars forward(Tape& tape, ParameterRegistry& registry, MaskSet* masks, const Batch& batch);

// Read-only forward.
ForwardOutput forward(const ParameterRegistry& registry, const MaskSet* masks, const Batch& batch);

}  // namespace sdb
