// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/model.h"

#include <cstring>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace sdb {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid model config: " + msg); };
    if (d_model == 0 || d_ffn == 0 || heads == 0) fail("d_model, d_ffn and heads must be positive");
    if (d_model % heads != 0) fail("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
    if (lang_layers < 1 || vis_layers < 1 || cross_layers < 1) fail("layer counts must be >= 1");
    if (vocab_size < 1 || visual_dim < 1 || answer_count < 2 || pooled_dim < 1) fail("vocab, visual dim, pooled dim must be positive and answers >= 2");
    if (max_question_len < 1 || visual_objects < 1) fail("input lengths must be positive");
}

ModelConfig reference_scale_config() {
    ModelConfig c;
    c.d_model = 768;
    c.d_ffn = 3072;
    c.heads = 12;
    c.lang_layers = 9;
    c.vis_layers = 5;
    c.cross_layers = 5;
    c.vocab_size = 30522;
    c.visual_dim = 2048;
    c.answer_count = 3129;
    c.pooled_dim = 768;
    c.max_question_len = 20;
    c.visual_objects = 36;
    return c;
}

const char* tag_name(ModuleTag tag) {
    switch (tag) {
        case ModuleTag::Language: return "language";
        case ModuleTag::Visual: return "visual";
        case ModuleTag::Cross: return "cross";
        case ModuleTag::Pooler: return "pooler";
        case ModuleTag::Classifier: return "classifier";
    }
    return "?";
}

ModuleTag parse_tag(const std::string& name) {
    for (auto t : {ModuleTag::Language, ModuleTag::Visual, ModuleTag::Cross, ModuleTag::Pooler, ModuleTag::Classifier})
        if (name == tag_name(t)) return t;
    throw std::invalid_argument("unknown module tag '" + name + "'");
}

namespace {

class ManifestBuilder {
public:
    explicit ManifestBuilder(const ModelConfig& c) : c_(c) {}

    void weight(const std::string& name, std::size_t in, std::size_t out, ModuleTag tag) {
        specs.push_back({name + ".weight", {in, out}, tag, tag != ModuleTag::Classifier});
    }
    void bias(const std::string& name, std::size_t n, ModuleTag tag) { specs.push_back({name + ".bias", {n}, tag, false}); }
    void linear(const std::string& name, std::size_t in, std::size_t out, ModuleTag tag) {
        weight(name, in, out, tag);
        bias(name, out, tag);
    }
    void norm(const std::string& name, ModuleTag tag) {
        specs.push_back({name + ".gain", {c_.d_model}, tag, false});
        specs.push_back({name + ".bias", {c_.d_model}, tag, false});
    }
    void attention(const std::string& p, ModuleTag tag) {
        for (const char* m : {"q", "k", "v", "o"}) linear(p + "." + m, c_.d_model, c_.d_model, tag);
    }
    void ffn(const std::string& p, ModuleTag tag) {
        linear(p + ".in", c_.d_model, c_.d_ffn, tag);
        linear(p + ".out", c_.d_ffn, c_.d_model, tag);
    }
    void encoder_layer(const std::string& p, ModuleTag tag) {
        attention(p + ".attn", tag);
        norm(p + ".attn_ln", tag);
        ffn(p + ".ffn", tag);
        norm(p + ".ffn_ln", tag);
    }

    std::vector<ParamSpec> specs;

private:
    const ModelConfig& c_;
};

}  // namespace

std::vector<ParamSpec> model_manifest(const ModelConfig& cfg) {
    cfg.validate();
    ManifestBuilder b(cfg);
    const auto L = ModuleTag::Language, R = ModuleTag::Visual, X = ModuleTag::Cross;
    b.specs.push_back({"lang.embedding.weight", {cfg.vocab_size, cfg.d_model}, L, true});
    b.norm("lang.embedding_ln", L);
    b.linear("vis.fc", cfg.visual_dim, cfg.d_model, R);
    b.norm("vis.fc_ln", R);
    for (std::size_t t = 0; t < cfg.lang_layers; ++t) b.encoder_layer("lang.layer" + std::to_string(t), L);
    for (std::size_t i = 0; i < cfg.vis_layers; ++i) b.encoder_layer("vis.layer" + std::to_string(i), R);
    for (std::size_t x = 0; x < cfg.cross_layers; ++x) {
        const std::string p = "cross.layer" + std::to_string(x);
        b.attention(p + ".xattn", X);
        b.norm(p + ".xattn_lang_ln", X);
        b.norm(p + ".xattn_vis_ln", X);
        b.attention(p + ".lang_self", X);
        b.norm(p + ".lang_self_ln", X);
        b.attention(p + ".vis_self", X);
        b.norm(p + ".vis_self_ln", X);
        b.ffn(p + ".lang_ffn", X);
        b.norm(p + ".lang_ffn_ln", X);
        b.ffn(p + ".vis_ffn", X);
        b.norm(p + ".vis_ffn_ln", X);
    }
    b.linear("pooler", cfg.d_model, cfg.pooled_dim, ModuleTag::Pooler);
    b.linear("classifier", cfg.pooled_dim, cfg.answer_count, ModuleTag::Classifier);
    return std::move(b.specs);
}

// ---------------------------------------------------------------------------

ParamEntry& ParameterRegistry::add(std::string name, Tensor value, ModuleTag tag, bool prunable) {
    if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
    if (tag == ModuleTag::Classifier && prunable) throw std::invalid_argument("classifier parameter " + name + " cannot be prunable");
    entries_.push_back({std::move(name), std::move(value), tag, prunable});
    return entries_.back();
}

ParamEntry& ParameterRegistry::at(const std::string& name) {
    for (auto& e : entries_)
        if (e.name == name) return e;
    throw std::out_of_range("no parameter named " + name);
}

const ParamEntry& ParameterRegistry::at(const std::string& name) const {
    if (const auto* e = find(name)) return *e;
    throw std::out_of_range("no parameter named " + name);
}

const ParamEntry* ParameterRegistry::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e;
    return nullptr;
}

std::vector<ParamSpec> ParameterRegistry::manifest() const {
    std::vector<ParamSpec> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back({e.name, e.value.shape(), e.tag, e.prunable});
    return out;
}

std::uint64_t ParameterRegistry::checksum(bool include_classifier) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : entries_) {
        if (!include_classifier && e.tag == ModuleTag::Classifier) continue;
        const auto* bytes = reinterpret_cast<const unsigned char*>(e.value.data().data());
        for (std::size_t i = 0; i < e.value.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::size_t count_parameters(const std::vector<ParamSpec>& manifest, const CountFilter& filter) {
    std::size_t n = 0;
    for (const auto& s : manifest) {
        if (!filter.tags.contains(s.tag)) continue;
        if (filter.prunable_only && !s.prunable) continue;
        n += shape_numel(s.shape);
    }
    return n;
}

std::size_t count_parameters(const ParameterRegistry& registry, const CountFilter& filter) {
    return count_parameters(registry.manifest(), filter);
}

ParameterRegistry build_model(const ModelConfig& cfg, std::uint64_t seed) {
    auto specs = model_manifest(cfg);
    ParameterRegistry reg;
    reg.config = cfg;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (auto& s : specs) {
        Tensor t(s.shape, 0.0);
        const bool is_gain = s.name.size() > 5 && s.name.ends_with(".gain");
        if (is_gain) {
            for (double& v : t.data()) v = 1.0;
        } else if (s.shape.size() == 2) {
            for (double& v : t.data()) v = normal(rng);
        }
        reg.add(s.name, std::move(t), s.tag, s.prunable);
    }
    return reg;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

class Binder {
public:
    using Resolve = std::function<Var(const std::string&)>;
    // Empty for matrices without a mask (the classifier).
    using MaskResolve = std::function<std::optional<Var>(const std::string&)>;

    Binder(Tape& tape, const ModelConfig& cfg, Resolve param, MaskResolve mask)
        : tape_(tape), cfg_(cfg), param_(std::move(param)), mask_(std::move(mask)) {}

    Tape& tape() { return tape_; }
    const ModelConfig& cfg() const { return cfg_; }

    Var weight(const std::string& name) {
        Var w = param_(name);
        if (!mask_) return w;
        if (auto mo = mask_(name)) {
            Var m = *mo;
            if (m.shape() != w.shape()) {
                throw std::invalid_argument("mask for " + name + " has shape " + shape_str(m.shape()) +
                                            " but the weight has shape " + shape_str(w.shape()));
            }
            w = mul(w, m);
        }
        return w;
    }
    Var param(const std::string& name) { return param_(name); }

    Var linear(Var x, const std::string& p) { return add_row(matmul(x, weight(p + ".weight")), param(p + ".bias")); }
    Var norm(Var x, const std::string& p) { return layer_norm(x, param(p + ".gain"), param(p + ".bias")); }

    Var attend(Var xq, Var xkv, const std::string& p, std::size_t batch) {
        Var q = linear(xq, p + ".q");
        Var k = linear(xkv, p + ".k");
        Var v = linear(xkv, p + ".v");
        return linear(attention(q, k, v, batch, cfg_.heads), p + ".o");
    }
    Var ffn(Var x, const std::string& p) { return linear(gelu(linear(x, p + ".in")), p + ".out"); }

    Var encoder_layer(Var x, const std::string& p, std::size_t batch) {
        x = norm(add(x, attend(x, x, p + ".attn", batch)), p + ".attn_ln");
        return norm(add(x, ffn(x, p + ".ffn")), p + ".ffn_ln");
    }

private:
    Tape& tape_;
    const ModelConfig& cfg_;
    Resolve param_;
    MaskResolve mask_;
};

ForwardVars run_forward(Binder& b, const Batch& batch) {
    const ModelConfig& cfg = b.cfg();
    const std::size_t B = batch.size;
    if (B == 0) throw std::invalid_argument("forward: empty batch");
    if (batch.question_len == 0 || batch.question_len > cfg.max_question_len) {
        throw std::invalid_argument("forward: question length " + std::to_string(batch.question_len) + " outside [1, " +
                                    std::to_string(cfg.max_question_len) + "]");
    }
    if (batch.objects == 0 || batch.objects > cfg.visual_objects) {
        throw std::invalid_argument("forward: object count " + std::to_string(batch.objects) + " outside [1, " +
                                    std::to_string(cfg.visual_objects) + "]");
    }
    if (batch.tokens.size() != B * batch.question_len || batch.visual.size() != B * batch.objects * cfg.visual_dim) {
        throw std::invalid_argument("forward: batch buffers do not match the declared sizes");
    }

    Tape& tape = b.tape();
    Var lang = b.norm(embedding(b.weight("lang.embedding.weight"), batch.tokens), "lang.embedding_ln");
    Var vis = tape.constant({B * batch.objects, cfg.visual_dim}, batch.visual);
    vis = b.norm(b.linear(vis, "vis.fc"), "vis.fc_ln");

    for (std::size_t t = 0; t < cfg.lang_layers; ++t) lang = b.encoder_layer(lang, "lang.layer" + std::to_string(t), B);
    for (std::size_t i = 0; i < cfg.vis_layers; ++i) vis = b.encoder_layer(vis, "vis.layer" + std::to_string(i), B);

    for (std::size_t x = 0; x < cfg.cross_layers; ++x) {
        const std::string p = "cross.layer" + std::to_string(x);
        Var lang_x = b.norm(add(lang, b.attend(lang, vis, p + ".xattn", B)), p + ".xattn_lang_ln");
        Var vis_x = b.norm(add(vis, b.attend(vis, lang, p + ".xattn", B)), p + ".xattn_vis_ln");
        lang = b.norm(add(lang_x, b.attend(lang_x, lang_x, p + ".lang_self", B)), p + ".lang_self_ln");
        vis = b.norm(add(vis_x, b.attend(vis_x, vis_x, p + ".vis_self", B)), p + ".vis_self_ln");
        lang = b.norm(add(lang, b.ffn(lang, p + ".lang_ffn")), p + ".lang_ffn_ln");
        vis = b.norm(add(vis, b.ffn(vis, p + ".vis_ffn")), p + ".vis_ffn_ln");
    }

    std::vector<std::size_t> first(B);
    for (std::size_t i = 0; i < B; ++i) first[i] = i * batch.question_len;
    Var pooled = tanh(b.linear(take_rows(lang, first), "pooler"));
    Var logits = b.linear(pooled, "classifier");
    return {logits, pooled};
}

void check_mask_coverage(const ParameterRegistry& reg, const MaskSet& masks) {
    for (const auto& e : reg.entries()) {
        if (!e.prunable) continue;
        const auto* m = masks.find(e.name);
        if (!m) throw std::invalid_argument("mask set has no entry for prunable matrix " + e.name);
        if (m->binary.shape() != e.value.shape()) {
            throw std::invalid_argument("mask for " + e.name + " has shape " + shape_str(m->binary.shape()) +
                                        " but the weight has shape " + shape_str(e.value.shape()));
        }
    }
}

}  // namespace

ForwardVars forward(Tape& tape, ParameterRegistry& registry, MaskSet* masks, const Batch& batch) {
    if (masks) check_mask_coverage(registry, *masks);
    std::unordered_map<std::string, Tensor*> by_name;
    for (auto& e : registry.entries()) by_name.emplace(e.name, &e.value);
    Binder::Resolve param = [&](const std::string& n) { return tape.leaf(*by_name.at(n)); };
    Binder::MaskResolve mask;
    if (masks) {
        mask = [&](const std::string& n) -> std::optional<Var> {
            MatrixMask* m = masks->find(n);
            if (!m) return std::nullopt;
            return tape.leaf(m->binary);
        };
    }
    Binder b(tape, registry.config, param, mask);
    return run_forward(b, batch);
}

ForwardOutput forward(const ParameterRegistry& registry, const MaskSet* masks, const Batch& batch) {
    if (masks) check_mask_coverage(registry, *masks);
    Tape tape;
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& e : registry.entries()) by_name.emplace(e.name, &e.value);
    Binder::Resolve param = [&](const std::string& n) { return tape.constant_ref(*by_name.at(n)); };
    Binder::MaskResolve mask;
    if (masks) {
        mask = [&](const std::string& n) -> std::optional<Var> {
            const MatrixMask* m = masks->find(n);
            if (!m) return std::nullopt;
            return tape.constant_ref(m->binary);
        };
    }
    Binder b(tape, registry.config, param, mask);
    ForwardVars v = run_forward(b, batch);
    return {v.logits.to_tensor(), v.pooled.to_tensor()};
}

}  // namespace sdb
