// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/checkpoint.h"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json_fields.h"

namespace sdb {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'B', 'C', 'K', 'P', 'T', '\0'};

void write_doubles(std::ostream& out, std::span<const double> v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::span<double> v, const std::string& what) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated while reading " + what);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json h;
    h["version"] = kCheckpointVersion;
    h["tag"] = ckpt.tag;
    h["config"] = ckpt.registry.config;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& e : ckpt.registry.entries()) {
        params.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"module", tag_name(e.tag)}, {"prunable", e.prunable}});
    }
    h["params"] = params;
    h["gate_size"] = ckpt.gate_weight.size();
    if (ckpt.masks) {
        nlohmann::json m;
        m["alpha"] = ckpt.masks->hyper.alpha;
        m["initial_threshold"] = ckpt.masks->hyper.initial_threshold;
        m["recompute_interval"] = ckpt.masks->hyper.recompute_interval;
        m["learning_rate"] = ckpt.masks->hyper.learning_rate;
        m["global_threshold"] = ckpt.masks->global_threshold;
        nlohmann::json mats = nlohmann::json::array();
        for (const auto& mm : ckpt.masks->matrices()) {
            mats.push_back({{"name", mm.name}, {"shape", mm.binary.shape()}, {"threshold", mm.threshold},
                            {"target_sparsity", mm.target_sparsity}, {"has_real", mm.has_real()}});
        }
        m["matrices"] = mats;
        h["masks"] = m;
    }
    const std::string header = h.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& e : ckpt.registry.entries()) write_doubles(out, e.value.data());
    write_doubles(out, ckpt.gate_weight.data());
    if (ckpt.masks) {
        for (const auto& mm : ckpt.masks->matrices()) {
            std::vector<std::uint8_t> bits((mm.binary.size() + 7) / 8, 0);
            for (std::size_t i = 0; i < mm.binary.size(); ++i)
                if (mm.binary[i] != 0.0) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
            out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
        }
        for (const auto& mm : ckpt.masks->matrices())
            if (mm.has_real()) write_doubles(out, mm.real);
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(path + " is not a checkpoint");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1u << 30)) throw std::runtime_error("checkpoint header corrupt in " + path);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("checkpoint truncated in header: " + path);
    const auto h = nlohmann::json::parse(header);
    if (h.at("version").get<int>() != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + h.at("version").dump());
    }
    Checkpoint c;
    c.tag = h.at("tag").get<std::string>();
    c.registry.config = h.at("config").get<ModelConfig>();
    for (const auto& p : h.at("params")) {
        Tensor t(p.at("shape").get<Shape>());
        read_doubles(in, t.data(), p.at("name").get<std::string>());
        c.registry.add(p.at("name").get<std::string>(), std::move(t), parse_tag(p.at("module").get<std::string>()),
                       p.at("prunable").get<bool>());
    }
    const auto expected = model_manifest(c.registry.config);
    const auto got = c.registry.manifest();
    if (expected.size() != got.size()) throw std::runtime_error("checkpoint manifest does not match its model config");
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (expected[i].name != got[i].name || expected[i].shape != got[i].shape) {
            throw std::runtime_error("checkpoint parameter " + got[i].name + " does not match the model config");
        }
    }
    c.gate_weight = Tensor({h.at("gate_size").get<std::size_t>()});
    read_doubles(in, c.gate_weight.data(), "gate weight");
    if (h.contains("masks")) {
        const auto& m = h.at("masks");
        MaskSet set;
        set.hyper.alpha = m.at("alpha").get<double>();
        set.hyper.initial_threshold = m.at("initial_threshold").get<double>();
        set.hyper.recompute_interval = m.at("recompute_interval").get<std::size_t>();
        set.hyper.learning_rate = m.at("learning_rate").get<double>();
        set.global_threshold = m.at("global_threshold").get<bool>();
        for (const auto& mj : m.at("matrices")) {
            MatrixMask mm;
            mm.name = mj.at("name").get<std::string>();
            mm.binary = Tensor(mj.at("shape").get<Shape>());
            mm.threshold = mj.at("threshold").get<double>();
            mm.target_sparsity = mj.at("target_sparsity").get<double>();
            std::vector<std::uint8_t> bits((mm.binary.size() + 7) / 8);
            in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
            if (!in) throw std::runtime_error("checkpoint truncated in mask " + mm.name);
            for (std::size_t i = 0; i < mm.binary.size(); ++i) mm.binary[i] = (bits[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
            if (mj.at("has_real").get<bool>()) mm.real.resize(mm.binary.size());
            set.add(std::move(mm));
        }
        for (auto& mm : set.matrices())
            if (mm.has_real()) read_doubles(in, mm.real, "real mask " + mm.name);
        c.masks = std::move(set);
    }
    return c;
}

}  // namespace sdb
