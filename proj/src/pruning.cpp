// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/pruning.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sdb {

namespace {

double target_for(const SparsityTargets& targets, const std::string& name) {
    auto it = targets.find(name);
    if (it == targets.end()) throw std::invalid_argument("no sparsity target for matrix " + name);
    if (!(it->second >= 0.0 && it->second <= 1.0)) {
        throw std::invalid_argument("sparsity target " + std::to_string(it->second) + " for " + name + " outside [0,1]");
    }
    return it->second;
}

// Indices of the `keep` largest scores; ties keep the larger flat index so the
// smaller one is pruned first, as in magnitude pruning.
std::vector<std::size_t> top_indices(std::span<const double> score, std::size_t keep) {
    std::vector<std::size_t> idx(score.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (keep == 0) return {};
    auto better = [&](std::size_t a, std::size_t b) { return score[a] > score[b] || (score[a] == score[b] && a > b); };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep - 1), idx.end(), better);
    idx.resize(keep);
    return idx;
}

// Threshold admitting exactly the `keep` top entries of `real`; entries tied
// with the threshold that fall outside the kept set are nudged one ulp down.
double exact_threshold(std::vector<std::span<double>> parts, std::size_t keep) {
    std::vector<double> flat;
    for (auto p : parts) flat.insert(flat.end(), p.begin(), p.end());
    if (flat.empty()) return kInitialThreshold;
    if (keep == 0) {
        const double mx = *std::max_element(flat.begin(), flat.end());
        return std::nextafter(mx, std::numeric_limits<double>::infinity());
    }
    auto kept = top_indices(flat, keep);
    double phi = std::numeric_limits<double>::infinity();
    std::vector<char> is_kept(flat.size(), 0);
    for (std::size_t i : kept) {
        is_kept[i] = 1;
        phi = std::min(phi, flat[i]);
    }
    std::size_t offset = 0;
    for (auto p : parts) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!is_kept[offset + i] && p[i] >= phi) p[i] = std::nextafter(phi, -std::numeric_limits<double>::infinity());
        }
        offset += p.size();
    }
    return phi;
}

}  // namespace

Tensor magnitude_mask(const Tensor& weight, double sparsity) {
    const std::size_t n = weight.size();
    const std::size_t keep = n - pruned_count(n, sparsity);
    std::vector<double> mag(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::fabs(weight[i]);
    Tensor m(weight.shape(), 0.0);
    // Ties among equal magnitudes prune the smaller flat index first, so the
    // larger index survives.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (keep > 0) {
        auto prune_first = [&](std::size_t a, std::size_t b) { return mag[a] < mag[b] || (mag[a] == mag[b] && a < b); };
        const std::size_t prune = n - keep;
        if (prune > 0) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(prune - 1), idx.end(), prune_first);
        for (std::size_t i = prune; i < n; ++i) m[idx[i]] = 1.0;
    }
    return m;
}

MaskSet omp(const ParameterRegistry& registry, const SparsityTargets& targets) {
    MaskSet set;
    for (const auto& e : registry.entries()) {
        if (!e.prunable) continue;
        MatrixMask mm;
        mm.name = e.name;
        mm.target_sparsity = target_for(targets, e.name);
        mm.binary = magnitude_mask(e.value, mm.target_sparsity);
        set.add(std::move(mm));
    }
    return set;
}

MaskSet full_mask(const ParameterRegistry& registry) {
    MaskSet set;
    for (const auto& e : registry.entries()) {
        if (!e.prunable) continue;
        MatrixMask mm;
        mm.name = e.name;
        mm.binary = Tensor(e.value.shape(), 1.0);
        set.add(std::move(mm));
    }
    return set;
}

Tensor binarize(std::span<const double> real, const Shape& shape, double threshold) {
    if (real.size() != shape_numel(shape)) throw std::invalid_argument("binarize: mask length does not match " + shape_str(shape));
    Tensor m(shape, 0.0);
    for (std::size_t i = 0; i < real.size(); ++i) m[i] = real[i] >= threshold ? 1.0 : 0.0;
    return m;
}

MaskSet init_real_mask(const ParameterRegistry& registry, const SparsityTargets& targets, const MaskHyperparams& hyper) {
    if (hyper.alpha < 1.0) throw std::invalid_argument("init_real_mask: alpha must be >= 1, got " + std::to_string(hyper.alpha));
    MaskSet set = omp(registry, targets);
    set.hyper = hyper;
    for (auto& mm : set.matrices()) {
        mm.threshold = hyper.initial_threshold;
        mm.real.resize(mm.binary.size());
        for (std::size_t i = 0; i < mm.real.size(); ++i) mm.real[i] = mm.binary[i] != 0.0 ? hyper.alpha * hyper.initial_threshold : 0.0;
        mm.binary = binarize(mm.real, mm.binary.shape(), mm.threshold);
    }
    return set;
}

MaskSet random_init_real_mask(const ParameterRegistry& registry, const SparsityTargets& targets,
                              const MaskHyperparams& hyper, std::uint64_t seed) {
    MaskSet set;
    set.hyper = hyper;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 2.0 * hyper.initial_threshold);
    for (const auto& e : registry.entries()) {
        if (!e.prunable) continue;
        MatrixMask mm;
        mm.name = e.name;
        mm.target_sparsity = target_for(targets, e.name);
        mm.real.resize(e.value.size());
        for (double& v : mm.real) v = unit(rng);
        mm.threshold = hyper.initial_threshold;
        mm.binary = Tensor(e.value.shape(), 0.0);
        set.add(std::move(mm));
    }
    recompute_thresholds(set);
    return set;
}

void recompute_thresholds(MaskSet& masks) {
    if (masks.global_threshold) {
        std::vector<std::span<double>> parts;
        std::size_t total = 0;
        double pruned_weighted = 0.0;
        for (auto& mm : masks.matrices()) {
            if (!mm.has_real()) throw std::logic_error("recompute_thresholds: matrix " + mm.name + " has no real mask");
            parts.emplace_back(mm.real);
            total += mm.real.size();
            pruned_weighted += mm.target_sparsity * static_cast<double>(mm.real.size());
        }
        const double overall = total ? pruned_weighted / static_cast<double>(total) : 0.0;
        const std::size_t keep = total - pruned_count(total, std::min(1.0, overall));
        const double phi = exact_threshold(parts, keep);
        for (auto& mm : masks.matrices()) {
            mm.threshold = phi;
            mm.binary = binarize(mm.real, mm.binary.shape(), phi);
        }
        return;
    }
    for (auto& mm : masks.matrices()) {
        if (!mm.has_real()) throw std::logic_error("recompute_thresholds: matrix " + mm.name + " has no real mask");
        const std::size_t n = mm.real.size();
        const std::size_t keep = n - pruned_count(n, mm.target_sparsity);
        mm.threshold = exact_threshold({std::span<double>(mm.real)}, keep);
        mm.binary = binarize(mm.real, mm.binary.shape(), mm.threshold);
    }
}

void set_mask_grad(MaskSet& masks, bool enabled) {
    for (auto& mm : masks.matrices()) {
        mm.binary.set_requires_grad(enabled);
        if (!enabled) mm.binary.drop_grad();
    }
}

MaskStepResult mask_train_step(MaskSet& masks, const MaskLossFn& loss_fn, std::size_t step_index, std::size_t batch_id) {
    set_mask_grad(masks, true);
    for (auto& mm : masks.matrices()) {
        if (!mm.has_real()) throw std::logic_error("mask_train_step: matrix " + mm.name + " has no real mask");
        mm.binary.zero_grad();
    }
    MaskStepResult res;
    {
        Tape tape;
        Var loss = loss_fn(tape, masks);
        res.loss = loss.item();
        if (!std::isfinite(res.loss)) {
            throw std::runtime_error("mask_train_step: non-finite loss on batch " + std::to_string(batch_id));
        }
        tape.backward(loss);
    }
    const double lr = masks.hyper.learning_rate;
    for (auto& mm : masks.matrices()) {
        if (!mm.binary.has_grad()) continue;
        auto g = mm.binary.grad();
        for (std::size_t i = 0; i < mm.real.size(); ++i) mm.real[i] -= lr * g[i];
    }
    const std::size_t interval = masks.hyper.recompute_interval;
    if (interval > 0 && step_index % interval == 0) {
        recompute_thresholds(masks);
        res.recomputed = true;
    } else {
        for (auto& mm : masks.matrices()) {
            Tensor b = binarize(mm.real, mm.binary.shape(), mm.threshold);
            b.set_requires_grad(true);
            mm.binary = std::move(b);
        }
    }
    set_mask_grad(masks, true);
    return res;
}

SparsityAudit audit_sparsity(const MaskSet& masks, const ParameterRegistry& registry, const SparsityConfig& config,
                             std::size_t slack) {
    SparsityAudit a;
    a.target_overall = config.overall;
    std::size_t total = 0, survivors = 0;
    for (const auto& e : registry.entries()) {
        if (!e.prunable) continue;
        const MatrixMask* mm = masks.find(e.name);
        if (!mm) {
            a.failures.push_back("missing mask for " + e.name);
            continue;
        }
        MatrixAudit ma;
        ma.name = e.name;
        ma.tag = e.tag;
        ma.total = mm->binary.size();
        ma.survivors = mm->survivors();
        if (config.scheme != SparsityScheme::MatrixSpecific) {
            const double target = config.module_target(e.tag);
            ma.expected_survivors = ma.total - pruned_count(ma.total, target);
            const auto diff = ma.survivors > ma.expected_survivors ? ma.survivors - ma.expected_survivors
                                                                   : ma.expected_survivors - ma.survivors;
            if (diff > slack) {
                a.failures.push_back(e.name + ": " + std::to_string(ma.survivors) + " survivors, expected " +
                                     std::to_string(ma.expected_survivors));
            }
            a.modules[e.tag].target_sparsity = target;
        }
        auto& mod = a.modules[e.tag];
        mod.total += ma.total;
        mod.survivors += ma.survivors;
        total += ma.total;
        survivors += ma.survivors;
        a.matrices.push_back(std::move(ma));
    }
    a.overall_sparsity = total ? 1.0 - static_cast<double>(survivors) / static_cast<double>(total) : 0.0;
    if (config.scheme == SparsityScheme::MatrixSpecific) {
        const std::size_t expected = total - pruned_count(total, config.overall);
        const auto diff = survivors > expected ? survivors - expected : expected - survivors;
        if (diff > slack) {
            a.failures.push_back("overall: " + std::to_string(survivors) + " survivors, expected " + std::to_string(expected));
        }
        for (auto& [tag, mod] : a.modules) mod.target_sparsity = config.overall;
    }
    a.pass = a.failures.empty();
    return a;
}

std::string SparsityAudit::to_json() const {
    nlohmann::json j;
    j["pass"] = pass;
    j["overall_sparsity"] = overall_sparsity;
    j["target_overall"] = target_overall;
    nlohmann::json mods = nlohmann::json::object();
    for (const auto& [tag, m] : modules) {
        mods[tag_name(tag)] = {{"total", m.total}, {"survivors", m.survivors}, {"sparsity", m.sparsity()},
                               {"target_sparsity", m.target_sparsity}};
    }
    j["modules"] = mods;
    nlohmann::json mats = nlohmann::json::array();
    for (const auto& m : matrices) {
        mats.push_back({{"name", m.name}, {"module", tag_name(m.tag)}, {"total", m.total}, {"survivors", m.survivors},
                        {"expected_survivors", m.expected_survivors}});
    }
    j["matrices"] = mats;
    j["failures"] = failures;
    return j.dump(2);
}

}  // namespace sdb
