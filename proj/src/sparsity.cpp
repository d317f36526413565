// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/sparsity.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <tuple>

namespace sdb {

const char* scheme_name(SparsityScheme s) {
    switch (s) {
        case SparsityScheme::Uniform: return "uniform";
        case SparsityScheme::ModalitySpecific: return "modality-specific";
        case SparsityScheme::MatrixSpecific: return "matrix-specific";
    }
    return "?";
}

SparsityScheme parse_scheme(const std::string& name) {
    for (auto s : {SparsityScheme::Uniform, SparsityScheme::ModalitySpecific, SparsityScheme::MatrixSpecific})
        if (name == scheme_name(s)) return s;
    throw std::invalid_argument("unknown sparsity scheme '" + name + "'");
}

double ModuleSizes::at(Modality m) const {
    switch (m) {
        case Modality::Language: return language;
        case Modality::Visual: return visual;
        case Modality::Cross: return cross;
    }
    return 0.0;
}

ModuleSizes module_sizes(const std::vector<ParamSpec>& manifest) {
    ModuleSizes s;
    for (const auto& p : manifest) {
        if (!p.prunable) continue;
        const auto n = static_cast<double>(shape_numel(p.shape));
        switch (p.tag) {
            case ModuleTag::Language: s.language += n; break;
            case ModuleTag::Visual: s.visual += n; break;
            case ModuleTag::Cross: s.cross += n; break;
            case ModuleTag::Pooler: s.pooler += n; break;
            case ModuleTag::Classifier: break;
        }
    }
    return s;
}

ModuleSizes module_sizes(const ParameterRegistry& registry) { return module_sizes(registry.manifest()); }

ModuleSizes reference_module_sizes() { return {83.1, 35.3, 78.8, 0.5}; }

SparsityConfig SparsityConfig::uniform(double s, ModuleSizes sizes) {
    SparsityConfig c;
    c.overall = s;
    c.scheme = SparsityScheme::Uniform;
    c.modality = std::array<double, 3>{s, s, s};
    c.sizes = sizes;
    return c;
}

SparsityConfig SparsityConfig::modality_specific(double s, double s_l, double s_r, double s_x, ModuleSizes sizes) {
    SparsityConfig c;
    c.overall = s;
    c.scheme = SparsityScheme::ModalitySpecific;
    c.modality = std::array<double, 3>{s_l, s_r, s_x};
    c.sizes = sizes;
    return c;
}

SparsityConfig SparsityConfig::matrix_specific(double s, ModuleSizes sizes) {
    SparsityConfig c;
    c.overall = s;
    c.scheme = SparsityScheme::MatrixSpecific;
    c.sizes = sizes;
    return c;
}

double SparsityConfig::module_target(ModuleTag tag) const {
    if (scheme == SparsityScheme::MatrixSpecific) {
        throw std::logic_error("matrix-specific sparsity has no fixed per-module target");
    }
    const std::array<double, 3> m = modality.value_or(std::array<double, 3>{overall, overall, overall});
    switch (tag) {
        case ModuleTag::Language: return m[0];
        case ModuleTag::Visual: return m[1];
        case ModuleTag::Cross: return m[2];
        case ModuleTag::Pooler: return overall;
        case ModuleTag::Classifier: return 0.0;
    }
    return overall;
}

std::string SparsityConfig::label() const {
    char buf[96];
    if (scheme == SparsityScheme::ModalitySpecific && modality) {
        std::snprintf(buf, sizeof buf, "s=%.2f L=%.2f R=%.2f X=%.2f", overall, (*modality)[0], (*modality)[1], (*modality)[2]);
    } else {
        std::snprintf(buf, sizeof buf, "s=%.2f %s", overall, scheme_name(scheme));
    }
    return buf;
}

SolveResult solve_third(double overall, Modality unknown, double first, double second, const ModuleSizes& sizes) {
    if (!(sizes.language > 0 && sizes.visual > 0 && sizes.cross > 0)) {
        throw std::invalid_argument("solve_third: module sizes must be positive");
    }
    // `first` and `second` follow (L, R, X) order with the unknown removed.
    std::array<Modality, 2> known{};
    switch (unknown) {
        case Modality::Language: known = {Modality::Visual, Modality::Cross}; break;
        case Modality::Visual: known = {Modality::Language, Modality::Cross}; break;
        case Modality::Cross: known = {Modality::Language, Modality::Visual}; break;
    }
    const double rest = overall * sizes.budget_total() - first * sizes.at(known[0]) - second * sizes.at(known[1]);
    SolveResult r;
    r.value = rest / sizes.at(unknown);
    constexpr double tol = 1e-12;
    r.feasible = r.value >= -tol && r.value <= 1.0 + tol;
    if (r.feasible) r.value = std::clamp(r.value, 0.0, 1.0);
    return r;
}

OverallCheck verify_overall(const SparsityConfig& config, double tolerance) {
    if (!config.modality) throw std::invalid_argument("verify_overall: module sparsities missing");
    const auto& m = *config.modality;
    const ModuleSizes& s = config.sizes;
    OverallCheck c;
    c.overall = (m[0] * s.language + m[1] * s.visual + m[2] * s.cross) / s.budget_total();
    const double diff = std::fabs(c.overall - config.overall);
    c.residual = config.overall != 0.0 ? diff / std::fabs(config.overall) : diff;
    c.ok = c.residual <= tolerance;
    return c;
}

double round2(double x) {
    const double scaled = std::fabs(x) * 100.0;
    // Nudge values like 0.405 that sit just below the half due to representation.
    const double r = std::floor(scaled + 0.5 + 1e-9) / 100.0;
    return std::copysign(r, x);
}

std::vector<GridPoint> grid_from_levels(double overall, const std::vector<double>& levels, const ModuleSizes& sizes,
                                        bool include_uniform) {
    std::vector<GridPoint> cand;
    for (double a : levels) {
        for (double b : levels) {
            if (auto x = solve_third(overall, Modality::Cross, a, b, sizes); x.feasible) cand.push_back({a, b, x.value, true});
            if (auto r = solve_third(overall, Modality::Visual, a, b, sizes); r.feasible) cand.push_back({a, r.value, b, true});
            if (auto l = solve_third(overall, Modality::Language, a, b, sizes); l.feasible) cand.push_back({l.value, a, b, true});
        }
    }
    // The uniform point always meets the budget; it is the only one when s = 1.
    if (include_uniform && overall >= 0.0 && overall <= 1.0) cand.push_back({overall, overall, overall, true});

    std::stable_sort(cand.begin(), cand.end(), [](const GridPoint& p, const GridPoint& q) {
        return std::tie(p.s_l, p.s_r) < std::tie(q.s_l, q.s_r);
    });
    std::vector<GridPoint> out;
    std::set<std::tuple<long, long, long>> seen;
    for (const auto& p : cand) {
        auto key = std::make_tuple(std::lround(round2(p.s_l) * 100), std::lround(round2(p.s_r) * 100),
                                   std::lround(round2(p.s_x) * 100));
        if (seen.insert(key).second) out.push_back(p);
    }
    return out;
}

std::vector<GridPoint> coarse_grid(double overall, const ModuleSizes& sizes) {
    return grid_from_levels(overall, {0.1, 0.3, 0.5, 0.7, 0.9}, sizes);
}

std::vector<GridPoint> refine_grid(const Region& region, double overall, const ModuleSizes& sizes, double step) {
    if (region.lo < 0.0 || region.hi > 1.0) throw std::invalid_argument("refine_grid: region outside [0,1]");
    if (!(step > 0.0)) throw std::invalid_argument("refine_grid: step must be positive");
    if (region.lo > region.hi) return {};
    std::vector<double> levels;
    for (std::size_t i = 0;; ++i) {
        const double v = std::round((region.lo + static_cast<double>(i) * step) * 1e9) / 1e9;
        if (v > region.hi + 1e-9) break;
        levels.push_back(v);
    }
    const bool uniform_inside = overall >= region.lo - 1e-9 && overall <= region.hi + 1e-9;
    return grid_from_levels(overall, levels, sizes, uniform_inside);
}

void write_grid_csv(std::ostream& out, const std::vector<GridPoint>& grid) {
    out << "s_L,s_R,s_X,feasible\n";
    char buf[128];
    for (const auto& p : grid) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f,%s\n", round2(p.s_l), round2(p.s_r), round2(p.s_x),
                      p.feasible ? "true" : "false");
        out << buf;
    }
}

std::size_t pruned_count(std::size_t size, double sparsity) {
    if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw std::invalid_argument("sparsity " + std::to_string(sparsity) + " outside [0,1]");
    const double raw = sparsity * static_cast<double>(size);
    const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::min(n, size);
}

std::map<std::string, double> matrix_specific_targets(const ParameterRegistry& registry, double overall,
                                                      const std::map<std::string, std::vector<double>>* scores) {
    struct Item {
        double score;
        std::size_t matrix;
        std::size_t index;
    };
    std::vector<Item> items;
    std::vector<const ParamEntry*> mats;
    for (const auto& e : registry.entries()) {
        if (!e.prunable) continue;
        const std::size_t mi = mats.size();
        mats.push_back(&e);
        const std::vector<double>* sc = nullptr;
        if (scores) {
            auto it = scores->find(e.name);
            if (it == scores->end() || it->second.size() != e.value.size()) {
                throw std::invalid_argument("matrix_specific_targets: missing or mis-sized scores for " + e.name);
            }
            sc = &it->second;
        }
        for (std::size_t i = 0; i < e.value.size(); ++i) items.push_back({sc ? (*sc)[i] : std::fabs(e.value[i]), mi, i});
    }
    const std::size_t prune = pruned_count(items.size(), overall);
    std::vector<std::size_t> pruned_per(mats.size(), 0);
    if (prune > 0) {
        std::nth_element(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(prune - 1), items.end(),
                         [](const Item& a, const Item& b) {
                             return std::tie(a.score, a.matrix, a.index) < std::tie(b.score, b.matrix, b.index);
                         });
        for (std::size_t i = 0; i < prune; ++i) ++pruned_per[items[i].matrix];
    }
    std::map<std::string, double> out;
    for (std::size_t m = 0; m < mats.size(); ++m) {
        out[mats[m]->name] = static_cast<double>(pruned_per[m]) / static_cast<double>(mats[m]->value.size());
    }
    return out;
}

std::map<std::string, double> per_matrix_targets(const ParameterRegistry& registry, const SparsityConfig& config) {
    if (config.scheme == SparsityScheme::MatrixSpecific) return matrix_specific_targets(registry, config.overall);
    std::map<std::string, double> out;
    for (const auto& e : registry.entries()) {
        if (e.prunable) out[e.name] = config.module_target(e.tag);
    }
    return out;
}

}  // namespace sdb
