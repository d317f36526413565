// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Sparsity allocation across the language, visual and cross-modality modules.
// A modality-specific triple (s_L, s_R, s_X) must meet the overall budget
//
//   s_L |Lan| + s_R |Vis| + s_X |X| = s (|Lan| + |Vis| + |X|)
//
// The pooler is held at the overall s and left out of the budget arithmetic.

#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdb/model.h"

namespace sdb {

enum class SparsityScheme { Uniform, ModalitySpecific, MatrixSpecific };

const char* scheme_name(SparsityScheme s);
SparsityScheme parse_scheme(const std::string& name);

enum class Modality : std::size_t { Language = 0, Visual = 1, Cross = 2 };

struct ModuleSizes {
    double language = 0.0;
    double visual = 0.0;
    double cross = 0.0;
    double pooler = 0.0;

    double at(Modality m) const;
    double budget_total() const { return language + visual + cross; }
};

// Prunable scalar counts per module of a registry.
ModuleSizes module_sizes(const ParameterRegistry& registry);
ModuleSizes module_sizes(const std::vector<ParamSpec>& manifest);
// Module sizes of the published base model, in millions.
ModuleSizes reference_module_sizes();

struct SparsityConfig {
    double overall = 0.0;
    SparsityScheme scheme = SparsityScheme::Uniform;
    // (s_L, s_R, s_X); set for the modality-specific scheme.
    std::optional<std::array<double, 3>> modality;
    ModuleSizes sizes;

    static SparsityConfig uniform(double s, ModuleSizes sizes = {});
    static SparsityConfig modality_specific(double s, double s_l, double s_r, double s_x, ModuleSizes sizes);
    static SparsityConfig matrix_specific(double s, ModuleSizes sizes = {});

    // Target sparsity for a module under the uniform or modality-specific scheme.
    double module_target(ModuleTag tag) const;
    std::string label() const;
};

struct SolveResult {
    double value = 0.0;
    bool feasible = false;  // value inside [0, 1]
};

// Solves the budget equality for the module `unknown` given the other two.
SolveResult solve_third(double overall, Modality unknown, double first, double second, const ModuleSizes& sizes);

struct OverallCheck {
    bool ok = false;
    double overall = 0.0;   // budget-weighted mean of the triple
    double residual = 0.0;  // |overall - target|, relative to the target (absolute when the target is 0)
};

OverallCheck verify_overall(const SparsityConfig& config, double tolerance = 1e-6);

struct GridPoint {
    double s_l = 0.0;
    double s_r = 0.0;
    double s_x = 0.0;
    bool feasible = false;
};

// For every pair of modules, walks `levels` on both, solves the third and keeps
// feasible, de-duplicated triples (first occurrence wins after rounding to two
// decimals, in (s_L, s_R) lexicographic order). The uniform triple is added
// when `include_uniform` is set.
std::vector<GridPoint> grid_from_levels(double overall, const std::vector<double>& levels, const ModuleSizes& sizes,
                                        bool include_uniform = true);
std::vector<GridPoint> coarse_grid(double overall, const ModuleSizes& sizes);

struct Region {
    double lo = 0.0;
    double hi = 1.0;
};

std::vector<GridPoint> refine_grid(const Region& region, double overall, const ModuleSizes& sizes, double step);

// Rounds half away from zero to two decimals.
double round2(double x);

// Columns s_L, s_R, s_X, feasible.
void write_grid_csv(std::ostream& out, const std::vector<GridPoint>& grid);

// Global magnitude ranking over every prunable scalar; returns each matrix's
// resulting sparsity. `magnitude` maps a matrix name to its scores (defaults to
// |W|).
std::map<std::string, double> matrix_specific_targets(const ParameterRegistry& registry, double overall,
                                                      const std::map<std::string, std::vector<double>>* scores = nullptr);

// Per-matrix sparsity targets for the uniform or modality-specific schemes.
std::map<std::string, double> per_matrix_targets(const ParameterRegistry& registry, const SparsityConfig& config);

// Number of entries to prune for a matrix of `size` at `sparsity` (ceil, with a
// small guard against representation error).
std::size_t pruned_count(std::size_t size, double sparsity);

}  // namespace sdb
