// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Re-derives one column of a published search-table row from the other two.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "sdb/sparsity.h"
#include "search_tables.h"

namespace sdb::testdata {

inline constexpr double kTableTolerance = 0.01;

inline bool on_grid(GridKind grid, double v) {
    auto multiple_of = [v](double step) {
        const double k = std::round(v / step);
        return std::fabs(v - k * step) < 1e-9;
    };
    switch (grid) {
        case GridKind::Coarse:
            for (double l : {0.1, 0.3, 0.5, 0.7, 0.9})
                if (std::fabs(v - l) < 1e-9) return true;
            return false;
        case GridKind::Step5: return multiple_of(0.05);
        case GridKind::Step2: return v >= 0.80 - 1e-9 && v <= 0.98 + 1e-9 && multiple_of(0.02);
    }
    return false;
}

struct RowCheck {
    bool ok = false;
    int column = -1;  // solved column: 0 = L, 1 = R, 2 = X
    double error = std::numeric_limits<double>::infinity();
};

// The solved column is one the grid could not have produced; when every column
// is on the grid, any column may be the solved one.
inline RowCheck check_row(const SearchTable& table, const std::array<double, 3>& row,
                          const ModuleSizes& sizes = reference_module_sizes()) {
    std::vector<int> candidates;
    for (int c = 0; c < 3; ++c)
        if (!on_grid(table.grid, row[c])) candidates.push_back(c);
    if (candidates.empty()) candidates = {0, 1, 2};
    RowCheck best;
    for (int c : candidates) {
        std::array<double, 2> known{};
        int k = 0;
        for (int j = 0; j < 3; ++j)
            if (j != c) known[k++] = row[j];
        const auto r = solve_third(table.overall, static_cast<Modality>(c), known[0], known[1], sizes);
        const double err = std::fabs(round2(r.value) - row[c]);
        if (err < best.error) best = {err <= kTableTolerance + 1e-9, c, err};
    }
    return best;
}

inline const std::vector<const SearchTable*>& all_tables() {
    static const std::vector<const SearchTable*> t = {&kTable50First, &kTable50Second, &kTable70First, &kTable70Second,
                                                      &kTable90};
    return t;
}

}  // namespace sdb::testdata
