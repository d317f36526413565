// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Pruning masks for the prunable weight matrices of a registry.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sdb/tensor.h"

namespace sdb {

inline constexpr double kInitialThreshold = 0.01;

struct MaskHyperparams {
    double alpha = 2.0;            // real-mask scale for kept entries, >= 1
    double initial_threshold = kInitialThreshold;
    std::size_t recompute_interval = 10;  // steps between threshold resets
    double learning_rate = 100.0;  // mask step size, separate from the weight lr
};

struct MatrixMask {
    std::string name;
    Tensor binary;                 // same shape as the weight; entries in {0, 1}
    std::vector<double> real;      // empty for magnitude-only masks
    double threshold = kInitialThreshold;
    double target_sparsity = 0.0;

    std::size_t survivors() const;
    bool has_real() const { return !real.empty(); }
};

class MaskSet {
public:
    MaskHyperparams hyper;
    // One threshold shared by every matrix (matrix-specific allocation).
    bool global_threshold = false;

    std::vector<MatrixMask>& matrices() { return masks_; }
    const std::vector<MatrixMask>& matrices() const { return masks_; }

    MatrixMask& add(MatrixMask mask);
    MatrixMask* find(const std::string& name);
    const MatrixMask* find(const std::string& name) const;
    MatrixMask& at(const std::string& name);
    const MatrixMask& at(const std::string& name) const;

    std::size_t total() const;
    std::size_t survivors() const;
    bool empty() const { return masks_.empty(); }

private:
    std::vector<MatrixMask> masks_;
};

}  // namespace sdb
