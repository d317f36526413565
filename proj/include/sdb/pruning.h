// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// One-shot magnitude pruning and mask training.
//
// Mask training keeps the weights frozen and optimizes a real-valued mask m_hat
// per prunable matrix. The forward pass sees m * W with m = [m_hat >= phi]; the
// binarization is passed straight through in the backward pass, so
//
//   dL/dm_hat := dL/dm = (dL/d(m * W)) * W
//
// and m_hat <- m_hat - lr * dL/dm. Every `recompute_interval` steps phi is reset
// to the value that keeps exactly the target number of entries per matrix (or
// one global value under matrix-specific allocation).

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdb/mask_set.h"
#include "sdb/model.h"
#include "sdb/sparsity.h"

namespace sdb {

using SparsityTargets = std::map<std::string, double>;

// Zeros exactly pruned_count(size, target) smallest-|W| entries of each matrix;
// ties go to the smaller flat index first. Weights are not touched.
MaskSet omp(const ParameterRegistry& registry, const SparsityTargets& targets);

// Binary mask of a single matrix by magnitude, same rule as omp().
Tensor magnitude_mask(const Tensor& weight, double sparsity);

// m_hat = 0 where omp() prunes and alpha * phi0 elsewhere; phi = phi0.
MaskSet init_real_mask(const ParameterRegistry& registry, const SparsityTargets& targets, const MaskHyperparams& hyper);

// m_hat ~ U[0, 2 phi0], thresholds recomputed immediately to meet the targets.
MaskSet random_init_real_mask(const ParameterRegistry& registry, const SparsityTargets& targets,
                              const MaskHyperparams& hyper, std::uint64_t seed);

// 1 where m_hat >= phi, else 0.
Tensor binarize(std::span<const double> real, const Shape& shape, double threshold);

// Resets every threshold so the survivor count matches the target, then
// re-binarizes. With `global_threshold` set, one threshold over all matrices
// keeps the overall survivor count.
void recompute_thresholds(MaskSet& masks);

// Marks the binary masks as requiring gradient (mask training) or not.
void set_mask_grad(MaskSet& masks, bool enabled);

struct MaskStepResult {
    double loss = 0.0;
    bool recomputed = false;
};

// Builds the loss on a tape for the current masks; the callable records the
// forward pass (reading the masks through forward()) and returns the scalar.
using MaskLossFn = std::function<Var(Tape&, MaskSet&)>;

// One straight-through update of every real mask. `step_index` counts from 1;
// thresholds are recomputed when it is a multiple of the interval. Weights must
// have requires_grad cleared by the caller. Throws std::runtime_error naming
// `batch_id` when the loss is not finite (masks untouched).
MaskStepResult mask_train_step(MaskSet& masks, const MaskLossFn& loss_fn, std::size_t step_index,
                               std::size_t batch_id = 0);

struct ModuleAudit {
    std::size_t total = 0;
    std::size_t survivors = 0;
    double target_sparsity = 0.0;
    double sparsity() const { return total ? 1.0 - static_cast<double>(survivors) / static_cast<double>(total) : 0.0; }
};

struct MatrixAudit {
    std::string name;
    ModuleTag tag = ModuleTag::Language;
    std::size_t total = 0;
    std::size_t survivors = 0;
    std::size_t expected_survivors = 0;
};

struct SparsityAudit {
    bool pass = false;
    double overall_sparsity = 0.0;
    double target_overall = 0.0;
    std::map<ModuleTag, ModuleAudit> modules;
    std::vector<MatrixAudit> matrices;
    std::vector<std::string> failures;

    std::string to_json() const;
};

// Compares survivor counts against the config: every matrix (uniform and
// modality-specific) or the overall count (matrix-specific) must be within
// `slack` scalars of its target.
SparsityAudit audit_sparsity(const MaskSet& masks, const ParameterRegistry& registry, const SparsityConfig& config,
                             std::size_t slack = 1);

// Mask with all ones over every prunable matrix.
MaskSet full_mask(const ParameterRegistry& registry);

}  // namespace sdb
