// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: sigmoid binary cross-entropy over soft targets,
// product-of-experts fusion and the learned-mixin gate with its entropy
// penalty. The question-only bias prior is a smoothed per-prototype answer
// frequency table and never receives gradient.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdb/autodiff.h"

namespace sdb {

// Mean over answers and examples of -[t log s(x) + (1-t) log(1 - s(x))].
// logits and targets are [batch, answers].
Var bce_loss(Var logits, Var targets);

// softmax(log p_m + log p_b), row-wise; inputs are clamped at kLogEps.
Var poe_fuse(Var p_main, Var p_bias);

struct LmhFused {
    Var fused;  // [batch, answers] distribution
    Var gate;   // [batch], softplus(w . h) >= 0
};

// gate = softplus(h w); fused = softmax(log p_m + gate * log p_b).
LmhFused lmh_fuse(Var p_main, Var p_bias, Var pooled, Var gate_weight);

// Batch mean of z * H(softmax(gate * log p_b)), H the Shannon entropy.
Var entropy_penalty(Var p_bias, Var gate, double z);

struct LmhLossParts {
    Var loss;
    Var gate;
    Var fused_scores;  // logits + gate * log p_b
};

// Sigmoid BCE on the fused scores (logits + gate * log p_b) plus the entropy
// penalty. p_bias must be a constant on the tape.
LmhLossParts lmh_loss(Var logits, Var p_bias, Var pooled, Var gate_weight, Var targets, double z);

// Same loss with the gate pinned to a fixed value for every example.
Var lmh_loss_fixed_gate(Var logits, Var p_bias, double gate, Var targets, double z);

class BiasPrior {
public:
    BiasPrior() = default;
    BiasPrior(std::size_t answers, double smoothing) : answers_(answers), smoothing_(smoothing) {}

    std::size_t answers() const { return answers_; }
    double smoothing() const { return smoothing_; }

    void set(int prototype, std::vector<double> distribution);
    // Uniform for prototypes never seen in training.
    std::vector<double> lookup(int prototype) const;
    const std::map<int, std::vector<double>>& table() const { return table_; }

    std::string to_json() const;
    static BiasPrior from_json(const std::string& text);

private:
    std::size_t answers_ = 0;
    double smoothing_ = 0.0;
    std::map<int, std::vector<double>> table_;
};

struct PrototypeAnswerCounts {
    int prototype;
    std::vector<double> counts;  // per answer
};

// Normalized (counts + smoothing) per prototype.
BiasPrior fit_bias_prior(std::span<const PrototypeAnswerCounts> counts, std::size_t answers, double smoothing);

}  // namespace sdb
