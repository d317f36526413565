// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/losses.h"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

namespace sdb {

Var bce_loss(Var logits, Var targets) {
    if (logits.shape() != targets.shape()) {
        throw std::invalid_argument("bce_loss: logits " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
    }
    // -log s(x) = softplus(-x) and -log(1 - s(x)) = softplus(x), so the
    // per-element loss is softplus(x) - t x.
    return mean(sub(softplus(logits), mul(targets, logits)));
}

Var poe_fuse(Var p_main, Var p_bias) {
    return softmax_rows(add(log_clamped(p_main), log_clamped(detach(p_bias))));
}

namespace {

Var gate_of(Var pooled, Var gate_weight) {
    if (pooled.shape().size() != 2 || gate_weight.size() != pooled.cols()) {
        throw std::invalid_argument("lmh gate: pooled " + shape_str(pooled.shape()) + " vs weight " + shape_str(gate_weight.shape()));
    }
    Var w = reshape(gate_weight, {gate_weight.size(), 1});
    return softplus(reshape(matmul(pooled, w), {pooled.rows()}));
}

}  // namespace

LmhFused lmh_fuse(Var p_main, Var p_bias, Var pooled, Var gate_weight) {
    if (p_main.shape() != p_bias.shape()) {
        throw std::invalid_argument("lmh_fuse: p_m " + shape_str(p_main.shape()) + " vs p_b " + shape_str(p_bias.shape()));
    }
    Var g = gate_of(pooled, gate_weight);
    Var fused = softmax_rows(add(log_clamped(p_main), mul_col(log_clamped(detach(p_bias)), g)));
    return {fused, g};
}

Var entropy_penalty(Var p_bias, Var gate, double z) {
    if (z < 0) throw std::invalid_argument("entropy_penalty: z must be >= 0");
    Var q = softmax_rows(mul_col(log_clamped(detach(p_bias)), gate));
    Var h = scale(sum_rows(mul(q, log_clamped(q))), -1.0);
    return scale(mean(h), z);
}

namespace {

Var lmh_from_gate(Var logits, Var p_bias, Var g, Var targets, double z, Var* scores_out) {
    if (logits.shape() != p_bias.shape()) {
        throw std::invalid_argument("lmh_loss: logits " + shape_str(logits.shape()) + " vs p_b " + shape_str(p_bias.shape()));
    }
    Var log_pb = log_clamped(detach(p_bias));
    Var scores = add(logits, mul_col(log_pb, g));
    if (scores_out) *scores_out = scores;
    Var loss = bce_loss(scores, targets);
    if (z > 0) loss = add(loss, entropy_penalty(p_bias, g, z));
    return loss;
}

}  // namespace

LmhLossParts lmh_loss(Var logits, Var p_bias, Var pooled, Var gate_weight, Var targets, double z) {
    if (z < 0) throw std::invalid_argument("lmh_loss: z must be >= 0");
    Var g = gate_of(pooled, gate_weight);
    Var scores;
    Var loss = lmh_from_gate(logits, p_bias, g, targets, z, &scores);
    return {loss, g, scores};
}

Var lmh_loss_fixed_gate(Var logits, Var p_bias, double gate, Var targets, double z) {
    Var g = logits.tape().constant({logits.rows()}, std::vector<double>(logits.rows(), gate));
    return lmh_from_gate(logits, p_bias, g, targets, z, nullptr);
}

// ---------------------------------------------------------------------------

void BiasPrior::set(int prototype, std::vector<double> distribution) {
    if (distribution.size() != answers_) {
        throw std::invalid_argument("bias prior: distribution of length " + std::to_string(distribution.size()) +
                                    " for " + std::to_string(answers_) + " answers");
    }
    table_[prototype] = std::move(distribution);
}

std::vector<double> BiasPrior::lookup(int prototype) const {
    auto it = table_.find(prototype);
    if (it == table_.end()) return std::vector<double>(answers_, 1.0 / static_cast<double>(answers_));
    return it->second;
}

std::string BiasPrior::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [proto, dist] : table_) j[std::to_string(proto)] = dist;
    return j.dump();
}

BiasPrior BiasPrior::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("bias prior JSON must be an object");
    std::size_t answers = 0;
    for (auto it = j.begin(); it != j.end(); ++it) {
        answers = it.value().size();
        break;
    }
    BiasPrior prior(answers, 0.0);
    for (auto it = j.begin(); it != j.end(); ++it) prior.set(std::stoi(it.key()), it.value().get<std::vector<double>>());
    return prior;
}

BiasPrior fit_bias_prior(std::span<const PrototypeAnswerCounts> counts, std::size_t answers, double smoothing) {
    if (answers == 0) throw std::invalid_argument("fit_bias_prior: no answers");
    if (smoothing < 0) throw std::invalid_argument("fit_bias_prior: negative smoothing");
    BiasPrior prior(answers, smoothing);
    for (const auto& c : counts) {
        if (c.counts.size() != answers) throw std::invalid_argument("fit_bias_prior: count vector length mismatch");
        std::vector<double> dist(answers);
        double total = 0.0;
        for (std::size_t a = 0; a < answers; ++a) total += (dist[a] = c.counts[a] + smoothing);
        if (total <= 0.0) {
            dist.assign(answers, 1.0 / static_cast<double>(answers));
        } else {
            for (double& d : dist) d /= total;
        }
        prior.set(c.prototype, std::move(dist));
    }
    return prior;
}

}  // namespace sdb
