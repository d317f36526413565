// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/optim.h"

#include <cmath>

namespace sdb {

Adam::Adam(std::vector<Tensor*> params, AdamSettings settings) : params_(std::move(params)), s_(settings) {
    for (Tensor* p : params_) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
    }
}

void Adam::zero_grad() {
    for (Tensor* p : params_) p->zero_grad();
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = *params_[k];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g[i];
            v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g[i] * g[i];
            p[i] -= s_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + s_.epsilon);
        }
    }
}

}  // namespace sdb
