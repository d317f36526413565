// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Adam over a fixed list of tensors that carry gradient buffers.

#pragma once

#include <cstddef>
#include <vector>

#include "sdb/tensor.h"

namespace sdb {

struct AdamSettings {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Tensor*> params, AdamSettings settings);

    void zero_grad();
    // Applies one update from the current gradients.
    void step();
    std::size_t steps() const { return t_; }

private:
    std::vector<Tensor*> params_;
    AdamSettings s_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace sdb
