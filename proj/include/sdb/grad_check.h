// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

#include "sdb/autodiff.h"

namespace sdb {

// Builds a scalar on a fresh tape from the leaf bound to the checked tensor.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

// Compares the tape gradient of f at x against central finite differences.
// Relative error per element is |analytic - numeric| / (|numeric| + 1e-8).
// Throws std::runtime_error naming the element index on non-finite values.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5);

}  // namespace sdb
