// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/grad_check.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sdb {

namespace {

double evaluate(const ScalarFn& f, Tensor& x) {
    Tape tape;
    return f(tape, tape.constant(x)).item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step) {
    Tensor work = x;
    work.set_requires_grad(true);
    work.drop_grad();
    {
        Tape tape;
        Var out = f(tape, tape.leaf(work));
        if (!std::isfinite(out.item())) throw std::runtime_error("grad_check: non-finite function value");
        tape.backward(out);
    }
    std::vector<double> analytic(work.size(), 0.0);
    if (work.has_grad()) analytic.assign(work.grad().begin(), work.grad().end());

    GradCheckResult res;
    Tensor probe = x;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = evaluate(f, probe);
        probe[i] = orig - step;
        const double fm = evaluate(f, probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
            throw std::runtime_error("grad_check: non-finite gradient at element " + std::to_string(i));
        }
        const double err = std::fabs(analytic[i] - numeric) / (std::fabs(numeric) + 1e-8);
        if (err > res.max_rel_error) {
            res.max_rel_error = err;
            res.worst_index = i;
        }
    }
    return res;
}

}  // namespace sdb
