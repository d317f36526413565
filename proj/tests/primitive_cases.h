// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// One scalar-valued probe per autodiff primitive, parameterized by seed.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sdb/autodiff.h"
#include "sdb/grad_check.h"
#include "test_util.h"

namespace sdb::testing {


struct PrimitiveCase {
    Shape shape;
    ScalarFn fn;
    double lo = -1.0;
    double hi = 1.0;
};

inline std::map<std::string, std::function<PrimitiveCase(std::uint64_t)>> primitive_cases() {
    std::map<std::string, std::function<PrimitiveCase(std::uint64_t)>> m;
    m["matmul"] = [](std::uint64_t s) {
        Tensor b = random_tensor({4, 2}, s + 1);
        return PrimitiveCase{{3, 4}, [b, s](Tape& t, Var x) { return weighted_sum(matmul(x, t.constant(b)), s); }};
    };
    m["matmul_rhs"] = [](std::uint64_t s) {
        Tensor a = random_tensor({3, 4}, s + 1);
        return PrimitiveCase{{4, 2}, [a, s](Tape& t, Var x) { return weighted_sum(matmul(t.constant(a), x), s); }};
    };
    m["matmul_bt"] = [](std::uint64_t s) {
        Tensor b = random_tensor({5, 4}, s + 1);
        return PrimitiveCase{{3, 4}, [b, s](Tape& t, Var x) { return weighted_sum(matmul_bt(x, t.constant(b)), s); }};
    };
    m["add"] = [](std::uint64_t s) {
        Tensor b = random_tensor({3, 4}, s + 1);
        return PrimitiveCase{{3, 4}, [b, s](Tape& t, Var x) { return weighted_sum(add(x, t.constant(b)), s); }};
    };
    m["sub"] = [](std::uint64_t s) {
        Tensor b = random_tensor({3, 4}, s + 1);
        return PrimitiveCase{{3, 4}, [b, s](Tape& t, Var x) { return weighted_sum(sub(t.constant(b), x), s); }};
    };
    m["add_row"] = [](std::uint64_t s) {
        Tensor a = random_tensor({3, 4}, s + 1);
        return PrimitiveCase{{4}, [a, s](Tape& t, Var x) { return weighted_sum(add_row(t.constant(a), x), s); }};
    };
    m["mul"] = [](std::uint64_t s) {
        Tensor b = random_tensor({3, 4}, s + 1);
        return PrimitiveCase{{3, 4}, [b, s](Tape& t, Var x) { return weighted_sum(mul(x, t.constant(b)), s); }};
    };
    m["mul_col"] = [](std::uint64_t s) {
        Tensor a = random_tensor({3, 4}, s + 1);
        return PrimitiveCase{{3}, [a, s](Tape& t, Var x) { return weighted_sum(mul_col(t.constant(a), x), s); }};
    };
    m["scale"] = [](std::uint64_t s) { return PrimitiveCase{{3, 4}, [s](Tape&, Var x) { return weighted_sum(scale(x, -1.7), s); }}; };
    m["add_scalar"] = [](std::uint64_t s) { return PrimitiveCase{{5}, [s](Tape&, Var x) { return weighted_sum(add_scalar(x, 0.3), s); }}; };
    m["embedding"] = [](std::uint64_t s) {
        return PrimitiveCase{{5, 3}, [s](Tape&, Var x) {
                        const std::vector<int> ids = {4, 0, 4, 2};
                        return weighted_sum(embedding(x, ids), s);
                    }};
    };
    m["softmax_rows"] = [](std::uint64_t s) { return PrimitiveCase{{3, 5}, [s](Tape&, Var x) { return weighted_sum(softmax_rows(x), s); }}; };
    m["log_softmax_rows"] = [](std::uint64_t s) {
        return PrimitiveCase{{3, 5}, [s](Tape&, Var x) { return weighted_sum(log_softmax_rows(x), s); }};
    };
    m["sigmoid"] = [](std::uint64_t s) { return PrimitiveCase{{5}, [s](Tape&, Var x) { return weighted_sum(sigmoid(x), s); }, -3, 3}; };
    m["softplus"] = [](std::uint64_t s) { return PrimitiveCase{{5}, [s](Tape&, Var x) { return weighted_sum(softplus(x), s); }, -3, 3}; };
    m["tanh"] = [](std::uint64_t s) { return PrimitiveCase{{5}, [s](Tape&, Var x) { return weighted_sum(tanh(x), s); }, -2, 2}; };
    m["log"] = [](std::uint64_t s) { return PrimitiveCase{{5}, [s](Tape&, Var x) { return weighted_sum(log(x), s); }, 0.2, 2.0}; };
    m["log_clamped"] = [](std::uint64_t s) {
        return PrimitiveCase{{5}, [s](Tape&, Var x) { return weighted_sum(log_clamped(x), s); }, 0.2, 2.0};
    };
    m["layer_norm"] = [](std::uint64_t s) {
        Tensor g = random_tensor({8}, s + 1, 0.5, 1.5);
        Tensor b = random_tensor({8}, s + 2);
        return PrimitiveCase{{4, 8}, [g, b, s](Tape& t, Var x) { return weighted_sum(layer_norm(x, t.constant(g), t.constant(b)), s); }};
    };
    m["layer_norm_gain"] = [](std::uint64_t s) {
        Tensor x = random_tensor({4, 8}, s + 1);
        Tensor b = random_tensor({8}, s + 2);
        return PrimitiveCase{{8}, [x, b, s](Tape& t, Var g) { return weighted_sum(layer_norm(t.constant(x), g, t.constant(b)), s); }};
    };
    m["layer_norm_bias"] = [](std::uint64_t s) {
        Tensor x = random_tensor({4, 8}, s + 1);
        Tensor g = random_tensor({8}, s + 2);
        return PrimitiveCase{{8}, [x, g, s](Tape& t, Var b) { return weighted_sum(layer_norm(t.constant(x), t.constant(g), b), s); }};
    };
    m["gelu"] = [](std::uint64_t s) { return PrimitiveCase{{6}, [s](Tape&, Var x) { return weighted_sum(gelu(x), s); }, -2, 2}; };
    m["relu"] = [](std::uint64_t s) {
        // Keep away from the kink at 0.
        return PrimitiveCase{{6}, [s](Tape&, Var x) { return weighted_sum(relu(add_scalar(x, 0.0)), s); }, 0.1, 1.0};
    };
    m["relu_negative"] = [](std::uint64_t s) {
        return PrimitiveCase{{6}, [s](Tape&, Var x) { return add(sum(relu(x)), sum(x)); }, -1.0, -0.1};
    };
    for (const char* which : {"q", "k", "v"}) {
        m[std::string("attention_") + which] = [which](std::uint64_t s) {
            Tensor q = random_tensor({2 * 3, 4}, s + 1);
            Tensor k = random_tensor({2 * 5, 4}, s + 2);
            Tensor v = random_tensor({2 * 5, 4}, s + 3);
            const std::string w = which;
            Shape shape = w == "q" ? Shape{6, 4} : Shape{10, 4};
            return PrimitiveCase{shape, [q, k, v, w, s](Tape& t, Var x) {
                            Var qq = w == "q" ? x : t.constant(q);
                            Var kk = w == "k" ? x : t.constant(k);
                            Var vv = w == "v" ? x : t.constant(v);
                            return weighted_sum(attention(qq, kk, vv, 2, 2), s);
                        }};
        };
    }
    m["sum"] = [](std::uint64_t) { return PrimitiveCase{{3, 4}, [](Tape&, Var x) { return sum(mul(x, x)); }}; };
    m["mean"] = [](std::uint64_t) { return PrimitiveCase{{3, 4}, [](Tape&, Var x) { return mean(mul(x, x)); }}; };
    m["sum_rows"] = [](std::uint64_t s) { return PrimitiveCase{{3, 4}, [s](Tape&, Var x) { return weighted_sum(sum_rows(x), s); }}; };
    m["mean_rows"] = [](std::uint64_t s) { return PrimitiveCase{{3, 4}, [s](Tape&, Var x) { return weighted_sum(mean_rows(x), s); }}; };
    m["take_rows"] = [](std::uint64_t s) {
        return PrimitiveCase{{4, 3}, [s](Tape&, Var x) {
                        const std::vector<std::size_t> rows = {3, 1, 3};
                        return weighted_sum(take_rows(x, rows), s);
                    }};
    };
    m["reshape"] = [](std::uint64_t s) { return PrimitiveCase{{3, 4}, [s](Tape&, Var x) { return weighted_sum(reshape(x, {2, 6}), s); }}; };
    return m;
}


// Worst relative grad_check error of a primitive over `seeds` seeds.
inline double primitive_worst_error(const std::function<PrimitiveCase(std::uint64_t)>& make, int seeds) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
        const PrimitiveCase c = make(static_cast<std::uint64_t>(s));
        const Tensor x = random_tensor(c.shape, 1000 + static_cast<std::uint64_t>(s), c.lo, c.hi);
        worst = std::max(worst, grad_check(c.fn, x).max_rel_error);
    }
    return worst;
}

}  // namespace sdb::testing
