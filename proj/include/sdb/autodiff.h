// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation over dense 2-D (or 1-D)
// tensors. A Tape records every primitive application; Tape::backward replays
// the records in reverse and accumulates gradients into the requires-grad
// leaves. Matrices are row-major, shape [rows, cols]; vectors are shape [n].
//
// A Tape is single-threaded. Leaves borrow the storage of the Tensor they were
// created from, so that Tensor must outlive the Tape.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sdb/tensor.h"

namespace sdb {

class Tape;

// Clamp applied to every log argument.
inline constexpr double kLogEps = 1e-9;
// Epsilon inside the layer-norm square root.
inline constexpr double kLayerNormEps = 1e-5;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Shape& shape() const;
    std::size_t size() const;
    std::size_t rows() const;
    std::size_t cols() const;
    std::span<const double> value() const;
    // Gradient after Tape::backward; empty if nothing flowed here.
    std::span<const double> grad() const;
    Tensor to_tensor() const;
    double item() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    struct Node {
        Shape shape;
        std::vector<double> storage;
        const double* data = nullptr;
        std::size_t numel = 0;
        std::vector<double> grad;
        bool needs_grad = false;
        Tensor* leaf = nullptr;
        std::function<void(Tape&)> backward;

        std::span<const double> value() const { return {data, numel}; }
        std::span<double> grad_buffer() {
            if (grad.size() != numel) grad.assign(numel, 0.0);
            return grad;
        }
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Borrows the tensor's storage. Gradients flow into tensor.grad() when
    // tensor.requires_grad() is set.
    Var leaf(Tensor& tensor);
    // Copies the values; never receives gradient.
    Var constant(const Tensor& tensor);
    // Borrows read-only storage, which must outlive the tape.
    Var constant_ref(const Tensor& tensor);
    Var constant(Shape shape, std::vector<double> values);
    Var scalar(double value);

    // Records a new node owning its values.
    Var emit(Shape shape, std::vector<double> values, bool needs_grad, std::function<void(Tape&)> backward);

    // Seeds d(root)/d(root) = 1; root must hold one element.
    void backward(Var root);

    Node& node(std::size_t id) { return *nodes_[id]; }
    const Node& node(std::size_t id) const { return *nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

// Primitive set. Each validates shapes and throws std::invalid_argument naming
// both operand shapes on mismatch.
Var matmul(Var a, Var b);                 // [m,k] x [k,n]
Var matmul_bt(Var a, Var b);              // [m,k] x [n,k]^T
Var add(Var a, Var b);                    // same shape
Var sub(Var a, Var b);
Var add_row(Var a, Var bias);             // [m,n] + [n]
Var mul(Var a, Var b);                    // element-wise, same shape
Var mul_col(Var a, Var col);              // [m,n] * [m] per row
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var embedding(Var table, std::span<const int> ids);  // rows of [V,d]
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var tanh(Var a);
Var log(Var a);                           // rejects non-positive input
Var log_clamped(Var a, double eps = kLogEps);
Var layer_norm(Var x, Var gain, Var bias);
Var gelu(Var a);
Var relu(Var a);
// Multi-head scaled-dot-product attention over `batch` independent sequences.
// q: [batch*lq, d], k and v: [batch*lk, d]; returns [batch*lq, d].
Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t heads);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);                      // [m,n] -> [m]
Var mean_rows(Var a);                     // [m,n] -> [m]
Var take_rows(Var a, std::span<const std::size_t> rows);
Var reshape(Var a, Shape shape);
// Copy of the values as a constant; blocks gradient.
Var detach(Var a);

}  // namespace sdb
