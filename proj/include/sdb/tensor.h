// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of doubles with an optional gradient buffer.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sdb {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool flag) { requires_grad_ = flag; }

    bool has_grad() const { return !grad_.empty(); }
    // Allocates a zero buffer on first access.
    std::span<double> grad();
    std::span<const double> grad() const { return grad_; }
    void zero_grad();
    void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

    // Same shape and bit-identical values.
    bool equals(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

}  // namespace sdb
