// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/mask_set.h"

#include <stdexcept>

namespace sdb {

std::size_t MatrixMask::survivors() const {
    std::size_t n = 0;
    for (double v : binary.data()) n += v != 0.0;
    return n;
}

MatrixMask& MaskSet::add(MatrixMask mask) {
    if (find(mask.name)) throw std::invalid_argument("duplicate mask for matrix " + mask.name);
    masks_.push_back(std::move(mask));
    return masks_.back();
}

MatrixMask* MaskSet::find(const std::string& name) {
    for (auto& m : masks_)
        if (m.name == name) return &m;
    return nullptr;
}

const MatrixMask* MaskSet::find(const std::string& name) const {
    for (const auto& m : masks_)
        if (m.name == name) return &m;
    return nullptr;
}

MatrixMask& MaskSet::at(const std::string& name) {
    if (auto* m = find(name)) return *m;
    throw std::out_of_range("no mask for matrix " + name);
}

const MatrixMask& MaskSet::at(const std::string& name) const {
    if (const auto* m = find(name)) return *m;
    throw std::out_of_range("no mask for matrix " + name);
}

std::size_t MaskSet::total() const {
    std::size_t n = 0;
    for (const auto& m : masks_) n += m.binary.size();
    return n;
}

std::size_t MaskSet::survivors() const {
    std::size_t n = 0;
    for (const auto& m : masks_) n += m.survivors();
    return n;
}

}  // namespace sdb
