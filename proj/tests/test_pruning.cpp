// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sdb/pruning.h"
#include "sdb/sparsity.h"
#include "test_util.h"

using namespace sdb;
using sdb::testing::random_tensor;

namespace {

ParameterRegistry single(const std::string& name, Tensor w) {
    ParameterRegistry r;
    r.add(name, std::move(w), ModuleTag::Language, true);
    return r;
}

// Full-sort oracle: prune the k smallest |w|, ties to the smaller index.
Tensor sort_oracle(const Tensor& w, double sparsity) {
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::fabs(w[a]) < std::fabs(w[b]); });
    Tensor m(w.shape(), 1.0);
    for (std::size_t i = 0; i < pruned_count(w.size(), sparsity); ++i) m[idx[i]] = 0.0;
    return m;
}

// Loss on a tape that touches only the named mask: sum(3 * m * W).
MaskLossFn linear_loss(const ParameterRegistry& reg, const std::string& name, double upstream) {
    return [&reg, name, upstream](Tape& t, MaskSet& masks) {
        Var m = t.leaf(masks.at(name).binary);
        return sum(scale(mul(m, t.constant(reg.at(name).value)), upstream));
    };
}

}  // namespace

TEST_CASE("OMP keeps the largest magnitudes") {
    const auto reg = single("w", Tensor({2, 2}, {0.5, -0.1, 0.2, -0.9}));
    const auto masks = omp(reg, {{"w", 0.5}});
    CHECK(masks.at("w").binary.equals(Tensor({2, 2}, {1, 0, 0, 1})));
    CHECK(reg.at("w").value.equals(Tensor({2, 2}, {0.5, -0.1, 0.2, -0.9})));
    CHECK(omp(reg, {{"w", 0.0}}).at("w").binary.equals(Tensor({2, 2}, 1.0)));
    CHECK(omp(reg, {{"w", 1.0}}).at("w").binary.equals(Tensor({2, 2}, 0.0)));
}

TEST_CASE("OMP agrees with a full-sort oracle") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        Tensor w = random_tensor({32, 32}, s);
        // Inject ties.
        for (std::size_t i = 0; i < w.size(); i += 7) w[i] = 0.25 * (i % 2 ? 1 : -1);
        CHECK(magnitude_mask(w, 0.7).equals(sort_oracle(w, 0.7)));
        const auto reg = single("w", w);
        CHECK(omp(reg, {{"w", 0.7}}).at("w").binary.equals(sort_oracle(w, 0.7)));
    }
}

TEST_CASE("OMP is invariant to positive rescaling") {
    const Tensor w = random_tensor({16, 16}, 3);
    Tensor big = w;
    for (double& v : big.data()) v *= 37.5;
    CHECK(magnitude_mask(w, 0.6).equals(magnitude_mask(big, 0.6)));
}

TEST_CASE("OMP rejects missing or invalid targets") {
    const auto reg = single("w", Tensor({2, 2}, 1.0));
    CHECK_THROWS_AS(omp(reg, {}), std::invalid_argument);
    CHECK_THROWS_AS(omp(reg, {{"w", 1.5}}), std::invalid_argument);
}

TEST_CASE("real-mask initialization from OMP") {
    const auto reg = single("w", Tensor({2, 2}, {0.5, -0.1, 0.2, -0.9}));
    MaskHyperparams h;
    h.alpha = 2.0;
    const auto m = init_real_mask(reg, {{"w", 0.5}}, h);
    const auto& mm = m.at("w");
    CHECK(mm.real == std::vector<double>{0.02, 0.0, 0.0, 0.02});
    CHECK(mm.threshold == 0.01);
    CHECK(mm.binary.equals(omp(reg, {{"w", 0.5}}).at("w").binary));
    h.alpha = 0.5;
    CHECK_THROWS_AS(init_real_mask(reg, {{"w", 0.5}}, h), std::invalid_argument);

    const auto full = build_model(sdb::testing::tiny_config(), 4);
    const auto targets = per_matrix_targets(full, SparsityConfig::uniform(0.7));
    const auto real = init_real_mask(full, targets, MaskHyperparams{});
    const auto hard = omp(full, targets);
    for (const auto& x : real.matrices()) CHECK(x.binary.equals(hard.at(x.name).binary));
}

TEST_CASE("binarize") {
    CHECK(binarize(std::vector<double>{0.02}, {1}, 0.01)[0] == 1.0);
    CHECK(binarize(std::vector<double>{0.01}, {1}, 0.01)[0] == 1.0);
    CHECK(binarize(std::vector<double>{0.0099}, {1}, 0.01)[0] == 0.0);
    const Tensor r = random_tensor({50}, 8, 0.0, 0.02);
    const Tensor b = binarize(r.data(), r.shape(), 0.01);
    std::size_t scan = 0, got = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        scan += r[i] >= 0.01;
        got += b[i] == 1.0;
    }
    CHECK(scan == got);
}

TEST_CASE("straight-through step on a scalar") {
    const auto reg = single("w", Tensor({1, 1}, 2.0));
    MaskHyperparams h;
    h.learning_rate = 0.1;
    h.recompute_interval = 100;
    MaskSet masks = init_real_mask(reg, {{"w", 0.0}}, h);
    const double before = masks.at("w").real[0];
    const auto r = mask_train_step(masks, linear_loss(reg, "w", 3.0), 1);
    CHECK(r.loss == doctest::Approx(6.0));
    CHECK_FALSE(r.recomputed);
    CHECK(masks.at("w").real[0] == doctest::Approx(before - 0.6).epsilon(1e-12));
}

TEST_CASE("a matrix the loss does not touch keeps its real mask") {
    ParameterRegistry reg;
    reg.add("a", random_tensor({4, 4}, 1), ModuleTag::Language, true);
    reg.add("b", random_tensor({4, 4}, 2), ModuleTag::Visual, true);
    MaskHyperparams h;
    h.learning_rate = 0.5;
    MaskSet masks = init_real_mask(reg, {{"a", 0.5}, {"b", 0.5}}, h);
    const auto b_before = masks.at("b").real;
    const auto a_before = masks.at("a").real;
    mask_train_step(masks, linear_loss(reg, "a", 1.0), 1);
    CHECK(masks.at("b").real == b_before);
    CHECK(masks.at("a").real != a_before);
}

TEST_CASE("thresholds are recomputed on the interval and meet the target") {
    ParameterRegistry reg;
    reg.add("a", random_tensor({10, 7}, 1), ModuleTag::Language, true);
    reg.add("b", random_tensor({9, 5}, 2), ModuleTag::Visual, true);
    MaskHyperparams h;
    h.learning_rate = 0.05;
    h.recompute_interval = 3;
    MaskSet masks = init_real_mask(reg, {{"a", 0.6}, {"b", 0.3}}, h);
    auto loss = [&reg](Tape& t, MaskSet& m) {
        Var la = mul(t.leaf(m.at("a").binary), t.constant(reg.at("a").value));
        Var lb = mul(t.leaf(m.at("b").binary), t.constant(reg.at("b").value));
        return add(sum(mul(la, la)), sum(lb));
    };
    for (std::size_t step = 1; step <= 6; ++step) {
        const auto r = mask_train_step(masks, loss, step);
        CHECK(r.recomputed == (step % 3 == 0));
        if (r.recomputed) {
            CHECK(masks.at("a").survivors() == 70 - pruned_count(70, 0.6));
            CHECK(masks.at("b").survivors() == 45 - pruned_count(45, 0.3));
            for (const auto& mm : masks.matrices()) CHECK(mm.binary.equals(binarize(mm.real, mm.binary.shape(), mm.threshold)));
        }
    }
}

TEST_CASE("ties at the threshold still give exact counts") {
    ParameterRegistry reg;
    reg.add("a", Tensor({4, 4}, 1.0), ModuleTag::Language, true);
    MaskHyperparams h;
    MaskSet masks = init_real_mask(reg, {{"a", 0.5}}, h);
    std::fill(masks.at("a").real.begin(), masks.at("a").real.end(), 0.02);
    recompute_thresholds(masks);
    CHECK(masks.at("a").survivors() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(masks.at("a").binary[i] == 0.0);
}

TEST_CASE("zero mask learning rate keeps the OMP subnetwork") {
    const auto reg = build_model(sdb::testing::tiny_config(), 4);
    const auto targets = per_matrix_targets(reg, SparsityConfig::uniform(0.5));
    MaskHyperparams h;
    h.learning_rate = 0.0;
    h.recompute_interval = 2;
    MaskSet masks = init_real_mask(reg, targets, h);
    const MaskSet hard = omp(reg, targets);
    auto loss = [&reg](Tape& t, MaskSet& m) {
        Var acc = t.scalar(0.0);
        for (auto& mm : m.matrices()) acc = add(acc, sum(mul(t.leaf(mm.binary), t.constant(reg.at(mm.name).value))));
        return acc;
    };
    for (std::size_t step = 1; step <= 4; ++step) {
        mask_train_step(masks, loss, step);
        for (const auto& mm : masks.matrices()) CHECK(mm.binary.equals(hard.at(mm.name).binary));
    }
}

TEST_CASE("non-finite loss aborts the step and names the batch") {
    const auto reg = single("w", Tensor({1, 1}, 2.0));
    MaskSet masks = init_real_mask(reg, {{"w", 0.0}}, MaskHyperparams{});
    const auto before = masks.at("w").real;
    auto bad = [](Tape& t, MaskSet& m) {
        return scale(sum(t.leaf(m.at("w").binary)), std::numeric_limits<double>::quiet_NaN());
    };
    CHECK_THROWS_WITH_AS(mask_train_step(masks, bad, 1, 42), doctest::Contains("batch 42"), std::runtime_error);
    CHECK(masks.at("w").real == before);
}

TEST_CASE("random real-mask initialization") {
    const auto reg = build_model(sdb::testing::tiny_config(), 4);
    const auto targets = per_matrix_targets(reg, SparsityConfig::uniform(0.7));
    const auto a = random_init_real_mask(reg, targets, MaskHyperparams{}, 5);
    const auto b = random_init_real_mask(reg, targets, MaskHyperparams{}, 5);
    for (const auto& mm : a.matrices()) {
        CHECK(mm.survivors() == mm.binary.size() - pruned_count(mm.binary.size(), 0.7));
        CHECK(mm.binary.equals(b.at(mm.name).binary));
        CHECK(mm.real == b.at(mm.name).real);
        for (double v : mm.real) CHECK((v >= 0.0 && v <= 0.02));
    }
}

TEST_CASE("randomly initialized survivors are independent of weight magnitude") {
    const Tensor w = random_tensor({32, 32}, 77);
    const auto reg = single("w", w);
    const std::size_t n = w.size();
    // Rank of |w| for every entry.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::fabs(w[x]) < std::fabs(w[y]); });
    std::vector<double> rank(n);
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = static_cast<double>(r);
    const double rank_mean = (static_cast<double>(n) - 1.0) / 2.0;

    double mean_corr = 0.0, omp_corr = 0.0;
    auto corr = [&](const Tensor& mask) {
        double km = 0.0;
        for (double v : mask.data()) km += v;
        km /= static_cast<double>(n);
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sxy += (mask[i] - km) * (rank[i] - rank_mean);
            sxx += (mask[i] - km) * (mask[i] - km);
            syy += (rank[i] - rank_mean) * (rank[i] - rank_mean);
        }
        return sxy / std::sqrt(sxx * syy);
    };
    for (std::uint64_t s = 0; s < 20; ++s) mean_corr += corr(random_init_real_mask(reg, {{"w", 0.5}}, MaskHyperparams{}, s).at("w").binary);
    mean_corr /= 20.0;
    omp_corr = corr(omp(reg, {{"w", 0.5}}).at("w").binary);
    CHECK(std::fabs(mean_corr) < 0.03);
    CHECK(omp_corr > 0.8);
}

TEST_CASE("global threshold keeps the overall survivor count") {
    const auto reg = build_model(sdb::testing::tiny_config(), 4);
    const auto targets = matrix_specific_targets(reg, 0.6);
    MaskSet masks = random_init_real_mask(reg, targets, MaskHyperparams{}, 3);
    masks.global_threshold = true;
    recompute_thresholds(masks);
    const double phi = masks.matrices().front().threshold;
    for (const auto& mm : masks.matrices()) CHECK(mm.threshold == phi);
    CHECK(masks.survivors() == masks.total() - pruned_count(masks.total(), 0.6));
    CHECK(audit_sparsity(masks, reg, SparsityConfig::matrix_specific(0.6)).pass);
}

TEST_CASE("sparsity audit") {
    const auto reg = build_model(sdb::testing::tiny_config(), 4);
    CHECK(audit_sparsity(full_mask(reg), reg, SparsityConfig::uniform(0.0)).pass);

    const auto u = SparsityConfig::uniform(0.7);
    auto masks = omp(reg, per_matrix_targets(reg, u));
    const auto a = audit_sparsity(masks, reg, u);
    CHECK(a.pass);
    for (const auto& m : a.matrices) {
        const double frac = 1.0 - static_cast<double>(m.survivors) / static_cast<double>(m.total);
        CHECK(std::fabs(frac - 0.7) * static_cast<double>(m.total) <= 1.0);
    }

    const ModuleSizes sizes = module_sizes(reg);
    const double s_x = solve_third(0.5, Modality::Cross, 0.50, 0.70, sizes).value;
    const auto ms = SparsityConfig::modality_specific(0.5, 0.50, 0.70, s_x, sizes);
    const auto ma = audit_sparsity(omp(reg, per_matrix_targets(reg, ms)), reg, ms);
    CHECK(ma.pass);
    CHECK(ma.modules.at(ModuleTag::Language).sparsity() == doctest::Approx(0.50).epsilon(0.01));
    CHECK(ma.modules.at(ModuleTag::Visual).sparsity() == doctest::Approx(0.70).epsilon(0.01));
    CHECK(ma.modules.at(ModuleTag::Cross).sparsity() == doctest::Approx(s_x).epsilon(0.01));
    CHECK(ma.overall_sparsity == doctest::Approx(0.5).epsilon(0.01));

    // Two extra survivors in one matrix fail the one-scalar slack.
    auto& bin = masks.matrices().front().binary;
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < bin.size() && flipped < 2; ++i)
        if (bin[i] == 0.0) bin[i] = 1.0, ++flipped;
    const auto bad = audit_sparsity(masks, reg, u);
    CHECK_FALSE(bad.pass);
    CHECK(bad.to_json().find(masks.matrices().front().name) != std::string::npos);
}
