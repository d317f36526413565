// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <stdexcept>

#include "sdb/pipeline.h"
#include "test_util.h"

using namespace sdb;

namespace {

struct Fixture {
    ModelConfig cfg = sdb::testing::tiny_config();
    SplitPair data;
    BiasPrior prior;
    Fixture() {
        const SynthSpec s = sdb::testing::tiny_spec();
        fit_model_to_data(cfg, s);
        data = generate(s);
        prior = fit_bias_prior(data.train, 1.0);
    }
};

TrainSettings quick(std::size_t epochs = 1, std::size_t max_steps = 0) {
    return TrainSettings{epochs, 32, 1e-3, max_steps};
}

ExperimentSpec tiny_experiment() {
    ExperimentSpec e;
    e.model = sdb::testing::tiny_config();
    e.data = sdb::testing::tiny_spec();
    e.pretrain_examples = 128;
    e.pretrain = quick(1, 3);
    e.stage1 = quick(1, 3);
    e.stage2 = quick(1, 3);
    e.stage3 = quick(1, 3);
    e.seeds = {0};
    return e;
}

}  // namespace

TEST_CASE("recipe names are a bijection") {
    const auto all = canonical_recipes();
    CHECK(all.size() == 8);
    std::set<std::string> names;
    for (const auto& r : all) {
        CHECK(parse_recipe(recipe_name(r)) == r);
        names.insert(recipe_name(r));
    }
    CHECK(names.size() == 8);
    CHECK(names.count("lxmert(lmh) + mask train(lmh)") == 1);
    CHECK(names.count("lxmert(bce) + OMP + lmh ft") == 1);
    CHECK_THROWS_AS(parse_recipe("lxmert(xyz) + OMP"), std::invalid_argument);
    for (auto k : {LossKind::Bce, LossKind::Lmh}) CHECK(parse_loss(loss_name(k)) == k);
    for (auto m : {MaskInit::Magnitude, MaskInit::Random}) CHECK(parse_mask_init(mask_init_name(m)) == m);
}

TEST_CASE("experiment spec JSON round-trip") {
    ExperimentSpec e = tiny_experiment();
    e.recipe = parse_recipe("lxmert(lmh) + OMP + bce ft");
    e.sparsity = SparsityConfig::modality_specific(0.5, 0.5, 0.7, 0.41, reference_module_sizes());
    e.mask_init = MaskInit::Random;
    e.mask.learning_rate = 3.5;
    e.entropy_weight = 0.1;
    e.seeds = {4, 9};
    e.output_dir = "out/x";
    const ExperimentSpec b = experiment_spec_from_json(experiment_spec_to_json(e));
    CHECK(experiment_spec_to_json(b) == experiment_spec_to_json(e));
    CHECK(b.recipe == e.recipe);
    CHECK(b.sparsity.label() == e.sparsity.label());
    CHECK(b.stage2 == e.stage2);
    CHECK(b.mask.learning_rate == 3.5);
    CHECK(b.seeds == e.seeds);

    const ExperimentSpec d = experiment_spec_from_json("{}");
    CHECK(d.entropy_weight == 0.36);
    CHECK(d.seeds.size() == 4);

    ExperimentSpec bad = e;
    bad.seeds.clear();
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero epochs leave the model unchanged") {
    Fixture f;
    ModelState s = init_state(f.cfg, 1);
    const auto before = s.registry.checksum();
    stage1_finetune(s, f.data.train, {LossKind::Lmh, &f.prior, 0.36}, quick(0), 0);
    CHECK(s.registry.checksum() == before);
}

TEST_CASE("training is deterministic for a fixed seed") {
    Fixture f;
    ModelState a = init_state(f.cfg, 1), b = init_state(f.cfg, 1);
    const auto la = stage1_finetune(a, f.data.train, {LossKind::Lmh, &f.prior, 0.36}, quick(1, 5), 3);
    const auto lb = stage1_finetune(b, f.data.train, {LossKind::Lmh, &f.prior, 0.36}, quick(1, 5), 3);
    CHECK(la.losses == lb.losses);
    CHECK(a.registry.checksum() == b.registry.checksum());
    CHECK(a.gate_weight.equals(b.gate_weight));
}

TEST_CASE("pre-training loss decreases over the first 100 steps") {
    Fixture f;
    ModelState s = init_state(f.cfg, 1);
    const auto u = generate_unbiased(sdb::testing::tiny_spec(), 3200, 2);
    const auto log = pretrain_surrogate(s, u, TrainSettings{10, 32, 1e-3, 100}, 1);
    REQUIRE(log.losses.size() == 100);
    const double first = std::accumulate(log.losses.begin(), log.losses.begin() + 10, 0.0) / 10.0;
    const double last = std::accumulate(log.losses.end() - 10, log.losses.end(), 0.0) / 10.0;
    CHECK(last < first);
}

TEST_CASE("lmh training requires a prior") {
    Fixture f;
    ModelState s = init_state(f.cfg, 1);
    CHECK_THROWS_AS(stage1_finetune(s, f.data.train, {LossKind::Lmh, nullptr, 0.36}, quick(1, 1), 0), std::invalid_argument);
}

TEST_CASE("mask training freezes the weights and meets the sparsity target") {
    Fixture f;
    ModelState s = init_state(f.cfg, 1);
    stage1_finetune(s, f.data.train, {LossKind::Bce, &f.prior, 0.36}, quick(1, 4), 0);
    for (auto init : {MaskInit::Magnitude, MaskInit::Random}) {
        ModelState c = s;
        CompressOptions o;
        o.init = init;
        o.sparsity = SparsityConfig::uniform(0.7);
        o.hyper.learning_rate = 10.0;
        o.hyper.recompute_interval = 3;
        const auto r = stage2_compress(c, f.data.train, {LossKind::Lmh, &f.prior, 0.36}, o, quick(1, 7), 5);
        CHECK(r.checksum_before == r.checksum_after);
        CHECK(c.registry.checksum(false) == s.registry.checksum(false));
        CHECK(r.audit.pass);
        CHECK(r.log.losses.size() == 7);
        for (const auto& e : c.registry.entries()) CHECK_FALSE(e.value.requires_grad());
    }
}

TEST_CASE("OMP compression matches a direct OMP call") {
    Fixture f;
    ModelState s = init_state(f.cfg, 2);
    CompressOptions o;
    o.method = CompressMethod::Omp;
    o.sparsity = SparsityConfig::uniform(0.5);
    const auto r = stage2_compress(s, f.data.train, {LossKind::Bce, &f.prior, 0.36}, o, quick(1, 2), 0);
    const auto ref = omp(s.registry, per_matrix_targets(s.registry, o.sparsity));
    for (const auto& m : r.masks.matrices()) CHECK(m.binary.equals(ref.at(m.name).binary));
    CHECK(r.audit.pass);
}

TEST_CASE("further fine-tuning keeps masks fixed and pruned weights untouched") {
    Fixture f;
    ModelState s = init_state(f.cfg, 2);
    CompressOptions o;
    o.method = CompressMethod::Omp;
    const auto r = stage2_compress(s, f.data.train, {LossKind::Bce, &f.prior, 0.36}, o, quick(1, 2), 0);
    const ModelState before = s;
    MaskSet masks = r.masks;
    stage3_finetune(s, masks, f.data.train, {LossKind::Lmh, &f.prior, 0.36}, quick(1, 5), 1);
    for (const auto& m : masks.matrices()) CHECK(m.binary.equals(r.masks.at(m.name).binary));
    std::size_t changed = 0;
    for (const auto& m : masks.matrices()) {
        const auto& w0 = before.registry.at(m.name).value;
        const auto& w1 = s.registry.at(m.name).value;
        for (std::size_t i = 0; i < w0.size(); ++i) {
            if (m.binary[i] == 0.0) {
                CHECK(w1[i] == w0[i]);
            } else {
                changed += w1[i] != w0[i];
            }
        }
    }
    CHECK(changed > 0);
}

TEST_CASE("all eight recipes run end to end") {
    const auto dir = std::filesystem::temp_directory_path() / "sdb_test_pipeline";
    std::filesystem::remove_all(dir);
    RecipeCache cache;
    for (const auto& r : canonical_recipes()) {
        ExperimentSpec e = tiny_experiment();
        e.recipe = r;
        e.output_dir = (dir / std::to_string(&r - canonical_recipes().data())).string();
        const RunRecord rec = run_recipe(e, &cache);
        INFO(recipe_name(r) << ": " << (rec.seeds.empty() ? "" : rec.seeds[0].error));
        CHECK(rec.ok());
        CHECK(rec.recipe == recipe_name(r));
        CHECK(rec.final_test().seeds == 1);
        CHECK(std::filesystem::exists(std::filesystem::path(e.output_dir) / "metrics.json"));
        for (const auto& p : rec.seeds.at(0).checkpoints) CHECK(std::filesystem::exists(p));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("every sparsity scheme runs") {
    RecipeCache cache;
    for (const SparsityConfig& sc : {SparsityConfig::uniform(0.5), SparsityConfig::matrix_specific(0.5),
                                     SparsityConfig::modality_specific(0.5, 0.4, 0.6, 0.6, ModuleSizes{})}) {
        ExperimentSpec e = tiny_experiment();
        e.recipe = parse_recipe("lxmert(lmh) + mask train(lmh)");
        e.sparsity = sc;
        const RunRecord rec = run_recipe(e, &cache);
        INFO(sc.label() << ": " << rec.seeds.at(0).error);
        CHECK(rec.ok());
    }
}
