// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-training surrogate and the three-stage pipeline: full-model fine-tuning,
// compression (one-shot magnitude pruning or mask training) and optional
// further fine-tuning of the subnetwork. Recipes are named
// "lxmert(loss) + method(loss) [+ loss ft]".

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sdb/eval.h"
#include "sdb/losses.h"
#include "sdb/mask_set.h"
#include "sdb/model.h"
#include "sdb/pruning.h"
#include "sdb/sparsity.h"
#include "sdb/synth.h"

namespace sdb {

enum class LossKind { Bce, Lmh };
enum class CompressMethod { Omp, MaskTrain };
enum class FurtherFt { None, Bce, Lmh };
enum class MaskInit { Magnitude, Random };

const char* loss_name(LossKind k);
LossKind parse_loss(const std::string& s);
const char* mask_init_name(MaskInit m);
MaskInit parse_mask_init(const std::string& s);

struct TrainSettings {
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    double learning_rate = 5e-4;
    std::size_t max_steps = 0;  // 0: no cap

    bool operator==(const TrainSettings&) const = default;
};

struct Recipe {
    LossKind stage1 = LossKind::Bce;
    CompressMethod method = CompressMethod::MaskTrain;
    LossKind stage2 = LossKind::Bce;  // mask-training loss; unused for OMP
    FurtherFt stage3 = FurtherFt::None;

    bool operator==(const Recipe&) const = default;
};

std::string recipe_name(const Recipe& r);
// Inverse of recipe_name; throws std::invalid_argument on anything else.
Recipe parse_recipe(const std::string& name);
// Both stage-1 losses crossed with mask train(bce/lmh) and OMP + bce/lmh ft.
std::vector<Recipe> canonical_recipes();

struct ExperimentSpec {
    ModelConfig model;
    SynthSpec data;
    std::string train_path;  // optional JSONL datasets overriding `data`
    std::string test_path;
    Recipe recipe;
    SparsityConfig sparsity = SparsityConfig::uniform(0.5);
    MaskInit mask_init = MaskInit::Magnitude;
    MaskHyperparams mask;
    double entropy_weight = 0.36;   // z
    double prior_smoothing = 1.0;
    std::size_t pretrain_examples = 4000;
    std::uint64_t pretrain_seed = 1;
    TrainSettings pretrain;
    TrainSettings stage1;
    TrainSettings stage2;
    TrainSettings stage3;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
    bool evaluate_train = true;  // also score the (in-distribution) train split
    std::string output_dir;

    // Throws std::invalid_argument on the first inconsistency.
    void validate() const;
};

std::string experiment_spec_to_json(const ExperimentSpec& spec);
// Missing fields keep their defaults.
ExperimentSpec experiment_spec_from_json(const std::string& text);
ExperimentSpec load_experiment_spec(const std::string& path);

// Weights plus the LMH gate vector.
struct ModelState {
    ParameterRegistry registry;
    Tensor gate_weight;  // [pooled_dim]
};

ModelState init_state(const ModelConfig& cfg, std::uint64_t seed);

struct TrainLog {
    std::vector<double> losses;  // per step
};

// Question-only prior rows for every example, [examples, answers].
Tensor prior_matrix(const BiasPrior& prior, const Dataset& data);

struct LossSetup {
    LossKind kind = LossKind::Bce;
    const BiasPrior* prior = nullptr;  // required for lmh
    double entropy_weight = 0.36;
};

// BCE on unbiased data over all weights. Throws std::runtime_error on a
// non-finite loss.
TrainLog pretrain_surrogate(ModelState& state, const Dataset& unbiased, const TrainSettings& settings, std::uint64_t seed);

// All weights (and the gate for lmh) train.
TrainLog stage1_finetune(ModelState& state, const Dataset& train, const LossSetup& loss, const TrainSettings& settings,
                         std::uint64_t seed);

struct CompressResult {
    MaskSet masks;
    SparsityAudit audit;
    TrainLog log;
    std::uint64_t checksum_before = 0;  // weights excluding the classifier
    std::uint64_t checksum_after = 0;
};

struct CompressOptions {
    CompressMethod method = CompressMethod::MaskTrain;
    SparsityConfig sparsity = SparsityConfig::uniform(0.5);
    MaskInit init = MaskInit::Magnitude;
    MaskHyperparams hyper;
};

// OMP or mask training. Mask training freezes every weight except the
// classifier and gate, which train with Adam. Throws std::runtime_error when
// the final audit fails or the frozen weights changed.
CompressResult stage2_compress(ModelState& state, const Dataset& train, const LossSetup& loss, const CompressOptions& opts,
                               const TrainSettings& settings, std::uint64_t seed);

// Masks fixed; surviving weights, classifier and gate train.
TrainLog stage3_finetune(ModelState& state, const MaskSet& masks, const Dataset& train, const LossSetup& loss,
                         const TrainSettings& settings, std::uint64_t seed);

struct SeedRecord {
    std::uint64_t seed = 0;
    MetricsRecord full_test;        // after stage 1
    MetricsRecord full_train;
    MetricsRecord compressed_test;  // after stage 2
    MetricsRecord final_test;       // after stage 3 when run, else stage 2
    MetricsRecord final_train;
    std::string audit_json;
    std::uint64_t weights_before_stage2 = 0;  // checksum excluding the classifier
    std::uint64_t weights_after_stage2 = 0;
    std::vector<std::string> checkpoints;
    std::string error;              // non-empty when a stage failed
};

struct RunRecord {
    std::string recipe;
    std::string sparsity;
    std::vector<SeedRecord> seeds;

    bool ok() const;
    // Aggregates over successful seeds.
    AggregateRecord full_test() const;
    AggregateRecord final_test() const;
    std::string to_json() const;
};

// Reuses pre-training, data and stage-1 results across recipes that share them.
class RecipeCache {
public:
    struct Key {
        std::uint64_t seed;
        LossKind loss;
        auto operator<=>(const Key&) const = default;
    };
    std::optional<ModelState> pretrained;
    std::optional<SplitPair> data;
    std::optional<BiasPrior> prior;
    std::map<Key, ModelState> stage1;
    std::map<Key, std::pair<MetricsRecord, MetricsRecord>> stage1_metrics;  // test, train
};

// Runs the full pipeline for every seed. Failures are recorded per seed and
// the remaining seeds still run. Writes checkpoints and metrics.json under
// output_dir when it is set.
RunRecord run_recipe(const ExperimentSpec& spec, RecipeCache* cache = nullptr);

}  // namespace sdb
