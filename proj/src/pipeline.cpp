// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/pipeline.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json_fields.h"
#include "sdb/checkpoint.h"
#include "sdb/optim.h"

namespace sdb {

using json = nlohmann::json;

const char* loss_name(LossKind k) { return k == LossKind::Bce ? "bce" : "lmh"; }

LossKind parse_loss(const std::string& s) {
    if (s == "bce") return LossKind::Bce;
    if (s == "lmh") return LossKind::Lmh;
    throw std::invalid_argument("unknown loss '" + s + "' (expected bce or lmh)");
}

const char* mask_init_name(MaskInit m) { return m == MaskInit::Magnitude ? "magnitude" : "random"; }

MaskInit parse_mask_init(const std::string& s) {
    if (s == "magnitude") return MaskInit::Magnitude;
    if (s == "random") return MaskInit::Random;
    throw std::invalid_argument("unknown mask init '" + s + "' (expected magnitude or random)");
}

std::string recipe_name(const Recipe& r) {
    std::string s = std::string("lxmert(") + loss_name(r.stage1) + ") + ";
    s += r.method == CompressMethod::MaskTrain ? std::string("mask train(") + loss_name(r.stage2) + ")" : std::string("OMP");
    if (r.stage3 != FurtherFt::None) s += std::string(" + ") + (r.stage3 == FurtherFt::Bce ? "bce" : "lmh") + " ft";
    return s;
}

Recipe parse_recipe(const std::string& name) {
    for (LossKind s1 : {LossKind::Bce, LossKind::Lmh})
        for (CompressMethod m : {CompressMethod::MaskTrain, CompressMethod::Omp})
            for (LossKind s2 : {LossKind::Bce, LossKind::Lmh})
                for (FurtherFt s3 : {FurtherFt::None, FurtherFt::Bce, FurtherFt::Lmh}) {
                    if (m == CompressMethod::Omp && s2 == LossKind::Lmh) continue;
                    Recipe r{s1, m, s2, s3};
                    if (recipe_name(r) == name) return r;
                }
    throw std::invalid_argument("unknown recipe '" + name + "'");
}

std::vector<Recipe> canonical_recipes() {
    std::vector<Recipe> out;
    for (LossKind s1 : {LossKind::Bce, LossKind::Lmh}) {
        out.push_back({s1, CompressMethod::MaskTrain, LossKind::Bce, FurtherFt::None});
        out.push_back({s1, CompressMethod::MaskTrain, LossKind::Lmh, FurtherFt::None});
        out.push_back({s1, CompressMethod::Omp, LossKind::Bce, FurtherFt::Bce});
        out.push_back({s1, CompressMethod::Omp, LossKind::Bce, FurtherFt::Lmh});
    }
    return out;
}

// ---------------------------------------------------------------------------
// ExperimentSpec

void ExperimentSpec::validate() const {
    model.validate();
    data.validate();
    if (seeds.empty()) throw std::invalid_argument("experiment: seeds list is empty");
    for (const TrainSettings* t : {&pretrain, &stage1, &stage2, &stage3}) {
        if (t->batch_size == 0) throw std::invalid_argument("experiment: batch size must be positive");
        if (!(t->learning_rate > 0.0)) throw std::invalid_argument("experiment: learning rate must be positive");
    }
    if (entropy_weight < 0.0) throw std::invalid_argument("experiment: entropy weight must be >= 0");
    if (!(sparsity.overall >= 0.0 && sparsity.overall <= 1.0)) throw std::invalid_argument("experiment: overall sparsity outside [0,1]");
    if (sparsity.scheme == SparsityScheme::ModalitySpecific) {
        if (!sparsity.modality) throw std::invalid_argument("experiment: modality-specific sparsity needs (s_L, s_R, s_X)");
        for (double v : *sparsity.modality)
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("experiment: module sparsity outside [0,1]");
    }
    if (mask.alpha < 1.0) throw std::invalid_argument("experiment: mask alpha must be >= 1");
}

namespace {

json settings_json(const TrainSettings& t) {
    return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate}, {"max_steps", t.max_steps}};
}

TrainSettings settings_from(const json& j, TrainSettings d) {
    d.epochs = j.value("epochs", d.epochs);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.learning_rate = j.value("learning_rate", d.learning_rate);
    d.max_steps = j.value("max_steps", d.max_steps);
    return d;
}

json sparsity_json(const SparsityConfig& s) {
    json j = {{"overall", s.overall}, {"scheme", scheme_name(s.scheme)}};
    if (s.scheme == SparsityScheme::ModalitySpecific && s.modality) j["modules"] = *s.modality;
    return j;
}

}  // namespace

std::string experiment_spec_to_json(const ExperimentSpec& s) {
    json j;
    j["model"] = s.model;
    j["data"] = s.data;
    if (!s.train_path.empty()) j["train_path"] = s.train_path;
    if (!s.test_path.empty()) j["test_path"] = s.test_path;
    j["recipe"] = recipe_name(s.recipe);
    j["sparsity"] = sparsity_json(s.sparsity);
    j["mask_init"] = mask_init_name(s.mask_init);
    j["mask"] = {{"alpha", s.mask.alpha}, {"initial_threshold", s.mask.initial_threshold},
                 {"recompute_interval", s.mask.recompute_interval}, {"learning_rate", s.mask.learning_rate}};
    j["entropy_weight"] = s.entropy_weight;
    j["prior_smoothing"] = s.prior_smoothing;
    j["pretrain_examples"] = s.pretrain_examples;
    j["evaluate_train"] = s.evaluate_train;
    j["pretrain_seed"] = s.pretrain_seed;
    j["pretrain"] = settings_json(s.pretrain);
    j["stage1"] = settings_json(s.stage1);
    j["stage2"] = settings_json(s.stage2);
    j["stage3"] = settings_json(s.stage3);
    j["seeds"] = s.seeds;
    j["output_dir"] = s.output_dir;
    return j.dump(2);
}

ExperimentSpec experiment_spec_from_json(const std::string& text) {
    const json j = json::parse(text);
    ExperimentSpec s;
    if (j.contains("model")) s.model = j.at("model").get<ModelConfig>();
    if (j.contains("data")) s.data = j.at("data").get<SynthSpec>();
    s.train_path = j.value("train_path", s.train_path);
    s.test_path = j.value("test_path", s.test_path);
    if (j.contains("recipe")) s.recipe = parse_recipe(j.at("recipe").get<std::string>());
    if (j.contains("sparsity")) {
        const auto& sp = j.at("sparsity");
        const double overall = sp.value("overall", 0.5);
        const auto scheme = parse_scheme(sp.value("scheme", std::string("uniform")));
        if (scheme == SparsityScheme::Uniform) s.sparsity = SparsityConfig::uniform(overall);
        else if (scheme == SparsityScheme::MatrixSpecific) s.sparsity = SparsityConfig::matrix_specific(overall);
        else {
            const auto m = sp.at("modules").get<std::array<double, 3>>();
            s.sparsity = SparsityConfig::modality_specific(overall, m[0], m[1], m[2], {});
        }
    }
    if (j.contains("mask_init")) s.mask_init = parse_mask_init(j.at("mask_init").get<std::string>());
    if (j.contains("mask")) {
        const auto& m = j.at("mask");
        s.mask.alpha = m.value("alpha", s.mask.alpha);
        s.mask.initial_threshold = m.value("initial_threshold", s.mask.initial_threshold);
        s.mask.recompute_interval = m.value("recompute_interval", s.mask.recompute_interval);
        s.mask.learning_rate = m.value("learning_rate", s.mask.learning_rate);
    }
    s.entropy_weight = j.value("entropy_weight", s.entropy_weight);
    s.prior_smoothing = j.value("prior_smoothing", s.prior_smoothing);
    s.pretrain_examples = j.value("pretrain_examples", s.pretrain_examples);
    s.evaluate_train = j.value("evaluate_train", s.evaluate_train);
    s.pretrain_seed = j.value("pretrain_seed", s.pretrain_seed);
    if (j.contains("pretrain")) s.pretrain = settings_from(j.at("pretrain"), s.pretrain);
    if (j.contains("stage1")) s.stage1 = settings_from(j.at("stage1"), s.stage1);
    if (j.contains("stage2")) s.stage2 = settings_from(j.at("stage2"), s.stage2);
    if (j.contains("stage3")) s.stage3 = settings_from(j.at("stage3"), s.stage3);
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.output_dir = j.value("output_dir", s.output_dir);
    return s;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open experiment spec " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return experiment_spec_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Training

ModelState init_state(const ModelConfig& cfg, std::uint64_t seed) {
    ModelState s;
    s.registry = build_model(cfg, seed);
    s.gate_weight = Tensor({cfg.pooled_dim}, 0.0);
    return s;
}

Tensor prior_matrix(const BiasPrior& prior, const Dataset& data) {
    const std::size_t K = prior.answers();
    Tensor t({data.examples.size(), K});
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        const auto row = prior.lookup(data.examples[i].prototype);
        std::copy(row.begin(), row.end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * K));
    }
    return t;
}

namespace {

enum class Trainable { All, HeadOnly, None };

void set_trainable(ModelState& state, Trainable which, bool gate) {
    for (auto& e : state.registry.entries()) {
        const bool on = which == Trainable::All || (which == Trainable::HeadOnly && e.tag == ModuleTag::Classifier);
        e.value.set_requires_grad(on);
        if (!on) e.value.drop_grad();
    }
    state.gate_weight.set_requires_grad(gate);
    if (!gate) state.gate_weight.drop_grad();
}

std::vector<Tensor*> trainable_tensors(ModelState& state) {
    std::vector<Tensor*> out;
    for (auto& e : state.registry.entries())
        if (e.value.requires_grad()) out.push_back(&e.value);
    if (state.gate_weight.requires_grad()) out.push_back(&state.gate_weight);
    return out;
}

struct BatchSource {
    const Dataset& data;
    const Tensor* prior_rows;  // [examples, K] or null
    std::vector<std::size_t> order;
    std::mt19937_64 rng;

    BatchSource(const Dataset& d, const Tensor* prior, std::uint64_t seed) : data(d), prior_rows(prior), order(d.examples.size()), rng(seed) {
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    void shuffle() { std::shuffle(order.begin(), order.end(), rng); }

    Tensor prior_batch(std::size_t b, std::size_t e) const {
        const std::size_t K = prior_rows->dim(1);
        Tensor t({e - b, K});
        for (std::size_t i = b; i < e; ++i)
            std::copy_n(prior_rows->data().begin() + static_cast<std::ptrdiff_t>(order[i] * K), K,
                        t.data().begin() + static_cast<std::ptrdiff_t>((i - b) * K));
        return t;
    }
};

Var batch_loss(Tape& tape, ModelState& state, MaskSet* masks, const BatchSource& src, std::size_t b, std::size_t e,
               const LossSetup& loss) {
    const Batch batch = make_batch(src.data, b, e, src.order);
    const ForwardVars fv = forward(tape, state.registry, masks, batch);
    Var targets = tape.constant(make_targets(src.data, b, e, src.order));
    if (loss.kind == LossKind::Bce) return bce_loss(fv.logits, targets);
    Var pb = tape.constant(src.prior_batch(b, e));
    Var w = tape.leaf(state.gate_weight);
    return lmh_loss(fv.logits, pb, fv.pooled, w, targets, loss.entropy_weight).loss;
}

std::optional<Tensor> prior_rows_for(const Dataset& data, const LossSetup& loss) {
    if (loss.kind == LossKind::Bce) return std::nullopt;
    if (!loss.prior) throw std::invalid_argument("lmh loss needs a bias prior");
    if (loss.prior->answers() != data.spec.answers) throw std::invalid_argument("bias prior answer count does not match the data");
    return prior_matrix(*loss.prior, data);
}

[[noreturn]] void diverged(const std::string& stage, std::size_t epoch, std::size_t step, double value) {
    throw std::runtime_error(stage + ": non-finite loss " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step));
}

// Adam over whatever set_trainable() selected.
TrainLog train_weights(const std::string& stage, ModelState& state, MaskSet* masks, const Dataset& data, const LossSetup& loss,
                       const TrainSettings& settings, std::uint64_t seed) {
    if (data.examples.empty()) throw std::invalid_argument(stage + ": empty training split");
    const auto prior = prior_rows_for(data, loss);
    BatchSource src(data, prior ? &*prior : nullptr, seed);
    Adam opt(trainable_tensors(state), {settings.learning_rate});
    TrainLog log;
    std::size_t step = 0;
    for (std::size_t ep = 0; ep < settings.epochs; ++ep) {
        src.shuffle();
        for (std::size_t b = 0; b < data.examples.size(); b += settings.batch_size) {
            if (settings.max_steps && step >= settings.max_steps) return log;
            const std::size_t e = std::min(data.examples.size(), b + settings.batch_size);
            opt.zero_grad();
            Tape tape;
            Var l = batch_loss(tape, state, masks, src, b, e, loss);
            const double v = l.item();
            if (!std::isfinite(v)) diverged(stage, ep, step, v);
            tape.backward(l);
            opt.step();
            log.losses.push_back(v);
            ++step;
        }
    }
    return log;
}

}  // namespace

TrainLog pretrain_surrogate(ModelState& state, const Dataset& unbiased, const TrainSettings& settings, std::uint64_t seed) {
    set_trainable(state, Trainable::All, false);
    auto log = train_weights("pretrain", state, nullptr, unbiased, {LossKind::Bce, nullptr, 0.0}, settings, seed);
    set_trainable(state, Trainable::None, false);
    return log;
}

TrainLog stage1_finetune(ModelState& state, const Dataset& train, const LossSetup& loss, const TrainSettings& settings,
                         std::uint64_t seed) {
    set_trainable(state, Trainable::All, loss.kind == LossKind::Lmh);
    auto log = train_weights("stage1", state, nullptr, train, loss, settings, seed);
    set_trainable(state, Trainable::None, false);
    return log;
}

CompressResult stage2_compress(ModelState& state, const Dataset& train, const LossSetup& loss, const CompressOptions& opts,
                               const TrainSettings& settings, std::uint64_t seed) {
    CompressResult res;
    res.checksum_before = state.registry.checksum(false);
    const bool matrix_specific = opts.sparsity.scheme == SparsityScheme::MatrixSpecific;
    const SparsityTargets targets = per_matrix_targets(state.registry, opts.sparsity);

    if (opts.method == CompressMethod::Omp) {
        res.masks = omp(state.registry, targets);
    } else {
        if (train.examples.empty()) throw std::invalid_argument("stage2: empty training split");
        MaskSet masks = opts.init == MaskInit::Magnitude ? init_real_mask(state.registry, targets, opts.hyper)
                                                         : random_init_real_mask(state.registry, targets, opts.hyper, seed);
        masks.global_threshold = matrix_specific;
        if (matrix_specific) recompute_thresholds(masks);

        set_trainable(state, Trainable::HeadOnly, loss.kind == LossKind::Lmh);
        const auto prior = prior_rows_for(train, loss);
        BatchSource src(train, prior ? &*prior : nullptr, seed);
        Adam opt(trainable_tensors(state), {settings.learning_rate});
        std::size_t step = 0;
        for (std::size_t ep = 0; ep < settings.epochs; ++ep) {
            src.shuffle();
            for (std::size_t b = 0; b < train.examples.size(); b += settings.batch_size) {
                if (settings.max_steps && step >= settings.max_steps) break;
                const std::size_t e = std::min(train.examples.size(), b + settings.batch_size);
                opt.zero_grad();
                MaskLossFn fn = [&](Tape& tape, MaskSet& m) { return batch_loss(tape, state, &m, src, b, e, loss); };
                const auto r = mask_train_step(masks, fn, step + 1, step);
                opt.step();
                res.log.losses.push_back(r.loss);
                ++step;
            }
        }
        recompute_thresholds(masks);
        set_mask_grad(masks, false);
        set_trainable(state, Trainable::None, false);
        res.masks = std::move(masks);
    }
    res.checksum_after = state.registry.checksum(false);
    if (opts.method == CompressMethod::MaskTrain && res.checksum_after != res.checksum_before) {
        throw std::runtime_error("stage2: frozen weights changed during mask training");
    }
    res.audit = audit_sparsity(res.masks, state.registry, opts.sparsity);
    if (!res.audit.pass) {
        std::string msg = "stage2: sparsity audit failed";
        for (const auto& f : res.audit.failures) msg += "; " + f;
        throw std::runtime_error(msg);
    }
    return res;
}

TrainLog stage3_finetune(ModelState& state, const MaskSet& masks, const Dataset& train, const LossSetup& loss,
                         const TrainSettings& settings, std::uint64_t seed) {
    MaskSet fixed = masks;
    set_mask_grad(fixed, false);
    set_trainable(state, Trainable::All, loss.kind == LossKind::Lmh);
    auto log = train_weights("stage3", state, &fixed, train, loss, settings, seed);
    set_trainable(state, Trainable::None, false);
    for (std::size_t i = 0; i < masks.matrices().size(); ++i) {
        if (!masks.matrices()[i].binary.equals(fixed.matrices()[i].binary)) throw std::logic_error("stage3: masks changed");
    }
    return log;
}

// ---------------------------------------------------------------------------
// Recipes

bool RunRecord::ok() const {
    return !seeds.empty() && std::all_of(seeds.begin(), seeds.end(), [](const SeedRecord& s) { return s.error.empty(); });
}

namespace {

template <typename F>
AggregateRecord aggregate_field(const std::vector<SeedRecord>& seeds, F field) {
    std::vector<MetricsRecord> recs;
    for (const auto& s : seeds)
        if (s.error.empty()) recs.push_back(field(s));
    return aggregate(recs);
}

json metrics_json(const MetricsRecord& m) {
    json j = {{"split", m.split}, {"seed", m.seed}};
    for (const auto& [k, v] : m.metrics()) j[k] = v;
    return j;
}

}  // namespace

AggregateRecord RunRecord::full_test() const {
    return aggregate_field(seeds, [](const SeedRecord& s) { return s.full_test; });
}

AggregateRecord RunRecord::final_test() const {
    return aggregate_field(seeds, [](const SeedRecord& s) { return s.final_test; });
}

std::string RunRecord::to_json() const {
    json j;
    j["recipe"] = recipe;
    j["sparsity"] = sparsity;
    json arr = json::array();
    for (const auto& s : seeds) {
        json js = {{"seed", s.seed}, {"error", s.error}, {"checkpoints", s.checkpoints}};
        if (s.error.empty()) {
            js["full_test"] = metrics_json(s.full_test);
            if (!s.full_train.split.empty()) js["full_train"] = metrics_json(s.full_train);
            js["compressed_test"] = metrics_json(s.compressed_test);
            js["final_test"] = metrics_json(s.final_test);
            if (!s.final_train.split.empty()) js["final_train"] = metrics_json(s.final_train);
            js["audit"] = json::parse(s.audit_json);
            js["weights_checksum"] = {{"before_stage2", s.weights_before_stage2}, {"after_stage2", s.weights_after_stage2}};
        }
        arr.push_back(js);
    }
    j["seeds"] = arr;
    if (std::any_of(seeds.begin(), seeds.end(), [](const SeedRecord& s) { return s.error.empty(); })) {
        json agg;
        for (const auto& [name, a] : {std::pair{"full_test", full_test()}, std::pair{"final_test", final_test()}}) {
            for (const auto& [m, v] : a.metrics) agg[name][m] = {{"mean", v.mean}, {"std", v.std}, {"seeds", a.seeds}};
        }
        j["aggregate"] = agg;
    }
    return j.dump(2);
}

RunRecord run_recipe(const ExperimentSpec& spec_in, RecipeCache* cache) {
    spec_in.validate();
    RecipeCache local;
    RecipeCache& c = cache ? *cache : local;
    ExperimentSpec spec = spec_in;

    if (!c.data) {
        if (!spec.train_path.empty() || !spec.test_path.empty()) {
            if (spec.train_path.empty() || spec.test_path.empty()) throw std::invalid_argument("experiment: give both train_path and test_path");
            c.data = SplitPair{load_dataset(spec.train_path), load_dataset(spec.test_path)};
        } else {
            c.data = generate(spec.data);
        }
    }
    const SplitPair& data = *c.data;
    fit_model_to_data(spec.model, data.train.spec);
    if (!c.prior) c.prior = fit_bias_prior(data.train, spec.prior_smoothing);

    RunRecord rec;
    rec.recipe = recipe_name(spec.recipe);
    rec.sparsity = spec.sparsity.label();
    if (spec.sparsity.scheme == SparsityScheme::ModalitySpecific) {
        spec.sparsity.sizes = module_sizes(model_manifest(spec.model));
    }

    namespace fs = std::filesystem;
    auto save = [&](SeedRecord& sr, const std::string& name, const ModelState& st, const MaskSet* masks) {
        if (spec.output_dir.empty()) return;
        const fs::path dir = fs::path(spec.output_dir) / ("seed-" + std::to_string(sr.seed));
        fs::create_directories(dir);
        Checkpoint ck{name, st.registry, st.gate_weight, masks ? std::optional<MaskSet>(*masks) : std::nullopt};
        const std::string p = (dir / (name + ".ckpt")).string();
        save_checkpoint(p, ck);
        sr.checkpoints.push_back(p);
    };

    for (std::uint64_t seed : spec.seeds) {
        SeedRecord sr;
        sr.seed = seed;
        try {
            if (!c.pretrained) {
                ModelState st = init_state(spec.model, spec.pretrain_seed);
                const Dataset unbiased = generate_unbiased(data.train.spec, spec.pretrain_examples, spec.pretrain_seed);
                pretrain_surrogate(st, unbiased, spec.pretrain, spec.pretrain_seed);
                c.pretrained = std::move(st);
            }
            save(sr, "pretrained", *c.pretrained, nullptr);

            const RecipeCache::Key key{seed, spec.recipe.stage1};
            if (!c.stage1.contains(key)) {
                ModelState st = *c.pretrained;
                stage1_finetune(st, data.train, {spec.recipe.stage1, &*c.prior, spec.entropy_weight}, spec.stage1, seed);
                MetricsRecord train_metrics;
                if (spec.evaluate_train) train_metrics = evaluate(st.registry, nullptr, data.train, seed);
                c.stage1_metrics[key] = {evaluate(st.registry, nullptr, data.test, seed), train_metrics};
                c.stage1.emplace(key, std::move(st));
            }
            ModelState st = c.stage1.at(key);
            sr.full_test = c.stage1_metrics.at(key).first;
            sr.full_train = c.stage1_metrics.at(key).second;
            save(sr, "stage1", st, nullptr);

            CompressOptions opts{spec.recipe.method, spec.sparsity, spec.mask_init, spec.mask};
            const LossKind l2 = spec.recipe.method == CompressMethod::MaskTrain ? spec.recipe.stage2 : LossKind::Bce;
            auto comp = stage2_compress(st, data.train, {l2, &*c.prior, spec.entropy_weight}, opts, spec.stage2, seed + 1000);
            sr.audit_json = comp.audit.to_json();
            sr.weights_before_stage2 = comp.checksum_before;
            sr.weights_after_stage2 = comp.checksum_after;
            sr.compressed_test = evaluate(st.registry, &comp.masks, data.test, seed);
            save(sr, "stage2", st, &comp.masks);

            if (spec.recipe.stage3 != FurtherFt::None) {
                const LossKind l3 = spec.recipe.stage3 == FurtherFt::Bce ? LossKind::Bce : LossKind::Lmh;
                stage3_finetune(st, comp.masks, data.train, {l3, &*c.prior, spec.entropy_weight}, spec.stage3, seed + 2000);
                sr.final_test = evaluate(st.registry, &comp.masks, data.test, seed);
                save(sr, "stage3", st, &comp.masks);
            } else {
                sr.final_test = sr.compressed_test;
            }
            if (spec.evaluate_train) sr.final_train = evaluate(st.registry, &comp.masks, data.train, seed);
            sr.final_test.audit = sr.final_train.audit = spec.sparsity.label();
        } catch (const std::exception& e) {
            sr.error = e.what();
        }
        rec.seeds.push_back(std::move(sr));
    }

    if (!spec.output_dir.empty()) {
        fs::create_directories(spec.output_dir);
        std::ofstream out(fs::path(spec.output_dir) / "metrics.json");
        out << rec.to_json() << '\n';
        if (!out) throw std::runtime_error("cannot write metrics.json under " + spec.output_dir);
    }
    return rec;
}

}  // namespace sdb
