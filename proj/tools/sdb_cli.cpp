// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: data generation, pre-training, recipe runs, one-shot
// pruning, modality-specific grid search, evaluation and reporting.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdb/checkpoint.h"
#include "sdb/eval.h"
#include "sdb/pipeline.h"
#include "sdb/pruning.h"
#include "sdb/sparsity.h"
#include "sdb/synth.h"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sdb;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

ExperimentSpec load_spec_or_default(const std::string& path) {
    return path.empty() ? ExperimentSpec{} : load_experiment_spec(path);
}

// Model config adjusted to the spec's data layout.
ModelConfig fitted_model(const ExperimentSpec& spec) {
    ModelConfig cfg = spec.model;
    fit_model_to_data(cfg, spec.data);
    return cfg;
}

json metrics_to_json(const MetricsRecord& m) {
    json j = {{"split", m.split}, {"seed", m.seed}};
    for (const auto& [k, v] : m.metrics()) j[k] = v;
    if (!m.audit.empty()) j["audit"] = m.audit;
    return j;
}

AggregateRecord aggregate_from_json(const json& j, const std::string& split) {
    AggregateRecord a;
    a.split = split;
    for (const auto& [metric, v] : j.items()) {
        a.metrics[metric] = {v.at("mean").get<double>(), v.at("std").get<double>()};
        a.seeds = v.at("seeds").get<std::size_t>();
    }
    return a;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string config;
    std::string out = "data";
    std::optional<double> beta, gamma;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> train_count, test_count;
};

int cmd_gen_data(const GenDataArgs& a) {
    SynthSpec spec = a.config.empty() ? SynthSpec{} : synth_spec_from_json(read_file(a.config));
    if (a.beta) spec.beta = *a.beta;
    if (a.gamma) spec.gamma = *a.gamma;
    if (a.seed) spec.seed = *a.seed;
    if (a.train_count) spec.train_count = *a.train_count;
    if (a.test_count) spec.test_count = *a.test_count;
    spec.validate();
    const SplitPair data = generate(spec);
    const fs::path dir(a.out);
    fs::create_directories(dir);
    save_dataset((dir / "train.jsonl").string(), data.train);
    save_dataset((dir / "test.jsonl").string(), data.test);
    write_file(dir / "spec.json", synth_spec_to_json(spec));
    const OracleAccuracies o = oracle_accuracies(spec);
    std::printf("wrote %zu train and %zu test examples to %s\n", data.train.examples.size(), data.test.examples.size(),
                dir.string().c_str());
    std::printf("oracle accuracy (train / test): question-only %.4f / %.4f, vision ceiling %.4f / %.4f, debiased vision test %.4f\n",
                o.question_only_train, o.question_only_test, o.vision_ceiling_train, o.vision_ceiling_test, o.debiased_vision_test);
    return 0;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
    std::string config;
    std::string out = "pretrained.ckpt";
};

int cmd_pretrain(const PretrainArgs& a) {
    const ExperimentSpec spec = load_spec_or_default(a.config);
    spec.validate();
    ModelState state = init_state(fitted_model(spec), spec.pretrain_seed);
    const Dataset unbiased = generate_unbiased(spec.data, spec.pretrain_examples, spec.pretrain_seed);
    const TrainLog log = pretrain_surrogate(state, unbiased, spec.pretrain, spec.pretrain_seed);
    save_checkpoint(a.out, Checkpoint{"pretrained", std::move(state.registry), std::move(state.gate_weight), std::nullopt});
    std::printf("pre-trained %zu steps on %zu unbiased examples", log.losses.size(), unbiased.examples.size());
    if (!log.losses.empty()) std::printf(", loss %.4f -> %.4f", log.losses.front(), log.losses.back());
    std::printf("; saved %s\n", a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string recipe;
    std::optional<double> sparsity;
    std::string pretrained;
    std::string out_dir;
};

void apply_overrides(ExperimentSpec& spec, const std::string& recipe, std::optional<double> sparsity, const std::string& out_dir) {
    if (!recipe.empty()) spec.recipe = parse_recipe(recipe);
    if (sparsity) spec.sparsity = SparsityConfig::uniform(*sparsity);
    if (!out_dir.empty()) spec.output_dir = out_dir;
}

void seed_pretrained(RecipeCache& cache, const std::string& path, const ExperimentSpec& spec) {
    if (path.empty()) return;
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.registry.config == fitted_model(spec)))
        throw std::invalid_argument("checkpoint " + path + " does not match the experiment's model config");
    cache.pretrained = ModelState{std::move(ck.registry), std::move(ck.gate_weight)};
}

void print_run(const RunRecord& r) {
    std::printf("%s [%s]\n", r.recipe.c_str(), r.sparsity.c_str());
    for (const auto& s : r.seeds) {
        if (!s.error.empty()) {
            std::printf("  seed %llu failed: %s\n", static_cast<unsigned long long>(s.seed), s.error.c_str());
            continue;
        }
        std::printf("  seed %llu: full OOD %.4f, subnetwork OOD %.4f\n", static_cast<unsigned long long>(s.seed), s.full_test.overall,
                    s.final_test.overall);
    }
    if (r.ok()) {
        const auto full = r.full_test().metrics.at("overall"), fin = r.final_test().metrics.at("overall");
        std::printf("  mean: full %.4f +- %.4f, subnetwork %.4f +- %.4f\n", full.mean, full.std, fin.mean, fin.std);
    }
}

int cmd_train(const TrainArgs& a) {
    ExperimentSpec spec = load_spec_or_default(a.config);
    apply_overrides(spec, a.recipe, a.sparsity, a.out_dir);
    RecipeCache cache;
    seed_pretrained(cache, a.pretrained, spec);
    const RunRecord r = run_recipe(spec, &cache);
    print_run(r);
    if (!spec.output_dir.empty()) std::printf("run record: %s\n", (fs::path(spec.output_dir) / "metrics.json").string().c_str());
    return r.ok() ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct PruneArgs {
    std::string checkpoint;
    std::string config;
    std::optional<double> sparsity;
    std::string scheme = "uniform";
    std::vector<double> modality;
    std::string out = "pruned.ckpt";
    std::string audit_out;
};

SparsityConfig sparsity_from_args(const ExperimentSpec& spec, const ParameterRegistry& reg, std::optional<double> s,
                                  const std::string& scheme, const std::vector<double>& modality) {
    if (!s) return spec.sparsity;
    const ModuleSizes sizes = module_sizes(reg);
    switch (parse_scheme(scheme)) {
        case SparsityScheme::Uniform: return SparsityConfig::uniform(*s, sizes);
        case SparsityScheme::MatrixSpecific: return SparsityConfig::matrix_specific(*s, sizes);
        case SparsityScheme::ModalitySpecific:
            if (modality.size() != 3) throw std::invalid_argument("--modality needs three values: s_L s_R s_X");
            return SparsityConfig::modality_specific(*s, modality[0], modality[1], modality[2], sizes);
    }
    throw std::invalid_argument("unknown scheme " + scheme);
}

int cmd_prune(const PruneArgs& a) {
    const ExperimentSpec spec = load_spec_or_default(a.config);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    const SparsityConfig sc = sparsity_from_args(spec, ck.registry, a.sparsity, a.scheme, a.modality);
    if (sc.scheme == SparsityScheme::ModalitySpecific) {
        const OverallCheck check = verify_overall(sc, 0.01);
        if (!check.ok)
            std::fprintf(stderr, "warning: (s_L, s_R, s_X) gives overall sparsity %.4f, not %.4f; use `search --grid-only` for budget-exact triples\n",
                         check.overall, sc.overall);
    }
    const auto targets = sc.scheme == SparsityScheme::MatrixSpecific ? matrix_specific_targets(ck.registry, sc.overall)
                                                                     : per_matrix_targets(ck.registry, sc);
    MaskSet masks = omp(ck.registry, targets);
    masks.global_threshold = sc.scheme == SparsityScheme::MatrixSpecific;
    const SparsityAudit audit = audit_sparsity(masks, ck.registry, sc);
    ck.masks = std::move(masks);
    ck.tag = "omp";
    save_checkpoint(a.out, ck);
    if (!a.audit_out.empty()) write_file(a.audit_out, audit.to_json());
    std::printf("%s: overall sparsity %.4f (target %.4f), audit %s; saved %s\n", sc.label().c_str(), audit.overall_sparsity,
                audit.target_overall, audit.pass ? "pass" : "FAIL", a.out.c_str());
    for (const auto& f : audit.failures) std::printf("  %s\n", f.c_str());
    return audit.pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct SearchArgs {
    std::string config;
    std::string recipe;
    double overall = 0.5;
    std::string sizes = "model";
    std::vector<double> levels;
    std::optional<double> refine_lo, refine_hi;
    double step = 0.05;
    bool grid_only = false;
    std::string pretrained;
    std::string out_dir = "search";
};

int cmd_search(const SearchArgs& a) {
    ExperimentSpec spec = load_spec_or_default(a.config);
    if (!a.recipe.empty()) spec.recipe = parse_recipe(a.recipe);
    ModuleSizes sizes;
    if (a.sizes == "reference") {
        sizes = reference_module_sizes();
    } else if (a.sizes == "model") {
        sizes = module_sizes(model_manifest(fitted_model(spec)));
    } else {
        throw std::invalid_argument("--sizes must be 'model' or 'reference'");
    }
    std::vector<GridPoint> grid;
    if (a.refine_lo || a.refine_hi) {
        grid = refine_grid(Region{a.refine_lo.value_or(0.0), a.refine_hi.value_or(1.0)}, a.overall, sizes, a.step);
    } else if (!a.levels.empty()) {
        grid = grid_from_levels(a.overall, a.levels, sizes);
    } else {
        grid = coarse_grid(a.overall, sizes);
    }
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    {
        std::ofstream g(dir / "grid.csv");
        write_grid_csv(g, grid);
    }
    std::printf("%zu feasible grid points at s=%.2f; grid written to %s\n", grid.size(), a.overall, (dir / "grid.csv").string().c_str());
    if (a.grid_only) return 0;

    RecipeCache cache;
    seed_pretrained(cache, a.pretrained, spec);
    std::vector<ReportRow> rows;
    bool all_ok = true;
    double best = -1.0;
    std::string best_label;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& p = grid[i];
        ExperimentSpec e = spec;
        e.sparsity = SparsityConfig::modality_specific(a.overall, p.s_l, p.s_r, p.s_x, sizes);
        e.output_dir = (dir / ("point-" + std::to_string(i))).string();
        const RunRecord r = run_recipe(e, &cache);
        print_run(r);
        all_ok = all_ok && r.ok();
        if (!r.ok()) continue;
        const AggregateRecord agg = r.final_test();
        for (auto& row : report_rows(r.recipe, r.sparsity, agg)) rows.push_back(row);
        if (agg.metrics.at("overall").mean > best) best = agg.metrics.at("overall").mean, best_label = r.sparsity;
    }
    {
        std::ofstream out(dir / "search.csv");
        write_report_csv(out, rows);
    }
    if (!best_label.empty()) std::printf("best: %s with OOD accuracy %.4f\n", best_label.c_str(), best);
    std::printf("results: %s\n", (dir / "search.csv").string().c_str());
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::uint64_t seed = 0;
    bool full = false;
};

int cmd_eval(const EvalArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Dataset data = load_dataset(a.data);
    const MaskSet* masks = (ck.masks && !a.full) ? &*ck.masks : nullptr;
    MetricsRecord m = evaluate(ck.registry, masks, data, a.seed);
    if (masks) m.audit = "survivors " + std::to_string(masks->survivors()) + "/" + std::to_string(masks->total());
    std::cout << metrics_to_json(m).dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out_dir = "report";
    bool include_full = true;
};

int cmd_report(const ReportArgs& a) {
    std::vector<fs::path> files;
    for (const auto& r : a.runs) {
        const fs::path p(r);
        if (fs::is_regular_file(p)) {
            files.push_back(p);
        } else if (fs::is_directory(p)) {
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file() && e.path().filename() == "metrics.json") files.push_back(e.path());
        } else {
            throw std::invalid_argument("no such run record: " + r);
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<ReportRow> rows;
    std::set<std::pair<std::string, std::string>> full_seen;
    for (const auto& f : files) {
        const json j = json::parse(read_file(f.string()));
        if (!j.contains("aggregate")) {
            std::fprintf(stderr, "skipping %s: no successful seeds\n", f.string().c_str());
            continue;
        }
        const std::string recipe = j.at("recipe"), sparsity = j.at("sparsity");
        const json& agg = j.at("aggregate");
        for (auto& row : report_rows(recipe, sparsity, aggregate_from_json(agg.at("final_test"), "test"))) rows.push_back(row);
        if (a.include_full && agg.contains("full_test")) {
            const std::string full = recipe.substr(0, recipe.find(" + "));
            const AggregateRecord fa = aggregate_from_json(agg.at("full_test"), "test");
            const auto key = std::make_pair(full, std::to_string(fa.metrics.at("overall").mean));
            if (full_seen.insert(key).second)
                for (auto& row : report_rows(full, "s=0.00 full", fa)) rows.push_back(row);
        }
    }
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    {
        std::ofstream csv(dir / "report.csv");
        write_report_csv(csv, rows);
    }
    write_file(dir / "curves.json", curves_json(rows));
    std::cout << render_table(rows);
    std::printf("\n%zu rows from %zu run records; wrote %s and %s\n", rows.size(), files.size(), (dir / "report.csv").string().c_str(),
                (dir / "curves.json").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse and debiased subnetwork search on a miniature cross-modal transformer"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "Generate a changing-priors train/test split as JSONL");
    gen->add_option("--config", gd.config, "SynthSpec JSON file");
    gen->add_option("--out", gd.out, "Output directory");
    gen->add_option("--beta", gd.beta, "Train concentration on the preferred answer");
    gen->add_option("--gamma", gd.gamma, "Probability the visual input encodes the answer");
    gen->add_option("--seed", gd.seed, "Generator seed");
    gen->add_option("--train-count", gd.train_count, "Train examples");
    gen->add_option("--test-count", gd.test_count, "Test examples");

    PretrainArgs pa;
    auto* pre = app.add_subcommand("pretrain", "Pre-train the surrogate on unbiased data and save a checkpoint");
    pre->add_option("--config", pa.config, "ExperimentSpec JSON file");
    pre->add_option("--out", pa.out, "Checkpoint path");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Run a recipe (stage 1, compression, optional stage 3) for every seed");
    train->add_option("--config", ta.config, "ExperimentSpec JSON file");
    train->add_option("--recipe", ta.recipe, "Recipe name, e.g. \"lxmert(bce) + mask train(lmh)\"");
    train->add_option("--sparsity", ta.sparsity, "Uniform overall sparsity");
    train->add_option("--pretrained", ta.pretrained, "Pre-trained checkpoint to start from");
    train->add_option("--out-dir", ta.out_dir, "Run directory for checkpoints and metrics.json");

    PruneArgs pr;
    auto* prune = app.add_subcommand("prune", "One-shot magnitude pruning of a checkpoint");
    prune->add_option("--checkpoint", pr.checkpoint, "Input checkpoint")->required();
    prune->add_option("--config", pr.config, "ExperimentSpec JSON file supplying the sparsity config");
    prune->add_option("--sparsity", pr.sparsity, "Overall sparsity (overrides the config)");
    prune->add_option("--scheme", pr.scheme, "uniform, modality-specific or matrix-specific");
    prune->add_option("--modality", pr.modality, "s_L s_R s_X for the modality-specific scheme")->expected(3);
    prune->add_option("--out", pr.out, "Output checkpoint with masks");
    prune->add_option("--audit", pr.audit_out, "Write the sparsity audit JSON here");

    SearchArgs sa;
    auto* search = app.add_subcommand("search", "Modality-specific sparsity grid search through the pipeline");
    search->add_option("--config", sa.config, "ExperimentSpec JSON file");
    search->add_option("--recipe", sa.recipe, "Recipe name");
    search->add_option("--overall", sa.overall, "Overall sparsity")->check(CLI::Range(0.0, 1.0));
    search->add_option("--sizes", sa.sizes, "Module sizes for the budget: model or reference");
    search->add_option("--levels", sa.levels, "Sparsity levels for the walked modules (default: coarse grid)");
    search->add_option("--refine-lo", sa.refine_lo, "Lower bound of a refinement region");
    search->add_option("--refine-hi", sa.refine_hi, "Upper bound of a refinement region");
    search->add_option("--step", sa.step, "Refinement step");
    search->add_flag("--grid-only", sa.grid_only, "Only write the grid");
    search->add_option("--pretrained", sa.pretrained, "Pre-trained checkpoint to start from");
    search->add_option("--out-dir", sa.out_dir, "Output directory");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (with its masks, if any) on a JSONL split");
    ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint")->required();
    ev->add_option("--data", ea.data, "Dataset JSONL")->required();
    ev->add_option("--seed", ea.seed, "Seed recorded in the metrics");
    ev->add_flag("--full", ea.full, "Ignore stored masks");

    ReportArgs ra;
    auto* rep = app.add_subcommand("report", "Collect run records into report.csv, curves.json and a table");
    rep->add_option("runs", ra.runs, "Run directories or metrics.json files")->required();
    rep->add_option("--out-dir", ra.out_dir, "Output directory");
    rep->add_flag("!--no-full", ra.include_full, "Leave out the full-model rows");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return cmd_gen_data(gd);
        if (*pre) return cmd_pretrain(pa);
        if (*train) return cmd_train(ta);
        if (*prune) return cmd_prune(pr);
        if (*search) return cmd_search(sa);
        if (*ev) return cmd_eval(ea);
        if (*rep) return cmd_report(ra);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
