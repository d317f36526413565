// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "sdb/eval.h"
#include "sdb/synth.h"
#include "test_util.h"

using namespace sdb;

namespace {

Dataset hand_dataset() {
    Dataset d;
    d.split = "test";
    d.spec.answers = 4;
    auto ex = [](QuestionType t, int answer, std::vector<std::pair<int, double>> targets) {
        Example e;
        e.type = t;
        e.answer = answer;
        e.targets = std::move(targets);
        return e;
    };
    d.examples = {ex(QuestionType::YesNo, 0, {{0, 1.0}}), ex(QuestionType::Number, 2, {{2, 1.0}, {3, 0.3}}),
                  ex(QuestionType::Other, 1, {{1, 1.0}}), ex(QuestionType::Other, 3, {{3, 1.0}})};
    return d;
}

std::vector<double> one_hot_logits(const std::vector<int>& picks, std::size_t k) {
    std::vector<double> l(picks.size() * k, 0.0);
    for (std::size_t i = 0; i < picks.size(); ++i) l[i * k + static_cast<std::size_t>(picks[i])] = 5.0;
    return l;
}

MetricsRecord record(double overall, std::uint64_t seed, const std::string& split = "test") {
    MetricsRecord r;
    r.split = split;
    r.seed = seed;
    r.overall = overall;
    r.per_type = {overall, overall / 2, overall / 3};
    return r;
}

}  // namespace

TEST_CASE("soft-score accuracy") {
    const Dataset d = hand_dataset();
    const auto perfect = score_logits(one_hot_logits({0, 2, 1, 3}, 4), d);
    CHECK(perfect.overall == 1.0);
    for (double v : perfect.per_type) CHECK(v == 1.0);

    const auto soft = score_logits(one_hot_logits({0, 3, 0, 3}, 4), d);
    CHECK(soft.overall == doctest::Approx((1.0 + 0.3 + 0.0 + 1.0) / 4.0).epsilon(1e-15));
    CHECK(soft.per_type[1] == doctest::Approx(0.3));
    CHECK(soft.per_type[2] == doctest::Approx(0.5));
    CHECK(soft.type_counts == std::array<std::size_t, 3>{1, 1, 2});

    CHECK_THROWS_AS(score_logits(std::vector<double>(3, 0.0), d), std::invalid_argument);
    Dataset empty;
    empty.spec.answers = 4;
    CHECK_THROWS_AS(score_logits({}, empty), std::invalid_argument);
}

TEST_CASE("per-type accuracies recombine to overall") {
    SynthSpec s;
    s.test_count = 2000;
    s.train_count = 10;
    const auto d = generate(s).test;
    const auto logits = sdb::testing::random_tensor({d.examples.size(), s.answers}, 4);
    const auto r = score_logits(logits.data(), d);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < kQuestionTypes; ++t) {
        acc += r.per_type[t] * static_cast<double>(r.type_counts[t]);
        n += r.type_counts[t];
    }
    CHECK(n == d.examples.size());
    CHECK(std::fabs(acc / static_cast<double>(n) - r.overall) <= 1e-9);
}

TEST_CASE("random predictions score at chance") {
    SynthSpec s;
    s.typed_slices = false;
    s.distractor_prob = 0.0;
    const auto d = generate_unbiased(s, 20000, 3);
    const auto logits = sdb::testing::random_tensor({d.examples.size(), s.answers}, 9);
    CHECK(std::fabs(score_logits(logits.data(), d).overall - 1.0 / 16.0) < 0.02);
}

TEST_CASE("model evaluation matches scoring its logits") {
    SynthSpec s;
    s.train_count = 10;
    s.test_count = 300;
    const auto d = generate(s).test;
    ModelConfig cfg = sdb::testing::tiny_config();
    fit_model_to_data(cfg, s);
    const auto reg = build_model(cfg, 1);
    const auto r = evaluate(reg, nullptr, d, 3, 64);
    const auto out = forward(reg, nullptr, make_batch(d, 0, d.examples.size()));
    const auto ref = score_logits(out.logits.data(), d, 3);
    CHECK(r.overall == doctest::Approx(ref.overall).epsilon(1e-12));
    CHECK(r.seed == 3);
    CHECK(r.split == "test");
}

TEST_CASE("seed aggregation") {
    const std::vector<MetricsRecord> one = {record(0.4, 0)};
    CHECK(aggregate(one).metrics.at("overall").std == 0.0);
    const std::vector<MetricsRecord> two = {record(0.5, 0), record(0.7, 1)};
    const auto a = aggregate(two);
    CHECK(a.seeds == 2);
    CHECK(a.metrics.at("overall").mean == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(a.metrics.at("overall").std == doctest::Approx(0.1).epsilon(1e-12));

    std::vector<MetricsRecord> many;
    for (int i = 0; i < 6; ++i) many.push_back(record(0.1 * i + 0.05, static_cast<std::uint64_t>(i)));
    const auto base = aggregate(many);
    std::mt19937 rng(4);
    for (int k = 0; k < 5; ++k) {
        std::shuffle(many.begin(), many.end(), rng);
        const auto again = aggregate(many);
        for (const auto& [name, m] : base.metrics) {
            CHECK(again.metrics.at(name).mean == doctest::Approx(m.mean).epsilon(1e-14));
            CHECK(again.metrics.at(name).std == doctest::Approx(m.std).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(aggregate(std::vector<MetricsRecord>{}), std::invalid_argument);
    CHECK_THROWS_AS(aggregate(std::vector<MetricsRecord>{record(0.1, 0), record(0.1, 1, "train")}), std::invalid_argument);
}

TEST_CASE("OOD gaps") {
    const auto a = record(0.55, 0), b = record(0.48, 0);
    for (const auto& [name, v] : gap(a, a)) CHECK(v == 0.0);
    CHECK(gap(a, b).at("overall") == doctest::Approx(0.07).epsilon(1e-12));
    for (const auto& [name, v] : gap(a, b)) CHECK(v == -gap(b, a).at(name));
    CHECK_THROWS_AS(gap(a, record(0.5, 0, "train")), std::invalid_argument);
}

TEST_CASE("report CSV") {
    std::ostringstream empty;
    write_report_csv(empty, {});
    CHECK(empty.str() == "recipe,sparsity_config,split,metric,mean,std,seed_count\n");

    const std::vector<MetricsRecord> recs = {record(0.1 + 1.0 / 3.0, 0), record(0.2 / 7.0, 1)};
    auto rows = report_rows("lxmert(lmh) + mask train(lmh)", "s=0.50 L=0.50 R=0.70 X=0.41", aggregate(recs));
    rows.push_back({"quoted, \"name\"", "s=0.70 uniform", "train", "other", 1e-300, 0.0, 4});
    CHECK(rows.size() == kMetricNames.size() + 1);
    std::ostringstream os;
    write_report_csv(os, rows);
    std::istringstream in(os.str());
    const auto back = read_report_csv(in);
    CHECK(back == rows);
}

TEST_CASE("reference annotations") {
    const auto a = reference_annotations();
    std::map<std::string, double> m;
    for (const auto& p : a) m[p.name] = p.value;
    CHECK(m.at("lxmert(bce) full") == 48.01);
    CHECK(m.at("lxmert(lmh) full") == 63.55);
    CHECK(m.at("best subnetwork at 50% sparsity") == 63.88);
    const std::vector<ReportRow> rows = {{"r", "s=0.50 uniform", "test", "overall", 0.5, 0.0, 4}};
    const std::string j = curves_json(rows);
    CHECK(j.find(kReferenceAnnotationLabel) != std::string::npos);
    CHECK(j.find("63.55") != std::string::npos);
    CHECK(j.find("48.01") != std::string::npos);
}

TEST_CASE("sparsity labels") {
    CHECK(label_sparsity("s=0.50 uniform") == 0.5);
    CHECK(label_sparsity("s=0.70 L=0.85 R=0.12 X=0.80") == 0.7);
    CHECK_THROWS(label_sparsity("nonsense"));
    const std::vector<ReportRow> rows = {{"r", "s=0.50 uniform", "test", "overall", 0.5, 0.01, 4}};
    CHECK(render_table(rows).find("s=0.50 uniform") != std::string::npos);
}
