// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sdb/synth.h"

using namespace sdb;

namespace {

// Monte-Carlo soft-score accuracy of the question-only and vision-aware
// predictors on freshly generated examples.
struct Simulated {
    double qo_train = 0.0, qo_test = 0.0, ceil_train = 0.0, ceil_test = 0.0;
};

Simulated simulate(SynthSpec spec, std::size_t count) {
    spec.train_count = count;
    spec.test_count = count;
    spec.objects = 1;
    const auto data = generate(spec);
    const auto table = prototype_table(spec);
    auto score = [&](const Dataset& d, double& qo, double& ceil) {
        for (const auto& ex : d.examples) {
            const int guess = table.train_preferred[static_cast<std::size_t>(ex.prototype)];
            qo += ex.target(guess);
            ceil += ex.informative ? ex.target(ex.answer) : ex.target(guess);
        }
        qo /= static_cast<double>(d.examples.size());
        ceil /= static_cast<double>(d.examples.size());
    };
    Simulated s;
    score(data.train, s.qo_train, s.ceil_train);
    score(data.test, s.qo_test, s.ceil_test);
    return s;
}

std::string serialize(const Dataset& d) {
    std::ostringstream os;
    write_dataset(os, d);
    return os.str();
}

SynthSpec small_spec() {
    SynthSpec s;
    s.train_count = 600;
    s.test_count = 300;
    return s;
}

}  // namespace

TEST_CASE("same seed gives byte-identical splits") {
    const auto a = generate(small_spec());
    const auto b = generate(small_spec());
    CHECK(serialize(a.train) == serialize(b.train));
    CHECK(serialize(a.test) == serialize(b.test));
    SynthSpec other = small_spec();
    other.seed = 8;
    CHECK(serialize(generate(other).train) != serialize(a.train));
}

TEST_CASE("closed-form oracle without slices") {
    SynthSpec s;
    s.answers = 10;
    s.typed_slices = false;
    s.distractor_prob = 0.0;
    s.beta = 0.9;
    s.gamma = 0.8;
    const auto o = oracle_accuracies(s);
    CHECK(o.question_only_train == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(o.question_only_test == doctest::Approx(0.1 / 9.0).epsilon(1e-12));
    CHECK(o.vision_ceiling_test == doctest::Approx(0.8 + 0.2 * 0.1 / 9.0).epsilon(1e-12));
    s.gamma = 1.0;
    CHECK(oracle_accuracies(s).vision_ceiling_train == 1.0);
    CHECK(oracle_accuracies(s).vision_ceiling_test == 1.0);
}

TEST_CASE("closed-form oracle matches simulation within 0.01") {
    SynthSpec plain;
    plain.answers = 10;
    plain.typed_slices = false;
    for (const SynthSpec& spec : {plain, SynthSpec{}}) {
        const auto o = oracle_accuracies(spec);
        const auto m = simulate(spec, 100000);
        CHECK(std::fabs(m.qo_train - o.question_only_train) < 0.01);
        CHECK(std::fabs(m.qo_test - o.question_only_test) < 0.01);
        CHECK(std::fabs(m.ceil_train - o.vision_ceiling_train) < 0.01);
        CHECK(std::fabs(m.ceil_test - o.vision_ceiling_test) < 0.01);
    }
}

TEST_CASE("fully biased, uninformative data") {
    SynthSpec s;
    s.beta = 1.0;
    s.gamma = 0.0;
    s.distractor_prob = 0.0;
    const auto o = oracle_accuracies(s);
    CHECK(o.question_only_train == 1.0);
    CHECK(o.question_only_test == 0.0);
    const auto m = simulate(s, 5000);
    CHECK(m.qo_train == 1.0);
    CHECK(m.qo_test == 0.0);
}

TEST_CASE("unbiased boundary has no OOD gap") {
    SynthSpec s;
    s.answers = 8;
    s.typed_slices = false;
    s.beta = 1.0 / 8.0;
    const auto o = oracle_accuracies(s);
    CHECK(o.question_only_train == doctest::Approx(o.question_only_test).epsilon(1e-12));
    CHECK(o.vision_ceiling_train == doctest::Approx(o.vision_ceiling_test).epsilon(1e-12));
}

TEST_CASE("test-preferred answers are a derangement of the train-preferred ones") {
    for (std::uint64_t seed : {1, 2, 3, 7}) {
        SynthSpec s;
        s.seed = seed;
        const auto t = prototype_table(s);
        for (std::size_t p = 0; p < s.prototypes; ++p) {
            CHECK(t.train_preferred[p] != t.test_preferred[p]);
            CHECK(t.test_preferred[p] >= t.slice[p].first);
            CHECK(t.test_preferred[p] < t.slice[p].second);
        }
    }
}

TEST_CASE("every question type appears in both splits") {
    const auto d = generate(small_spec());
    for (const Dataset* split : {&d.train, &d.test}) {
        std::array<std::size_t, kQuestionTypes> n{};
        for (const auto& ex : split->examples) ++n[static_cast<std::size_t>(ex.type)];
        for (std::size_t c : n) CHECK(c > 0);
    }
}

TEST_CASE("targets give the ground truth full credit") {
    const auto d = generate(small_spec());
    for (const auto& ex : d.train.examples) {
        CHECK(ex.target(ex.answer) == 1.0);
        for (const auto& [a, v] : ex.targets) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("JSONL round-trip") {
    const auto d = generate(small_spec());
    std::istringstream in(serialize(d.test));
    const Dataset back = read_dataset(in);
    CHECK(back.split == "test");
    CHECK(back.spec == d.test.spec);
    REQUIRE(back.examples.size() == d.test.examples.size());
    CHECK(serialize(back) == serialize(d.test));
    std::istringstream bad("{\"not\": \"a header\"}\n");
    CHECK_THROWS(read_dataset(bad));
}

TEST_CASE("spec JSON round-trip and validation") {
    SynthSpec s;
    s.beta = 0.75;
    s.signal = 1.5;
    CHECK(synth_spec_from_json(synth_spec_to_json(s)) == s);
    SynthSpec bad;
    bad.answers = 1;
    CHECK_THROWS_AS(generate(bad), std::invalid_argument);
    bad = SynthSpec{};
    bad.prototypes = 2;
    CHECK_THROWS_AS(generate(bad), std::invalid_argument);
    bad = SynthSpec{};
    bad.gamma = 1.5;
    CHECK_THROWS_AS(generate(bad), std::invalid_argument);
}

TEST_CASE("batches pack examples in order") {
    const auto d = generate(small_spec());
    const Batch b = make_batch(d.train, 2, 5);
    CHECK(b.size == 3);
    CHECK(b.tokens.size() == 3 * d.train.spec.question_len);
    CHECK(std::equal(d.train.examples[2].tokens.begin(), d.train.examples[2].tokens.end(), b.tokens.begin()));
    const Tensor t = make_targets(d.train, 2, 5);
    CHECK(t.dim(0) == 3);
    CHECK(t.dim(1) == d.train.spec.answers);
    CHECK(t[static_cast<std::size_t>(d.train.examples[2].answer)] == 1.0);
}
