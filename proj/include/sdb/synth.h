// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Changing-priors benchmark generator.
//
// Each question prototype belongs to a question type whose answers occupy a
// slice of the answer space. In the training split a prototype's answer is its
// preferred answer with probability beta and uniform over the rest of the slice
// otherwise; the test split draws the same way from a deranged preferred answer,
// so the training prior misleads. With probability gamma one object slot of the
// visual input carries a fixed code of the true answer; otherwise every slot is
// noise.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sdb/losses.h"
#include "sdb/model.h"

namespace sdb {

enum class QuestionType : std::uint8_t { YesNo = 0, Number = 1, Other = 2 };
inline constexpr std::size_t kQuestionTypes = 3;

const char* question_type_name(QuestionType t);
QuestionType parse_question_type(const std::string& s);

struct SynthSpec {
    std::size_t answers = 16;        // K
    std::size_t prototypes = 24;     // Q
    double beta = 0.9;               // train concentration on the preferred answer
    double gamma = 0.8;              // probability the visual input encodes the answer
    std::size_t train_count = 20000;
    std::size_t test_count = 5000;
    std::uint64_t seed = 7;
    // Per-type answer slices; when false every prototype ranges over all answers.
    bool typed_slices = true;
    std::size_t question_len = 4;
    std::size_t objects = 8;
    std::size_t visual_dim = 16;
    double signal = 2.0;             // scale of the answer code in the informative slot
    double noise = 0.5;              // std of the per-feature Gaussian noise
    double distractor_prob = 0.2;
    double distractor_score = 0.3;

    void validate() const;
    bool operator==(const SynthSpec&) const = default;
};

struct Example {
    int prototype = 0;
    QuestionType type = QuestionType::YesNo;
    int answer = 0;                  // ground truth
    bool informative = false;
    std::vector<int> tokens;
    std::vector<double> visual;      // objects * visual_dim
    std::vector<std::pair<int, double>> targets;  // sparse soft scores

    double target(int a) const;
};

struct Dataset {
    SynthSpec spec;
    std::string split;
    std::vector<Example> examples;
};

struct SplitPair {
    Dataset train;
    Dataset test;
};

// Fixed structure shared by every split of a spec.
struct PrototypeTable {
    std::vector<QuestionType> type;          // per prototype
    std::vector<std::pair<int, int>> slice;  // [first, last) answer range per prototype
    std::vector<int> train_preferred;
    std::vector<int> test_preferred;
    std::vector<std::vector<double>> answer_codes;  // per answer, visual_dim
};

PrototypeTable prototype_table(const SynthSpec& spec);

SplitPair generate(const SynthSpec& spec);
// Answers uniform within each prototype's slice; for the pre-training surrogate.
Dataset generate_unbiased(const SynthSpec& spec, std::size_t count, std::uint64_t seed);

// Model dimensions that fit the spec's token and feature layout.
std::size_t synth_vocab_size(const SynthSpec& spec);
void fit_model_to_data(ModelConfig& cfg, const SynthSpec& spec);

struct OracleAccuracies {
    double question_only_train = 0.0;  // predicts the train-preferred answer
    double question_only_test = 0.0;
    double vision_ceiling_train = 0.0; // reads informative visuals, else train prior
    double vision_ceiling_test = 0.0;
    double debiased_vision_test = 0.0; // reads informative visuals, else uniform guess
};

// Closed-form expected soft-score accuracies from beta, gamma and the slices.
OracleAccuracies oracle_accuracies(const SynthSpec& spec);

// Question-only prior from ground-truth answer frequencies per prototype.
BiasPrior fit_bias_prior(const Dataset& train, double smoothing);

// Consecutive examples packed into model inputs and a dense target matrix.
Batch make_batch(const Dataset& data, std::size_t begin, std::size_t end, std::span<const std::size_t> order = {});
Tensor make_targets(const Dataset& data, std::size_t begin, std::size_t end, std::span<const std::size_t> order = {});

// Line-delimited JSON: a header line with the spec and split name, then one
// record per example.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& text);

}  // namespace sdb
