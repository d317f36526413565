// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/synth.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "json_fields.h"

namespace sdb {

using nlohmann::json;

const char* question_type_name(QuestionType t) {
    switch (t) {
        case QuestionType::YesNo: return "yes/no";
        case QuestionType::Number: return "number";
        case QuestionType::Other: return "other";
    }
    return "?";
}

QuestionType parse_question_type(const std::string& s) {
    for (auto t : {QuestionType::YesNo, QuestionType::Number, QuestionType::Other})
        if (s == question_type_name(t)) return t;
    throw std::invalid_argument("unknown question type '" + s + "'");
}

void SynthSpec::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("invalid synth spec: " + m); };
    if (answers < 2) fail("need at least 2 answers");
    if (typed_slices && answers < 6) fail("typed answer slices need at least 6 answers");
    if (prototypes < kQuestionTypes) fail("need at least one prototype per question type");
    if (!(beta >= 0.0 && beta <= 1.0)) fail("beta outside [0,1]");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma outside [0,1]");
    if (question_len < 3) fail("question_len must be >= 3");
    if (objects < 1 || visual_dim < 1) fail("visual layout must be non-empty");
    if (!(noise >= 0.0)) fail("negative noise");
    if (!(distractor_prob >= 0.0 && distractor_prob <= 1.0)) fail("distractor_prob outside [0,1]");
    if (!(distractor_score >= 0.0 && distractor_score < 1.0)) fail("distractor_score outside [0,1)");
}

double Example::target(int a) const {
    for (const auto& [ans, score] : targets)
        if (ans == a) return score;
    return 0.0;
}

std::size_t synth_vocab_size(const SynthSpec& spec) { return 4 + 2 * spec.prototypes; }

void fit_model_to_data(ModelConfig& cfg, const SynthSpec& spec) {
    cfg.vocab_size = synth_vocab_size(spec);
    cfg.visual_dim = spec.visual_dim;
    cfg.answer_count = spec.answers;
    cfg.max_question_len = std::max(cfg.max_question_len, spec.question_len);
    cfg.visual_objects = std::max(cfg.visual_objects, spec.objects);
}

namespace {

std::vector<int> question_tokens(const SynthSpec& spec, int proto, QuestionType type) {
    const int q = static_cast<int>(spec.prototypes);
    std::vector<int> t(spec.question_len);
    t[0] = 0;
    t[1] = 1 + static_cast<int>(type);
    t[2] = 4 + proto;
    for (std::size_t i = 3; i < spec.question_len; ++i) t[i] = 4 + q + (proto * static_cast<int>(i + 3)) % q;
    return t;
}

// Random derangement of 0..n-1 (n >= 2) by rejection.
std::vector<int> derangement(std::size_t n, std::mt19937_64& rng) {
    std::vector<int> p(n);
    for (;;) {
        std::iota(p.begin(), p.end(), 0);
        std::shuffle(p.begin(), p.end(), rng);
        bool ok = true;
        for (std::size_t i = 0; i < n; ++i) ok = ok && p[i] != static_cast<int>(i);
        if (ok) return p;
    }
}

int uniform_int(std::mt19937_64& rng, int lo, int hi_exclusive) {
    return std::uniform_int_distribution<int>(lo, hi_exclusive - 1)(rng);
}

Example make_example(const SynthSpec& spec, const PrototypeTable& table, int proto, int preferred, bool biased,
                     std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto [lo, hi] = table.slice[static_cast<std::size_t>(proto)];
    const int k = hi - lo;

    Example ex;
    ex.prototype = proto;
    ex.type = table.type[static_cast<std::size_t>(proto)];
    if (biased) {
        if (unit(rng) < spec.beta) {
            ex.answer = preferred;
        } else {
            const int r = uniform_int(rng, 0, k - 1);  // skip the preferred answer
            ex.answer = lo + r + (lo + r >= preferred ? 1 : 0);
        }
    } else {
        ex.answer = uniform_int(rng, lo, hi);
    }
    ex.tokens = question_tokens(spec, proto, ex.type);

    ex.visual.resize(spec.objects * spec.visual_dim);
    for (double& v : ex.visual) v = spec.noise * noise(rng);
    ex.informative = unit(rng) < spec.gamma;
    if (ex.informative) {
        const auto slot = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(spec.objects)));
        const auto& code = table.answer_codes[static_cast<std::size_t>(ex.answer)];
        for (std::size_t d = 0; d < spec.visual_dim; ++d) ex.visual[slot * spec.visual_dim + d] += spec.signal * code[d];
    }

    ex.targets.emplace_back(ex.answer, 1.0);
    if (unit(rng) < spec.distractor_prob) {
        const int r = uniform_int(rng, 0, k - 1);
        const int d = lo + r + (lo + r >= ex.answer ? 1 : 0);
        ex.targets.emplace_back(d, spec.distractor_score);
    }
    return ex;
}

}  // namespace

PrototypeTable prototype_table(const SynthSpec& spec) {
    spec.validate();
    const int K = static_cast<int>(spec.answers);
    std::array<std::pair<int, int>, kQuestionTypes> slices{};
    if (spec.typed_slices) {
        const int n_num = std::max(2, (K - 2) / 3);
        slices = {{{0, 2}, {2, 2 + n_num}, {2 + n_num, K}}};
    } else {
        slices = {{{0, K}, {0, K}, {0, K}}};
    }
    std::mt19937_64 rng(spec.seed ^ 0x5eedf00dULL);
    PrototypeTable t;
    std::array<std::vector<int>, kQuestionTypes> perm;
    for (std::size_t ty = 0; ty < kQuestionTypes; ++ty) {
        perm[ty] = derangement(static_cast<std::size_t>(slices[ty].second - slices[ty].first), rng);
    }
    for (std::size_t p = 0; p < spec.prototypes; ++p) {
        const auto ty = static_cast<QuestionType>(p % kQuestionTypes);
        const auto sl = slices[p % kQuestionTypes];
        t.type.push_back(ty);
        t.slice.push_back(sl);
        const int pref = uniform_int(rng, sl.first, sl.second);
        t.train_preferred.push_back(pref);
        t.test_preferred.push_back(sl.first + perm[p % kQuestionTypes][static_cast<std::size_t>(pref - sl.first)]);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    t.answer_codes.assign(spec.answers, std::vector<double>(spec.visual_dim));
    for (auto& code : t.answer_codes)
        for (double& v : code) v = normal(rng) > 0 ? 1.0 : -1.0;
    return t;
}

SplitPair generate(const SynthSpec& spec) {
    const PrototypeTable table = prototype_table(spec);
    std::mt19937_64 rng(spec.seed);
    auto draw_split = [&](const std::string& name, std::size_t count, const std::vector<int>& preferred) {
        Dataset d{spec, name, {}};
        d.examples.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            // Round-robin prototypes keep every question type populated.
            const int proto = static_cast<int>(i % spec.prototypes);
            d.examples.push_back(make_example(spec, table, proto, preferred[static_cast<std::size_t>(proto)], true, rng));
        }
        std::shuffle(d.examples.begin(), d.examples.end(), rng);
        return d;
    };
    SplitPair out;
    out.train = draw_split("train", spec.train_count, table.train_preferred);
    out.test = draw_split("test", spec.test_count, table.test_preferred);
    return out;
}

Dataset generate_unbiased(const SynthSpec& spec, std::size_t count, std::uint64_t seed) {
    const PrototypeTable table = prototype_table(spec);
    std::mt19937_64 rng(seed);
    Dataset d{spec, "unbiased", {}};
    d.examples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int proto = uniform_int(rng, 0, static_cast<int>(spec.prototypes));
        d.examples.push_back(make_example(spec, table, proto, 0, false, rng));
    }
    return d;
}

// ---------------------------------------------------------------------------

OracleAccuracies oracle_accuracies(const SynthSpec& spec) {
    const PrototypeTable table = prototype_table(spec);
    const double b = spec.beta, g = spec.gamma;
    const double bonus_rate = spec.distractor_prob * spec.distractor_score;
    OracleAccuracies acc;
    for (std::size_t p = 0; p < spec.prototypes; ++p) {
        const double k = static_cast<double>(table.slice[p].second - table.slice[p].first);
        const double other = (1.0 - b) / (k - 1.0);
        // Soft credit when the prediction is wrong but happens to be the distractor.
        auto credit = [&](double hit) { return hit + (1.0 - hit) * bonus_rate / (k - 1.0); };
        double hit_train, hit_test;
        if (b >= other) {
            hit_train = b;
            hit_test = other;  // train-preferred is never test-preferred
        } else {
            // The mode is some non-preferred answer; average over which one.
            hit_train = other;
            hit_test = (b + (k - 2.0) * other) / (k - 1.0);
        }
        acc.question_only_train += credit(hit_train);
        acc.question_only_test += credit(hit_test);
        acc.vision_ceiling_train += g + (1.0 - g) * credit(hit_train);
        acc.vision_ceiling_test += g + (1.0 - g) * credit(hit_test);
        acc.debiased_vision_test += g + (1.0 - g) * credit(1.0 / k);
    }
    const double q = static_cast<double>(spec.prototypes);
    acc.question_only_train /= q;
    acc.question_only_test /= q;
    acc.vision_ceiling_train /= q;
    acc.vision_ceiling_test /= q;
    acc.debiased_vision_test /= q;
    return acc;
}

BiasPrior fit_bias_prior(const Dataset& train, double smoothing) {
    const std::size_t K = train.spec.answers;
    std::map<int, std::vector<double>> counts;
    for (const auto& ex : train.examples) {
        auto& c = counts[ex.prototype];
        if (c.empty()) c.assign(K, 0.0);
        c[static_cast<std::size_t>(ex.answer)] += 1.0;
    }
    std::vector<PrototypeAnswerCounts> flat;
    for (auto& [proto, c] : counts) flat.push_back({proto, std::move(c)});
    return fit_bias_prior(flat, K, smoothing);
}

Batch make_batch(const Dataset& data, std::size_t begin, std::size_t end, std::span<const std::size_t> order) {
    const SynthSpec& s = data.spec;
    Batch b;
    b.size = end - begin;
    b.question_len = s.question_len;
    b.objects = s.objects;
    b.tokens.reserve(b.size * s.question_len);
    b.visual.reserve(b.size * s.objects * s.visual_dim);
    for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = data.examples[order.empty() ? i : order[i]];
        b.tokens.insert(b.tokens.end(), ex.tokens.begin(), ex.tokens.end());
        b.visual.insert(b.visual.end(), ex.visual.begin(), ex.visual.end());
    }
    return b;
}

Tensor make_targets(const Dataset& data, std::size_t begin, std::size_t end, std::span<const std::size_t> order) {
    const std::size_t K = data.spec.answers;
    Tensor t({end - begin, K}, 0.0);
    for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = data.examples[order.empty() ? i : order[i]];
        for (const auto& [a, score] : ex.targets) t[(i - begin) * K + static_cast<std::size_t>(a)] = score;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Serialization

void to_json(json& j, const ModelConfig& c) {
    j = json{{"d_model", c.d_model},           {"d_ffn", c.d_ffn},
             {"heads", c.heads},               {"lang_layers", c.lang_layers},
             {"vis_layers", c.vis_layers},     {"cross_layers", c.cross_layers},
             {"vocab_size", c.vocab_size},     {"visual_dim", c.visual_dim},
             {"answer_count", c.answer_count}, {"pooled_dim", c.pooled_dim},
             {"max_question_len", c.max_question_len}, {"visual_objects", c.visual_objects}};
}

void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.d_model = j.value("d_model", d.d_model);
    c.d_ffn = j.value("d_ffn", d.d_ffn);
    c.heads = j.value("heads", d.heads);
    c.lang_layers = j.value("lang_layers", d.lang_layers);
    c.vis_layers = j.value("vis_layers", d.vis_layers);
    c.cross_layers = j.value("cross_layers", d.cross_layers);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.visual_dim = j.value("visual_dim", d.visual_dim);
    c.answer_count = j.value("answer_count", d.answer_count);
    c.pooled_dim = j.value("pooled_dim", d.pooled_dim);
    c.max_question_len = j.value("max_question_len", d.max_question_len);
    c.visual_objects = j.value("visual_objects", d.visual_objects);
}

void to_json(json& j, const SynthSpec& s) {
    j = json{{"answers", s.answers},
             {"prototypes", s.prototypes},
             {"beta", s.beta},
             {"gamma", s.gamma},
             {"train_count", s.train_count},
             {"test_count", s.test_count},
             {"seed", s.seed},
             {"typed_slices", s.typed_slices},
             {"question_len", s.question_len},
             {"objects", s.objects},
             {"visual_dim", s.visual_dim},
             {"signal", s.signal},
             {"noise", s.noise},
             {"distractor_prob", s.distractor_prob},
             {"distractor_score", s.distractor_score}};
}

void from_json(const json& j, SynthSpec& s) {
    SynthSpec d;
    s.answers = j.value("answers", d.answers);
    s.prototypes = j.value("prototypes", d.prototypes);
    s.beta = j.value("beta", d.beta);
    s.gamma = j.value("gamma", d.gamma);
    s.train_count = j.value("train_count", d.train_count);
    s.test_count = j.value("test_count", d.test_count);
    s.seed = j.value("seed", d.seed);
    s.typed_slices = j.value("typed_slices", d.typed_slices);
    s.question_len = j.value("question_len", d.question_len);
    s.objects = j.value("objects", d.objects);
    s.visual_dim = j.value("visual_dim", d.visual_dim);
    s.signal = j.value("signal", d.signal);
    s.noise = j.value("noise", d.noise);
    s.distractor_prob = j.value("distractor_prob", d.distractor_prob);
    s.distractor_score = j.value("distractor_score", d.distractor_score);
}

std::string synth_spec_to_json(const SynthSpec& spec) { return json(spec).dump(2); }

SynthSpec synth_spec_from_json(const std::string& text) { return json::parse(text).get<SynthSpec>(); }

void write_dataset(std::ostream& out, const Dataset& data) {
    out << json{{"synth_spec", data.spec}, {"split", data.split}, {"count", data.examples.size()}}.dump() << '\n';
    for (const auto& ex : data.examples) {
        json targets = json::object();
        for (const auto& [a, s] : ex.targets) targets[std::to_string(a)] = s;
        json rec{{"prototype", ex.prototype},
                 {"type", question_type_name(ex.type)},
                 {"answer", ex.answer},
                 {"informative", ex.informative},
                 {"tokens", ex.tokens},
                 {"visual", ex.visual},
                 {"targets", targets}};
        out << rec.dump() << '\n';
    }
    if (!out) throw std::runtime_error("dataset write failed");
}

Dataset read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("dataset file is empty");
    auto head = json::parse(line);
    Dataset d;
    d.spec = head.at("synth_spec").get<SynthSpec>();
    d.split = head.at("split").get<std::string>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto r = json::parse(line);
        Example ex;
        ex.prototype = r.at("prototype").get<int>();
        ex.type = parse_question_type(r.at("type").get<std::string>());
        ex.answer = r.at("answer").get<int>();
        ex.informative = r.value("informative", false);
        ex.tokens = r.at("tokens").get<std::vector<int>>();
        ex.visual = r.at("visual").get<std::vector<double>>();
        for (auto it = r.at("targets").begin(); it != r.at("targets").end(); ++it)
            ex.targets.emplace_back(std::stoi(it.key()), it.value().get<double>());
        std::sort(ex.targets.begin(), ex.targets.end(), [](auto& a, auto& b) { return a.second > b.second; });
        if (ex.tokens.size() != d.spec.question_len || ex.visual.size() != d.spec.objects * d.spec.visual_dim) {
            throw std::runtime_error("dataset record " + std::to_string(d.examples.size()) + " does not match the header layout");
        }
        d.examples.push_back(std::move(ex));
    }
    const auto count = head.value("count", d.examples.size());
    if (count != d.examples.size()) {
        throw std::runtime_error("dataset header declares " + std::to_string(count) + " records, found " +
                                 std::to_string(d.examples.size()));
    }
    return d;
}

void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_dataset(out, data);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_dataset(in);
}

}  // namespace sdb
