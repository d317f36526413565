// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/eval.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace sdb {

std::map<std::string, double> MetricsRecord::metrics() const {
    return {{kMetricNames[0], overall}, {kMetricNames[1], per_type[0]}, {kMetricNames[2], per_type[1]}, {kMetricNames[3], per_type[2]}};
}

MetricsRecord score_logits(std::span<const double> logits, const Dataset& data, std::uint64_t seed) {
    if (data.examples.empty()) throw std::invalid_argument("evaluate: split '" + data.split + "' is empty");
    const std::size_t n = data.examples.size();
    if (logits.size() % n != 0) throw std::invalid_argument("evaluate: logits do not divide into examples");
    const std::size_t k = logits.size() / n;
    MetricsRecord r;
    r.split = data.split;
    r.seed = seed;
    std::array<double, kQuestionTypes> sums{};
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * k;
        const auto best = static_cast<int>(std::max_element(row, row + k) - row);
        const double credit = data.examples[i].target(best);
        const auto t = static_cast<std::size_t>(data.examples[i].type);
        sums[t] += credit;
        ++r.type_counts[t];
        total += credit;
    }
    for (std::size_t t = 0; t < kQuestionTypes; ++t) r.per_type[t] = r.type_counts[t] ? sums[t] / static_cast<double>(r.type_counts[t]) : 0.0;
    r.overall = total / static_cast<double>(n);
    return r;
}

MetricsRecord evaluate(const ParameterRegistry& registry, const MaskSet* masks, const Dataset& data, std::uint64_t seed,
                       std::size_t batch_size) {
    if (data.examples.empty()) throw std::invalid_argument("evaluate: split '" + data.split + "' is empty");
    std::vector<double> logits;
    logits.reserve(data.examples.size() * registry.config.answer_count);
    for (std::size_t b = 0; b < data.examples.size(); b += batch_size) {
        const std::size_t e = std::min(data.examples.size(), b + batch_size);
        const auto out = forward(registry, masks, make_batch(data, b, e));
        logits.insert(logits.end(), out.logits.data().begin(), out.logits.data().end());
    }
    return score_logits(logits, data, seed);
}

MetricSummary mean_std(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("mean_std: no values");
    MetricSummary s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}

AggregateRecord aggregate(std::span<const MetricsRecord> records) {
    if (records.empty()) throw std::invalid_argument("aggregate: no records");
    AggregateRecord a;
    a.split = records.front().split;
    a.seeds = records.size();
    for (const auto& r : records) {
        if (r.split != a.split) throw std::invalid_argument("aggregate: mixed splits '" + a.split + "' and '" + r.split + "'");
    }
    for (const auto& name : kMetricNames) {
        std::vector<double> v;
        for (const auto& r : records) v.push_back(r.metrics().at(name));
        a.metrics[name] = mean_std(v);
    }
    return a;
}

std::map<std::string, double> gap(const MetricsRecord& subnetwork, const MetricsRecord& full) {
    if (subnetwork.split != full.split) throw std::invalid_argument("gap: records come from different splits");
    std::map<std::string, double> out;
    const auto a = subnetwork.metrics();
    const auto b = full.metrics();
    for (const auto& [k, v] : a) out[k] = v - b.at(k);
    return out;
}

std::vector<ReportRow> report_rows(const std::string& recipe, const std::string& sparsity, const AggregateRecord& agg) {
    std::vector<ReportRow> rows;
    for (const auto& name : kMetricNames) {
        const auto& m = agg.metrics.at(name);
        rows.push_back({recipe, sparsity, agg.split, name, m.mean, m.std, agg.seeds});
    }
    return rows;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_report_csv(std::ostream& out, std::span<const ReportRow> rows) {
    out << "recipe,sparsity_config,split,metric,mean,std,seed_count\n";
    for (const auto& r : rows) {
        out << csv_field(r.recipe) << ',' << csv_field(r.sparsity) << ',' << csv_field(r.split) << ',' << csv_field(r.metric)
            << ',' << num(r.mean) << ',' << num(r.std) << ',' << r.seed_count << '\n';
    }
    if (!out) throw std::runtime_error("write_report_csv: write failed");
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_report_csv: missing header");
    if (line != "recipe,sparsity_config,split,metric,mean,std,seed_count") {
        throw std::runtime_error("read_report_csv: unexpected header '" + line + "'");
    }
    std::vector<ReportRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != 7) throw std::runtime_error("read_report_csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        ReportRow r{f[0], f[1], f[2], f[3], std::stod(f[4]), std::stod(f[5]), static_cast<std::size_t>(std::stoull(f[6]))};
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ReferenceAnnotation> reference_annotations() {
    return {{"lxmert(bce) full", 48.01}, {"lxmert(lmh) full", 63.55}, {"best subnetwork at 50% sparsity", 63.88}};
}

double label_sparsity(const std::string& label) {
    if (label.rfind("s=", 0) != 0) throw std::invalid_argument("sparsity label '" + label + "' does not start with s=");
    return std::stod(label.substr(2));
}

std::string curves_json(std::span<const ReportRow> rows) {
    nlohmann::json j;
    nlohmann::json curves = nlohmann::json::object();
    for (const auto& r : rows) {
        nlohmann::json pt = {{"sparsity", label_sparsity(r.sparsity)}, {"config", r.sparsity}, {"mean", r.mean}, {"std", r.std},
                             {"seeds", r.seed_count}};
        curves[r.recipe][r.split][r.metric].push_back(pt);
    }
    for (auto& [recipe, splits] : curves.items()) {
        for (auto& [split, metrics] : splits.items()) {
            for (auto& [metric, pts] : metrics.items()) {
                std::stable_sort(pts.begin(), pts.end(), [](const nlohmann::json& a, const nlohmann::json& b) {
                    return a.at("sparsity").get<double>() < b.at("sparsity").get<double>();
                });
            }
        }
    }
    j["curves"] = curves;
    nlohmann::json ann;
    ann["label"] = kReferenceAnnotationLabel;
    nlohmann::json vals = nlohmann::json::array();
    for (const auto& a : reference_annotations()) vals.push_back({{"name", a.name}, {"value", a.value}});
    ann["values"] = vals;
    j["annotations"] = ann;
    return j.dump(2);
}

std::string render_table(std::span<const ReportRow> rows) {
    std::size_t w_recipe = 6, w_sp = 8;
    for (const auto& r : rows) {
        w_recipe = std::max(w_recipe, r.recipe.size());
        w_sp = std::max(w_sp, r.sparsity.size());
    }
    std::ostringstream os;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-*s  %-*s  %-6s  %-8s  %8s  %8s  %5s\n", static_cast<int>(w_recipe), "recipe",
                  static_cast<int>(w_sp), "sparsity", "split", "metric", "mean", "std", "seeds");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %-*s  %-6s  %-8s  %8.4f  %8.4f  %5zu\n", static_cast<int>(w_recipe), r.recipe.c_str(),
                      static_cast<int>(w_sp), r.sparsity.c_str(), r.split.c_str(), r.metric.c_str(), r.mean, r.std, r.seed_count);
        os << buf;
    }
    return os.str();
}

}  // namespace sdb
