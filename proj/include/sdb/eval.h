// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0
//
// Soft-score accuracy (credit = target score of the argmax answer), overall and
// per question type; seed aggregation; OOD gaps; CSV/JSON export.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sdb/mask_set.h"
#include "sdb/model.h"
#include "sdb/synth.h"

namespace sdb {

// Metric names in export order.
inline const std::array<std::string, 4> kMetricNames = {"overall", "yes/no", "number", "other"};

struct MetricsRecord {
    std::string split;
    std::uint64_t seed = 0;
    double overall = 0.0;
    std::array<double, kQuestionTypes> per_type{};        // accuracy per question type
    std::array<std::size_t, kQuestionTypes> type_counts{}; // examples per question type
    std::string audit;  // sparsity audit summary, empty for the full model

    // kMetricNames order.
    std::map<std::string, double> metrics() const;
};

// Throws std::invalid_argument on an empty split.
MetricsRecord evaluate(const ParameterRegistry& registry, const MaskSet* masks, const Dataset& data,
                       std::uint64_t seed = 0, std::size_t batch_size = 256);
// Same rule from precomputed logits, [examples, answers] row-major.
MetricsRecord score_logits(std::span<const double> logits, const Dataset& data, std::uint64_t seed = 0);

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;  // population
};

struct AggregateRecord {
    std::string split;
    std::size_t seeds = 0;
    std::map<std::string, MetricSummary> metrics;
};

// Throws std::invalid_argument for no records or mixed splits.
AggregateRecord aggregate(std::span<const MetricsRecord> records);
MetricSummary mean_std(std::span<const double> values);

// subnetwork - full, per metric. Throws on different splits.
std::map<std::string, double> gap(const MetricsRecord& subnetwork, const MetricsRecord& full);

struct ReportRow {
    std::string recipe;
    std::string sparsity;  // SparsityConfig::label()
    std::string split;
    std::string metric;
    double mean = 0.0;
    double std = 0.0;
    std::size_t seed_count = 0;

    bool operator==(const ReportRow&) const = default;
};

// Rows for every metric of an aggregate.
std::vector<ReportRow> report_rows(const std::string& recipe, const std::string& sparsity, const AggregateRecord& agg);

// Columns: recipe,sparsity_config,split,metric,mean,std,seed_count.
void write_report_csv(std::ostream& out, std::span<const ReportRow> rows);
std::vector<ReportRow> read_report_csv(std::istream& in);

struct ReferenceAnnotation {
    std::string name;
    double value;
};

inline constexpr const char* kReferenceAnnotationLabel = "paper-scale, not reproduced";
// Overall OOD accuracies published for the full-scale base model.
std::vector<ReferenceAnnotation> reference_annotations();

// Accuracy-vs-sparsity curves per recipe, split and metric, plus the labeled
// annotation layer.
std::string curves_json(std::span<const ReportRow> rows);

// Overall sparsity parsed from a label of the form "s=0.50 ...".
double label_sparsity(const std::string& label);

// Plain-text table of the rows.
std::string render_table(std::span<const ReportRow> rows);

}  // namespace sdb
