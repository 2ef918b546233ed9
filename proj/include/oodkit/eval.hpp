#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "oodkit/array_store.hpp"
#include "oodkit/detectors.hpp"
#include "oodkit/error.hpp"

namespace oodkit {

/// Mann-Whitney AUROC: P(id > ood) + 0.5 P(id == ood), via mid-rank sums.
/// auroc(a, b) + auroc(b, a) == 1 holds exactly.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// The ceil((1 - tpr) N)-th smallest score (1-indexed, at least the first),
/// so at least a `tpr` fraction of the scores are >= the returned value.
double threshold_at_tpr(std::span<const double> id_train_scores, double tpr = 0.95);

/// Fraction of OOD scores accepted as ID, i.e. >= threshold.
double fpr_at_threshold(std::span<const double> ood_scores, double threshold);

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // sample std (n - 1); 0 for a single value

    bool operator==(const Stat&) const = default;
};

Stat summarize(std::span<const double> values);

struct DatasetResult {
    std::string name;
    OodGroup group = OodGroup::near;
    std::vector<double> auroc;  // one per bundle
    std::vector<double> fpr;
    Stat auroc_stat;
    Stat fpr_stat;

    bool operator==(const DatasetResult&) const = default;
};

struct DetectorResult {
    std::string detector;
    nlohmann::ordered_json hyperparameters;
    std::vector<double> thresholds;  // one per bundle, from id_train scores
    std::vector<DatasetResult> datasets;
    std::optional<Stat> near;  // absent when the group has no datasets
    std::optional<Stat> far;

    bool operator==(const DetectorResult&) const = default;
};

inline constexpr int kReportVersion = 1;

struct EvalReport {
    int version = kReportVersion;
    double tpr = 0.95;
    std::vector<std::string> bundles;
    std::vector<DetectorResult> detectors;

    bool operator==(const EvalReport&) const = default;
};

struct BenchmarkConfig {
    double tpr = 0.95;
    std::size_t threads = 0;  // 0 = default_thread_count()
};

/// Raised by run_benchmark; the message names the bundle and detector.
class BenchmarkError : public Error {
public:
    BenchmarkError(std::string bundle, std::string detector, const std::string& cause);

    const std::string& bundle() const { return bundle_; }
    const std::string& detector() const { return detector_; }

private:
    std::string bundle_;
    std::string detector_;
};

/// Fits every spec on each bundle's id_train split, scores id_test and each
/// OOD set, and aggregates AUROC / FPR across bundles (mean and sample std).
/// All bundles must list the same OOD datasets in the same order.
EvalReport run_benchmark(std::span<const EmbeddingBundle> bundles, std::span<const DetectorSpec> specs,
                         const BenchmarkConfig& config = {});

enum class ReportFormat { csv, markdown, json };

ReportFormat parse_report_format(std::string_view text);
std::string render_report(const EvalReport& report, ReportFormat format);

nlohmann::ordered_json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::ordered_json& j);

}  // namespace oodkit
