#include "oodkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "oodkit/detector_io.hpp"
#include "oodkit/error.hpp"
#include "oodkit/parallel.hpp"

namespace oodkit {

namespace {

void require_finite_scores(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw ArgumentError(std::string(what) + ": scores must be finite");
    }
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw ArgumentError("auroc: both score sets must be nonempty");
    require_finite_scores(id_scores, "auroc");
    require_finite_scores(ood_scores, "auroc");

    struct Entry {
        double value;
        bool is_id;
    };
    std::vector<Entry> all;
    all.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) all.push_back({s, true});
    for (double s : ood_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });

    // Sum of (1-based) mid-ranks over the ID entries. Ranks are half-integers,
    // so the sum is exact in double for any realistic sample size.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        std::size_t ids = 0;
        while (j < all.size() && all[j].value == all[i].value) {
            ids += all[j].is_id;
            ++j;
        }
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        rank_sum += mid_rank * static_cast<double>(ids);
        i = j;
    }
    const double n_id = static_cast<double>(id_scores.size());
    const double pairs = n_id * static_cast<double>(ood_scores.size());
    const double u = rank_sum - n_id * (n_id + 1.0) / 2.0;
    // Dividing the smaller of U and pairs - U and complementing the other case
    // keeps auroc(a, b) + auroc(b, a) exactly 1.
    if (2.0 * u <= pairs) return u / pairs;
    return 1.0 - (pairs - u) / pairs;
}

double threshold_at_tpr(std::span<const double> id_train_scores, double tpr) {
    if (!(tpr > 0.0 && tpr <= 1.0)) throw ArgumentError("threshold_at_tpr: tpr must lie in (0, 1]");
    if (id_train_scores.empty()) throw ArgumentError("threshold_at_tpr: no scores");
    const std::size_t n = id_train_scores.size();
    // The slack keeps (1 - 0.95) * 100 from rounding up to rank 6.
    const double exact = (1.0 - tpr) * static_cast<double>(n);
    auto rank = static_cast<std::size_t>(std::max(0.0, std::ceil(exact - 1e-9)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::vector<double> sorted(id_train_scores.begin(), id_train_scores.end());
    auto it = sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1);
    std::nth_element(sorted.begin(), it, sorted.end());
    return *it;
}

double fpr_at_threshold(std::span<const double> ood_scores, double threshold) {
    if (ood_scores.empty()) throw ArgumentError("fpr_at_threshold: no scores");
    const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s >= threshold; });
    return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

Stat summarize(std::span<const double> values) {
    Stat s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

BenchmarkError::BenchmarkError(std::string bundle, std::string detector, const std::string& cause)
    : Error("bundle '" + bundle + "', detector '" + detector + "': " + cause),
      bundle_(std::move(bundle)),
      detector_(std::move(detector)) {}

namespace {

struct CellResult {
    double threshold = 0.0;
    std::vector<double> auroc;
    std::vector<double> fpr;
};

std::span<const double> as_span_of(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

std::string bundle_name(const EmbeddingBundle& b, std::size_t index) {
    return b.source.empty() ? "bundle#" + std::to_string(index) : b.source.string();
}

}  // namespace

EvalReport run_benchmark(std::span<const EmbeddingBundle> bundles, std::span<const DetectorSpec> specs,
                         const BenchmarkConfig& config) {
    if (bundles.empty()) throw ArgumentError("run_benchmark: no bundles");
    if (!(config.tpr > 0.0 && config.tpr <= 1.0)) throw ArgumentError("run_benchmark: tpr must lie in (0, 1]");
    for (const auto& spec : specs) spec.validate();
    const auto& reference = bundles.front().ood;
    for (std::size_t b = 1; b < bundles.size(); ++b) {
        const auto& other = bundles[b].ood;
        bool same = other.size() == reference.size();
        for (std::size_t j = 0; same && j < other.size(); ++j) {
            same = other[j].name == reference[j].name && other[j].group == reference[j].group;
        }
        if (!same) {
            throw ArgumentError("run_benchmark: " + bundle_name(bundles[b], b) +
                                " lists different OOD datasets than the first bundle");
        }
    }

    const std::size_t n_bundles = bundles.size();
    const std::size_t n_cells = n_bundles * specs.size();
    const std::size_t threads = config.threads ? config.threads : default_thread_count();
    const std::size_t inner_threads = n_cells >= threads ? 1 : threads;
    std::vector<CellResult> cells(n_cells);

    parallel_for(
        n_cells,
        [&](std::size_t cell) {
            const std::size_t b = cell / specs.size();
            const DetectorSpec& spec = specs[cell % specs.size()];
            const EmbeddingBundle& bundle = bundles[b];
            try {
                const FittedDetector det = fit_detector(spec, bundle);
                const Vector train = det.score_batch(bundle.id_train.features, inner_threads);
                const Vector test = det.score_batch(bundle.id_test.features, inner_threads);
                CellResult r;
                r.threshold = threshold_at_tpr(as_span_of(train), config.tpr);
                for (const auto& o : bundle.ood) {
                    const Vector s = det.score_batch(o.features, inner_threads);
                    r.auroc.push_back(auroc(as_span_of(test), as_span_of(s)));
                    r.fpr.push_back(fpr_at_threshold(as_span_of(s), r.threshold));
                }
                cells[cell] = std::move(r);
            } catch (const std::exception& e) {
                throw BenchmarkError(bundle_name(bundle, b), spec.label(), e.what());
            }
        },
        threads);

    EvalReport report;
    report.tpr = config.tpr;
    for (std::size_t b = 0; b < n_bundles; ++b) report.bundles.push_back(bundle_name(bundles[b], b));

    for (std::size_t s = 0; s < specs.size(); ++s) {
        DetectorResult dr;
        dr.detector = specs[s].label();
        dr.hyperparameters = spec_to_json(specs[s]);
        std::vector<double> near_means, far_means;
        for (std::size_t b = 0; b < n_bundles; ++b) {
            const CellResult& c = cells[b * specs.size() + s];
            dr.thresholds.push_back(c.threshold);
            double near_sum = 0.0, far_sum = 0.0;
            std::size_t near_n = 0, far_n = 0;
            for (std::size_t j = 0; j < reference.size(); ++j) {
                if (reference[j].group == OodGroup::near) {
                    near_sum += c.auroc[j];
                    ++near_n;
                } else {
                    far_sum += c.auroc[j];
                    ++far_n;
                }
            }
            if (near_n) near_means.push_back(near_sum / static_cast<double>(near_n));
            if (far_n) far_means.push_back(far_sum / static_cast<double>(far_n));
        }
        for (std::size_t j = 0; j < reference.size(); ++j) {
            DatasetResult d;
            d.name = reference[j].name;
            d.group = reference[j].group;
            for (std::size_t b = 0; b < n_bundles; ++b) {
                const CellResult& c = cells[b * specs.size() + s];
                d.auroc.push_back(c.auroc[j]);
                d.fpr.push_back(c.fpr[j]);
            }
            d.auroc_stat = summarize(d.auroc);
            d.fpr_stat = summarize(d.fpr);
            dr.datasets.push_back(std::move(d));
        }
        if (!near_means.empty()) dr.near = summarize(near_means);
        if (!far_means.empty()) dr.far = summarize(far_means);
        report.detectors.push_back(std::move(dr));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Rendering

ReportFormat parse_report_format(std::string_view text) {
    if (text == "csv") return ReportFormat::csv;
    if (text == "markdown" || text == "md") return ReportFormat::markdown;
    if (text == "json") return ReportFormat::json;
    throw ArgumentError("unknown report format '" + std::string(text) + "'");
}

namespace {

std::string fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string md_cell(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += c;
    }
    return out;
}

std::string stat_cell(const std::optional<Stat>& s) {
    return s ? fixed(s->mean) + " ± " + fixed(s->std) : "-";
}

std::string render_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "detector,dataset,group,auroc_mean,auroc_std,fpr_mean\r\n";
    for (const auto& d : report.detectors) {
        for (const auto& ds : d.datasets) {
            os << csv_field(d.detector) << ',' << csv_field(ds.name) << ',' << to_string(ds.group) << ','
               << fixed(ds.auroc_stat.mean) << ',' << fixed(ds.auroc_stat.std) << ',' << fixed(ds.fpr_stat.mean)
               << "\r\n";
        }
    }
    return os.str();
}

std::string render_markdown(const EvalReport& report) {
    std::ostringstream os;
    const bool any_rows =
        std::any_of(report.detectors.begin(), report.detectors.end(), [](const auto& d) { return !d.datasets.empty(); });
    os << "| Detector | NearOOD | FarOOD |\n|---|---|---|\n";
    if (any_rows) {
        for (const auto& d : report.detectors) {
            os << "| " << md_cell(d.detector) << " | " << stat_cell(d.near) << " | " << stat_cell(d.far) << " |\n";
        }
    }
    os << "\n| Detector | Dataset | Group | AUROC mean | AUROC std | FPR mean |\n|---|---|---|---|---|---|\n";
    for (const auto& d : report.detectors) {
        for (const auto& ds : d.datasets) {
            os << "| " << md_cell(d.detector) << " | " << md_cell(ds.name) << " | " << to_string(ds.group) << " | "
               << fixed(ds.auroc_stat.mean) << " | " << fixed(ds.auroc_stat.std) << " | " << fixed(ds.fpr_stat.mean)
               << " |\n";
        }
    }
    return os.str();
}

using OJson = nlohmann::ordered_json;

OJson stat_json(const Stat& s) { return OJson{{"mean", s.mean}, {"std", s.std}}; }

Stat stat_from(const OJson& j) { return Stat{j.at("mean").get<double>(), j.at("std").get<double>()}; }

}  // namespace

OJson report_to_json(const EvalReport& report) {
    OJson j;
    j["version"] = report.version;
    j["tpr"] = report.tpr;
    j["bundles"] = report.bundles;
    j["detectors"] = OJson::array();
    for (const auto& d : report.detectors) {
        OJson dj;
        dj["detector"] = d.detector;
        dj["hyperparameters"] = d.hyperparameters;
        dj["thresholds"] = d.thresholds;
        dj["near"] = d.near ? stat_json(*d.near) : OJson(nullptr);
        dj["far"] = d.far ? stat_json(*d.far) : OJson(nullptr);
        dj["datasets"] = OJson::array();
        for (const auto& ds : d.datasets) {
            dj["datasets"].push_back({{"name", ds.name},
                                      {"group", std::string(to_string(ds.group))},
                                      {"auroc", ds.auroc},
                                      {"fpr", ds.fpr},
                                      {"auroc_stat", stat_json(ds.auroc_stat)},
                                      {"fpr_stat", stat_json(ds.fpr_stat)}});
        }
        j["detectors"].push_back(std::move(dj));
    }
    return j;
}

EvalReport report_from_json(const OJson& j) {
    try {
        EvalReport r;
        r.version = j.at("version").get<int>();
        if (r.version != kReportVersion) throw SchemaError("report: unsupported version");
        r.tpr = j.at("tpr").get<double>();
        r.bundles = j.at("bundles").get<std::vector<std::string>>();
        for (const auto& dj : j.at("detectors")) {
            DetectorResult d;
            d.detector = dj.at("detector").get<std::string>();
            d.hyperparameters = dj.at("hyperparameters");
            d.thresholds = dj.at("thresholds").get<std::vector<double>>();
            if (!dj.at("near").is_null()) d.near = stat_from(dj.at("near"));
            if (!dj.at("far").is_null()) d.far = stat_from(dj.at("far"));
            for (const auto& dsj : dj.at("datasets")) {
                DatasetResult ds;
                ds.name = dsj.at("name").get<std::string>();
                ds.group = parse_group(dsj.at("group").get<std::string>());
                ds.auroc = dsj.at("auroc").get<std::vector<double>>();
                ds.fpr = dsj.at("fpr").get<std::vector<double>>();
                ds.auroc_stat = stat_from(dsj.at("auroc_stat"));
                ds.fpr_stat = stat_from(dsj.at("fpr_stat"));
                d.datasets.push_back(std::move(ds));
            }
            r.detectors.push_back(std::move(d));
        }
        return r;
    } catch (const OJson::exception& e) {
        throw SchemaError(std::string("report: ") + e.what());
    }
}

std::string render_report(const EvalReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::csv: return render_csv(report);
        case ReportFormat::markdown: return render_markdown(report);
        case ReportFormat::json: return report_to_json(report).dump(2) + "\n";
    }
    return {};
}

}  // namespace oodkit
