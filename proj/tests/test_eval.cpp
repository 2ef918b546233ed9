#include <doctest.h>

#include <cmath>
#include <limits>

#include "oodkit/error.hpp"
#include "oodkit/eval.hpp"
#include "oodkit/synth.hpp"
#include "support.hpp"

using namespace oodkit;
using testing::span_of;

namespace {

double auroc_of(const std::vector<double>& a, const std::vector<double>& b) { return auroc(span_of(a), span_of(b)); }

SynthSpec bench_spec(std::uint64_t seed) {
    SynthSpec s;
    s.seed = seed;
    s.dim = 8;
    s.classes = 3;
    s.per_class = 150;
    s.test_per_class = 60;
    return s;
}

std::size_t count_lines(const std::string& s, const std::string& eol) {
    std::size_t n = 0;
    for (std::size_t pos = s.find(eol); pos != std::string::npos; pos = s.find(eol, pos + eol.size())) ++n;
    return n;
}

EvalReport small_report() {
    std::vector<EmbeddingBundle> bundles{synthesize(bench_spec(1))};
    const std::vector<DetectorSpec> specs{parse_detector_spec("msp"), parse_detector_spec("mds")};
    return run_benchmark(bundles, specs);
}

}  // namespace

TEST_CASE("auroc: hand cases") {
    CHECK(auroc_of({1, 2, 3}, {0, 0.5}) == 1.0);
    CHECK(auroc_of({1}, {1}) == 0.5);
    CHECK(auroc_of({1, 3}, {2}) == 0.5);
    CHECK(auroc_of({0}, {1}) == 0.0);
    CHECK_THROWS_AS(auroc_of({}, {1}), ArgumentError);
    CHECK_THROWS_AS(auroc_of({1}, {}), ArgumentError);
    CHECK_THROWS_AS(auroc_of({NAN}, {1}), ArgumentError);
}

TEST_CASE("auroc: oracle agreement, exact complement, monotone invariance") {
    Rng rng(41);
    for (int trial = 0; trial < 300; ++trial) {
        const auto a = testing::tied_scores(rng, 1 + rng.below(60), 1 + rng.below(12));
        const auto b = testing::tied_scores(rng, 1 + rng.below(60), 1 + rng.below(12));
        const double v = auroc_of(a, b);
        CHECK(std::abs(v - oracle_auroc(span_of(a), span_of(b))) <= 1e-12);
        CHECK(v + auroc_of(b, a) == 1.0);
        std::vector<double> ta, tb;
        for (double x : a) ta.push_back(std::exp(3.0 * x) - 7.0);
        for (double x : b) tb.push_back(std::exp(3.0 * x) - 7.0);
        CHECK(auroc_of(ta, tb) == v);
    }
}

TEST_CASE("threshold_at_tpr") {
    std::vector<double> s;
    for (int i = 1; i <= 100; ++i) s.push_back(i);
    const double lambda = threshold_at_tpr(span_of(s), 0.95);
    CHECK(lambda == 5.0);
    CHECK(std::count_if(s.begin(), s.end(), [&](double x) { return x >= lambda; }) == 96);

    const std::vector<double> flat(20, 2.5);
    CHECK(threshold_at_tpr(span_of(flat), 0.95) == 2.5);
    CHECK(fpr_at_threshold(span_of(flat), 2.5) == 1.0);
    CHECK(threshold_at_tpr(span_of(s), 1.0) == 1.0);
    CHECK(threshold_at_tpr(span_of(std::vector<double>{4.0}), 0.95) == 4.0);

    CHECK_THROWS_AS(threshold_at_tpr(span_of(s), 0.0), ArgumentError);
    CHECK_THROWS_AS(threshold_at_tpr(span_of(s), 1.5), ArgumentError);
    CHECK_THROWS_AS(threshold_at_tpr(span_of(std::vector<double>{}), 0.95), ArgumentError);
}

TEST_CASE("threshold_at_tpr: coverage guarantee on tied vectors") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const auto s = testing::tied_scores(rng, 1 + rng.below(300), 1 + rng.below(20));
        for (double tpr : {0.5, 0.9, 0.95, 0.99}) {
            const double lambda = threshold_at_tpr(span_of(s), tpr);
            const auto hits = std::count_if(s.begin(), s.end(), [&](double x) { return x >= lambda; });
            CHECK(static_cast<double>(hits) >= tpr * static_cast<double>(s.size()));
        }
    }
}

TEST_CASE("fpr_at_threshold") {
    CHECK(fpr_at_threshold(span_of(std::vector<double>{1, 2}), 5) == 0.0);
    CHECK(fpr_at_threshold(span_of(std::vector<double>{4, 5, 6}), 5) == doctest::Approx(2.0 / 3.0));
    CHECK(fpr_at_threshold(span_of(std::vector<double>{4, 5, 6}), -std::numeric_limits<double>::infinity()) == 1.0);
}

TEST_CASE("summarize") {
    CHECK(summarize(span_of(std::vector<double>{0.7})) == Stat{0.7, 0.0});
    const Stat s = summarize(span_of(std::vector<double>{1, 2, 3}));
    CHECK(s.mean == doctest::Approx(2.0));
    CHECK(s.std == doctest::Approx(1.0));
}

TEST_CASE("run_benchmark: wide-margin bundle gives MSP >= 0.99 on near and far") {
    SynthSpec spec = bench_spec(2);
    for (auto& r : spec.ood) r.shift = 20.0;
    std::vector<EmbeddingBundle> bundles{synthesize(spec)};
    const std::vector<DetectorSpec> specs{parse_detector_spec("msp")};
    const EvalReport report = run_benchmark(bundles, specs);
    REQUIRE(report.detectors.size() == 1);
    REQUIRE(report.detectors[0].near);
    REQUIRE(report.detectors[0].far);
    CHECK(report.detectors[0].near->mean >= 0.99);
    CHECK(report.detectors[0].far->mean >= 0.99);
}

TEST_CASE("run_benchmark: identical bundles have zero spread") {
    const EmbeddingBundle b = synthesize(bench_spec(3));
    std::vector<EmbeddingBundle> bundles{b, b, b};
    const std::vector<DetectorSpec> specs{parse_detector_spec("energy"), parse_detector_spec("knn")};
    const EvalReport report = run_benchmark(bundles, specs);
    CHECK(report.bundles.size() == 3);
    for (const auto& d : report.detectors) {
        CHECK(d.near->std == 0.0);
        CHECK(d.far->std == 0.0);
        for (const auto& ds : d.datasets) {
            CHECK(ds.auroc.size() == 3);
            CHECK(ds.auroc_stat.std == 0.0);
            CHECK(ds.fpr_stat.std == 0.0);
        }
    }
}

TEST_CASE("run_benchmark: aggregation across different bundles") {
    std::vector<EmbeddingBundle> bundles{synthesize(bench_spec(4)), synthesize(bench_spec(5)),
                                         synthesize(bench_spec(6))};
    const std::vector<DetectorSpec> specs{parse_detector_spec("msp")};
    const EvalReport report = run_benchmark(bundles, specs);
    const DetectorResult& d = report.detectors[0];
    REQUIRE(d.datasets.size() == 2);
    const DatasetResult& near = d.datasets[0];
    CHECK(near.group == OodGroup::near);
    const double mean = (near.auroc[0] + near.auroc[1] + near.auroc[2]) / 3.0;
    CHECK(near.auroc_stat.mean == doctest::Approx(mean));
    double ss = 0.0;
    for (double a : near.auroc) ss += (a - mean) * (a - mean);
    CHECK(near.auroc_stat.std == doctest::Approx(std::sqrt(ss / 2.0)));
    CHECK(near.auroc_stat.std > 0.0);
    CHECK(d.near->mean == doctest::Approx(near.auroc_stat.mean));
    CHECK(d.thresholds.size() == 3);
    for (double a : near.auroc) {
        CHECK(a > 0.5);
        CHECK(a < 1.0);
    }
}

TEST_CASE("run_benchmark: DICE-COL beats DICE on the adversarial head") {
    SynthSpec spec;
    spec.seed = 9;
    spec.per_class = 200;
    spec.test_per_class = 100;
    std::vector<EmbeddingBundle> bundles{synthesize_adversarial(spec).bundle};
    const std::vector<DetectorSpec> specs{parse_detector_spec("dice"), parse_detector_spec("dicecol")};
    const EvalReport report = run_benchmark(bundles, specs);
    CHECK(report.detectors[1].near->mean > report.detectors[0].near->mean);
}

TEST_CASE("run_benchmark: deterministic and thread-count independent") {
    std::vector<EmbeddingBundle> bundles{synthesize(bench_spec(7)), synthesize(bench_spec(8))};
    std::vector<DetectorSpec> specs{parse_detector_spec("rmds"), parse_detector_spec("knn-pca"),
                                    parse_detector_spec("ash")};
    specs[1].subsample_fraction = 0.5;
    BenchmarkConfig one;
    one.threads = 1;
    BenchmarkConfig many;
    many.threads = 6;
    CHECK(run_benchmark(bundles, specs, one) == run_benchmark(bundles, specs, many));
}

TEST_CASE("run_benchmark: errors") {
    EmbeddingBundle b = synthesize(bench_spec(10));
    std::vector<EmbeddingBundle> bundles{b};
    DetectorSpec knn = parse_detector_spec("knn");
    knn.k = 100000;
    const std::vector<DetectorSpec> bad{knn};
    try {
        run_benchmark(bundles, bad);
        FAIL("expected BenchmarkError");
    } catch (const BenchmarkError& e) {
        CHECK(e.detector() == "knn");
        CHECK(e.bundle() == "bundle#0");
        CHECK(std::string(e.what()).find("knn") != std::string::npos);
    }

    EmbeddingBundle other = b;
    other.ood.pop_back();
    std::vector<EmbeddingBundle> mixed{b, other};
    const std::vector<DetectorSpec> msp{parse_detector_spec("msp")};
    CHECK_THROWS_AS(run_benchmark(mixed, msp), ArgumentError);
    CHECK_THROWS_AS(run_benchmark(std::span<const EmbeddingBundle>{}, msp), ArgumentError);
}

TEST_CASE("render_report: csv") {
    const EvalReport r = small_report();
    const std::string csv = render_report(r, ReportFormat::csv);
    CHECK(csv.rfind("detector,dataset,group,auroc_mean,auroc_std,fpr_mean\r\n", 0) == 0);
    CHECK(count_lines(csv, "\r\n") == 1 + 4);

    EvalReport quoted = r;
    quoted.detectors[0].detector = "a,\"b\"";
    const std::string q = render_report(quoted, ReportFormat::csv);
    CHECK(q.find("\"a,\"\"b\"\"\",") != std::string::npos);
}

TEST_CASE("render_report: markdown and csv carry the same numbers") {
    const EvalReport r = small_report();
    const std::string md = render_report(r, ReportFormat::markdown);
    const std::string csv = render_report(r, ReportFormat::csv);
    CHECK(md.find("| Detector | NearOOD | FarOOD |") != std::string::npos);
    for (const auto& d : r.detectors) {
        for (const auto& ds : d.datasets) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", ds.auroc_stat.mean);
            CHECK(md.find(buf) != std::string::npos);
            CHECK(csv.find(buf) != std::string::npos);
        }
    }
    CHECK(md != csv);
}

TEST_CASE("render_report: no OOD datasets gives header-only tables") {
    EmbeddingBundle b = synthesize(bench_spec(11));
    b.ood.clear();
    std::vector<EmbeddingBundle> bundles{b};
    const std::vector<DetectorSpec> specs{parse_detector_spec("msp")};
    const EvalReport r = run_benchmark(bundles, specs);
    CHECK_FALSE(r.detectors[0].near);
    CHECK(render_report(r, ReportFormat::csv) == "detector,dataset,group,auroc_mean,auroc_std,fpr_mean\r\n");
    const std::string md = render_report(r, ReportFormat::markdown);
    CHECK(md.find("| msp") == std::string::npos);
    CHECK(md.find("| Detector | Dataset |") != std::string::npos);
}

TEST_CASE("report JSON round trip") {
    const EvalReport r = small_report();
    const std::string text = render_report(r, ReportFormat::json);
    const EvalReport back = report_from_json(nlohmann::ordered_json::parse(text));
    CHECK(back == r);
    CHECK_THROWS_AS(report_from_json(nlohmann::ordered_json::parse("{\"version\": 1}")), SchemaError);
    CHECK(parse_report_format("markdown") == ReportFormat::markdown);
    CHECK_THROWS_AS(parse_report_format("html"), ArgumentError);
}
