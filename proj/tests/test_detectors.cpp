#include <doctest.h>

#include <cmath>
#include <set>

#include "oodkit/detectors.hpp"
#include "oodkit/error.hpp"
#include "oodkit/eval.hpp"
#include "oodkit/synth.hpp"
#include "support.hpp"

using namespace oodkit;
using testing::from_rows;
using testing::span_of;
using testing::vec;

namespace {

ClassifierHead head_of(Matrix w, Vector b) { return ClassifierHead{std::move(w), std::move(b)}; }

ClassifierHead hand_head() { return head_of(from_rows({{1, -1}, {2, 0.5}}), vec({0, 0})); }

Matrix two_class_points(std::vector<int>& labels) {
    labels = {0, 0, 0, 0, 1, 1, 1, 1};
    return from_rows({{1, 1}, {1, -1}, {-1, 1}, {-1, -1}, {5, 1}, {5, -1}, {3, 1}, {3, -1}});
}

Ridge no_ridge() {
    Ridge r;
    r.absolute = 0.0;
    return r;
}

SynthSpec small_bundle_spec() {
    SynthSpec s;
    s.seed = 12;
    s.dim = 8;
    s.classes = 3;
    s.per_class = 100;
    s.test_per_class = 40;
    return s;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("logits") {
    const ClassifierHead id = head_of(Matrix::Identity(2, 2), vec({0, 0}));
    const Vector z = vec({1, 2});
    CHECK(logits(id, span_of(z)) == vec({1, 2}));
    const ClassifierHead bias = head_of(Matrix::Identity(2, 2), vec({1, -1}));
    const Vector zero = vec({0, 0});
    CHECK(logits(bias, span_of(zero)) == vec({1, -1}));

    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const auto d = static_cast<Eigen::Index>(1 + rng.below(12));
        const auto c = static_cast<Eigen::Index>(1 + rng.below(6));
        const ClassifierHead h = head_of(testing::random_matrix(rng, d, c), testing::random_matrix(rng, c, 1).col(0));
        const Matrix zs = testing::random_matrix(rng, 5, d);
        const Matrix batch = logits(h, zs);
        for (Eigen::Index r = 0; r < zs.rows(); ++r) {
            const auto expect = testing::naive_logits(h.weights, h.bias, row_span(zs, r));
            const Vector single = logits(h, row_span(zs, r));
            for (Eigen::Index j = 0; j < c; ++j) {
                CHECK(std::abs(single[j] - expect[static_cast<std::size_t>(j)]) <= 1e-6);
                CHECK(std::abs(batch(r, j) - expect[static_cast<std::size_t>(j)]) <= 1e-6);
            }
        }
    }
    CHECK_THROWS_AS(logits(id, span_of(vec({1, 2, 3}))), ArgumentError);
}

TEST_CASE("msp_score") {
    CHECK(msp_score(span_of(vec({0, 0}))) == doctest::Approx(0.5));
    CHECK(msp_score(span_of(vec({std::log(2.0), 0}))) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(std::abs(msp_score(span_of(vec({1000, 0}))) - 1.0) <= 1e-12);
    CHECK_THROWS_AS(msp_score(span_of(vec({1}))), ArgumentError);
    CHECK_THROWS_AS(msp_score(span_of(vec({1, NAN}))), NumericError);
}

TEST_CASE("energy_score") {
    CHECK(energy_score(span_of(Vector::Zero(10))) == doctest::Approx(std::log(10.0)));
    CHECK(energy_score(span_of(vec({10, 0, 0}))) == doctest::Approx(10.000091).epsilon(1e-7));
    CHECK(energy_score(span_of(vec({1000, 999}))) == doctest::Approx(1000 + std::log1p(std::exp(-1.0))));
    CHECK(energy_score(span_of(vec({1, 2})), EnergyForm::printed) ==
          doctest::Approx(std::exp(-1.0) + std::exp(-2.0)));
    CHECK_THROWS_AS(energy_score(span_of(vec({INFINITY, 0}))), NumericError);
}

TEST_CASE("shift identities for energy and msp") {
    Rng rng(32);
    for (int trial = 0; trial < 200; ++trial) {
        const auto c = static_cast<Eigen::Index>(2 + rng.below(9));
        const Vector l = testing::random_matrix(rng, c, 1, 5.0).col(0);
        const double kappa = static_cast<double>(rng.below(64)) - 32.0;
        const Vector shifted = (l.array() + kappa).matrix();
        CHECK(std::abs(energy_score(span_of(shifted)) - (energy_score(span_of(l)) + kappa)) <= 1e-12);
        CHECK(std::abs(msp_score(span_of(shifted)) - msp_score(span_of(l))) <= 1e-12);
    }
}

TEST_CASE("percent_count") {
    CHECK(percent_count(90, 512) == 460);
    CHECK(percent_count(90, 100) == 90);
    CHECK(percent_count(29, 100) == 29);
    CHECK(percent_count(0, 7) == 0);
    CHECK(percent_count(50, 3) == 1);
}

TEST_CASE("ash_prune") {
    CHECK(ash_prune(span_of(vec({1, 2, 3, 4})), 50) == vec({0, 0, 3, 4}));
    CHECK(ash_prune(span_of(vec({4, 3, 2, 1})), 50) == vec({4, 3, 0, 0}));
    CHECK(ash_prune(span_of(vec({7, 7, 7, 7})), 50) == vec({0, 0, 7, 7}));
    CHECK(ash_prune(span_of(vec({1, 2, 3})), 0) == vec({1, 2, 3}));

    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        const auto d = static_cast<Eigen::Index>(1 + rng.below(30));
        const Vector z = testing::random_matrix(rng, d, 1).col(0);
        const double pct = static_cast<double>(rng.below(100));
        const Vector out = ash_prune(span_of(z), pct);
        std::size_t zeroed = 0;
        std::multiset<double> kept_out;
        std::multiset<double> all(z.data(), z.data() + d);
        for (Eigen::Index i = 0; i < d; ++i) {
            if (out[i] == 0.0 && z[i] != 0.0) ++zeroed;
            else {
                CHECK(out[i] == z[i]);
                kept_out.insert(out[i]);
            }
        }
        CHECK(zeroed == percent_count(pct, static_cast<std::size_t>(d)));
        std::vector<double> sorted(all.begin(), all.end());
        std::multiset<double> expected_kept(sorted.begin() + static_cast<std::ptrdiff_t>(zeroed), sorted.end());
        CHECK(kept_out == expected_kept);
    }
}

TEST_CASE("DICE: the column-zeroing hand case") {
    const Matrix z_id = from_rows({{1, 1}});
    const FittedDetector dice = dice_fit(z_id, hand_head(), 50);
    const auto& st = dice.as<DiceState>();
    CHECK(st.masked.weights == from_rows({{1, 0}, {2, 0}}));
    CHECK(st.mask.ones_in_column(1) == 0);
    CHECK(dice_score(dice, span_of(vec({1, 1}))) == doctest::Approx(std::log(std::exp(3.0) + 1.0)));
    CHECK(dice_score(dice, span_of(vec({1, 1}))) == doctest::Approx(3.048587).epsilon(1e-7));

    const FittedDetector col = dicecol_fit(z_id, hand_head(), 50);
    CHECK(col.as<DiceState>().masked.weights == from_rows({{0, 0}, {2, 0.5}}));
    CHECK(dice_score(col, span_of(vec({1, 1}))) == doctest::Approx(std::log(std::exp(2.0) + std::exp(0.5))));
    CHECK(dice_score(col, span_of(vec({1, 1}))) == doctest::Approx(2.201413).epsilon(1e-6));
}

TEST_CASE("DICE: bias is kept, zero mean coordinate zeroes a row of V") {
    ClassifierHead h = hand_head();
    h.bias = vec({0.25, -3});
    const FittedDetector dice = dice_fit(from_rows({{1, 1}}), h, 50);
    CHECK(dice.as<DiceState>().masked.bias == h.bias);

    const Matrix v = contribution_matrix(from_rows({{1, 2}, {3, -4}}), vec({0, 2}));
    CHECK(v == from_rows({{0, 0}, {6, -8}}));
}

TEST_CASE("DICE with p = 0 and ASH with 0% pruning reduce to energy") {
    Rng rng(34);
    const Matrix z_id = testing::random_matrix(rng, 50, 6).cwiseAbs();
    const ClassifierHead h = head_of(testing::random_matrix(rng, 6, 4), testing::random_matrix(rng, 4, 1).col(0));
    const FittedDetector dice = dice_fit(z_id, h, 0);
    const FittedDetector col = dicecol_fit(z_id, h, 0);
    const FittedDetector ash = ash_fit(h, 0);
    const FittedDetector energy = energy_fit(h);
    CHECK(dice.as<DiceState>().mask.ones() == 24);
    const Matrix q = testing::random_matrix(rng, 30, 6);
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
        const double e = energy_score(span_of(logits(h, row_span(q, r))));
        CHECK(std::abs(dice.score(row_span(q, r)) - e) <= 1e-9);
        CHECK(std::abs(col.score(row_span(q, r)) - e) <= 1e-9);
        CHECK(std::abs(ash.score(row_span(q, r)) - e) <= 1e-9);
        CHECK(energy.score(row_span(q, r)) == e);
    }
}

TEST_CASE("mask cardinalities and the DICE-COL column guarantee") {
    Rng rng(35);
    for (int trial = 0; trial < 30; ++trial) {
        const auto d = static_cast<Eigen::Index>(1 + rng.below(40));
        const auto c = static_cast<Eigen::Index>(1 + rng.below(8));
        const Matrix v = testing::random_matrix(rng, d, c);
        for (int p = 0; p <= 90; p += 10) {
            const auto total = static_cast<std::size_t>(d * c);
            const ContributionMask g = global_mask(v, p);
            CHECK(g.ones() == total - static_cast<std::size_t>(p) * total / 100);
            CHECK(g.mode == MaskMode::global);
            const ContributionMask pc = column_mask(v, p);
            for (Eigen::Index j = 0; j < c; ++j) {
                CHECK(pc.ones_in_column(j) == static_cast<std::size_t>(d) - static_cast<std::size_t>(p * d / 100));
                CHECK(pc.ones_in_column(j) >= 1);
            }
        }
    }
    Rng big(36);
    const ContributionMask m = column_mask(testing::random_matrix(big, 512, 3), 90);
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(m.ones_in_column(j) == 52);
}

TEST_CASE("mask tie-break: smaller value first, then row-major index") {
    const Matrix v = from_rows({{1, 1}, {1, 1}});
    const ContributionMask g = global_mask(v, 50);
    CHECK(g.mask(0, 0) == 0);
    CHECK(g.mask(0, 1) == 0);
    CHECK(g.mask(1, 0) == 1);
    CHECK(g.mask(1, 1) == 1);
    const ContributionMask c = column_mask(v, 50);
    CHECK(c.mask(0, 0) == 0);
    CHECK(c.mask(1, 0) == 1);
}

TEST_CASE("MDS hand case") {
    std::vector<int> labels;
    const Matrix z = two_class_points(labels);
    const FittedDetector mds = mds_fit(z, labels, 2, no_ridge());
    CHECK(mds_score(mds, span_of(vec({2, 0}))) == doctest::Approx(-4));
    CHECK(mds_score(mds, span_of(vec({0, 0}))) == doctest::Approx(0).epsilon(1e-12));
    CHECK(mds_score(mds, span_of(vec({4, 0}))) == doctest::Approx(0).epsilon(1e-12));
    CHECK_THROWS_AS(rmds_score(mds, span_of(vec({0, 0}))), ArgumentError);
}

TEST_CASE("MDS: far point scores below every training point") {
    const EmbeddingBundle b = synthesize(small_bundle_spec());
    const FittedDetector mds = fit_detector(parse_detector_spec("mds"), b);
    const Vector train = mds.score_batch(b.id_train.features);
    const Vector far = Vector::Constant(8, 100.0);
    CHECK(mds.score(span_of(far)) < train.minCoeff());
}

TEST_CASE("RMDS hand case and single-class reduction") {
    std::vector<int> labels;
    const Matrix z = two_class_points(labels);
    const FittedDetector rmds = rmds_fit(z, labels, 2, no_ridge());
    CHECK(rmds.as<RmdsState>().background.mean == vec({2, 0}));
    CHECK(rmds_score(rmds, span_of(vec({2, 0}))) == doctest::Approx(-4));

    Rng rng(37);
    const Matrix one = testing::random_matrix(rng, 40, 5);
    const std::vector<int> zeros(40, 0);
    const FittedDetector single = rmds_fit(one, zeros, 1);
    const Matrix q = testing::random_matrix(rng, 25, 5, 3.0);
    const Vector s = single.score_batch(q);
    CHECK(s.cwiseAbs().maxCoeff() <= 1e-9);
    const Vector s_id = single.score_batch(one);
    CHECK(std::abs(auroc(span_of(s_id), span_of(s)) - 0.5) <= 1e-9);
}

TEST_CASE("RMDS: joint translation leaves scores unchanged") {
    Rng rng(38);
    const Matrix z = testing::random_matrix(rng, 60, 4);
    std::vector<int> labels(60);
    for (std::size_t i = 0; i < 60; ++i) labels[i] = static_cast<int>(i % 3);
    const Vector t = vec({10, -3, 7, 0.5});
    const Matrix moved = z.rowwise() + t.transpose();
    const FittedDetector a = rmds_fit(z, labels, 3, no_ridge());
    const FittedDetector b = rmds_fit(moved, labels, 3, no_ridge());
    const Matrix q = testing::random_matrix(rng, 20, 4, 2.0);
    const Matrix q_moved = q.rowwise() + t.transpose();
    const Vector sa = a.score_batch(q);
    const Vector sb = b.score_batch(q_moved);
    for (Eigen::Index i = 0; i < sa.size(); ++i) CHECK(std::abs(sa[i] - sb[i]) <= 1e-7 * std::max(1.0, std::abs(sa[i])));
}

TEST_CASE("KNN detector") {
    const Matrix bank = from_rows({{0, 0}, {1, 0}, {2, 0}});
    KnnConfig cfg;
    cfg.normalize = false;
    cfg.k = 2;
    const FittedDetector knn = knn_fit(bank, cfg);
    CHECK(knn_score(knn, span_of(vec({3, 0}))) == -2.0);
    cfg.k = 1;
    CHECK(knn_score(knn_fit(bank, cfg), span_of(vec({1, 0}))) == 0.0);

    Rng rng(39);
    const Matrix z = testing::random_matrix(rng, 120, 6);
    KnnConfig norm;
    norm.k = 5;
    const FittedDetector nk = knn_fit(z, norm);
    const Matrix q = testing::random_matrix(rng, 40, 6);
    const Matrix qn = l2_normalize_rows(q);
    const Matrix bn = l2_normalize_rows(z);
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
        CHECK(std::abs(knn_score(nk, row_span(q, r)) + testing::sorted_kth_distance(bn, row_span(qn, r), 5)) <= 1e-6);
    }

    KnnConfig too_big;
    too_big.k = 4;
    too_big.normalize = false;
    CHECK_THROWS_AS(knn_fit(bank, too_big), ArgumentError);
    KnnConfig dflt;
    dflt.normalize = false;
    CHECK(knn_fit(z, dflt).as<KnnState>().k == default_knn_k(120));
}

TEST_CASE("with_pca: full rank keeps MDS and KNN scores") {
    const EmbeddingBundle b = synthesize(small_bundle_spec());
    const auto& labels = *b.id_train.labels;
    DetectorSpec mds = parse_detector_spec("mds");
    const FittedDetector plain = fit_detector(mds, b);
    const FittedDetector reduced = with_pca(mds, 8, b.id_train.features, labels, 3);
    REQUIRE(reduced.pca());
    CHECK(reduced.pca()->k() == 8);
    const Vector a = plain.score_batch(b.id_test.features);
    const Vector r = reduced.score_batch(b.id_test.features);
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - r[i]) <= 1e-3 * std::max(1.0, std::abs(a[i])));

    DetectorSpec knn = parse_detector_spec("knn");
    knn.normalize = false;
    knn.k = 3;
    const Vector ka = fit_detector(knn, b).score_batch(b.ood[0].features);
    const Vector kr = with_pca(knn, 8, b.id_train.features, labels, 3).score_batch(b.ood[0].features);
    CHECK((ka - kr).cwiseAbs().maxCoeff() <= 1e-4);

    CHECK_THROWS_AS(with_pca(parse_detector_spec("msp"), 2, b.id_train.features, labels, 3), ArgumentError);
}

TEST_CASE("default PCA components are capped by the data") {
    const EmbeddingBundle b = synthesize(small_bundle_spec());
    const FittedDetector d = fit_detector(parse_detector_spec("mds-pca"), b);
    REQUIRE(d.pca());
    CHECK(d.pca()->k() == 8);
    CHECK(d.input_dim() == 8);
}

TEST_CASE("every detector keeps >= 95% of its own training points above the 5th percentile") {
    const EmbeddingBundle b = synthesize(small_bundle_spec());
    for (const char* name : {"msp", "energy", "ash", "dice", "dicecol", "mds", "rmds", "knn", "mds-pca", "knn-pca"}) {
        CAPTURE(name);
        const FittedDetector det = fit_detector(parse_detector_spec(name), b);
        const Vector train = det.score_batch(b.id_train.features);
        const double lambda = threshold_at_tpr(span_of(train), 0.95);
        std::size_t above = 0;
        for (Eigen::Index i = 0; i < b.id_train.features.rows(); ++i) {
            if (det.score(row_span(b.id_train.features, i)) >= lambda) ++above;
        }
        CHECK(static_cast<double>(above) >= 0.95 * static_cast<double>(train.size()));
        CHECK(train.allFinite());
    }
}

TEST_CASE("score_batch agrees with score and is thread-count independent") {
    const EmbeddingBundle b = synthesize(small_bundle_spec());
    for (const char* name : {"msp", "ash", "dicecol", "rmds", "knn-pca"}) {
        CAPTURE(name);
        const FittedDetector det = fit_detector(parse_detector_spec(name), b);
        const Vector one = det.score_batch(b.id_test.features, 1);
        const Vector many = det.score_batch(b.id_test.features, 4);
        CHECK(one == many);
        for (Eigen::Index i = 0; i < 10; ++i) {
            CHECK(std::abs(det.score(row_span(b.id_test.features, i)) - one[i]) <= 1e-9 * std::max(1.0, std::abs(one[i])));
        }
    }
}

TEST_CASE("parse_detector_spec and DetectorSpec::validate") {
    CHECK(parse_detector_spec("dice-col").method == Method::dicecol);
    CHECK(parse_detector_spec("DICECOL").method == Method::dicecol);
    const DetectorSpec k = parse_detector_spec("knn-pca");
    CHECK(k.method == Method::knn);
    CHECK(k.use_pca);
    CHECK(k.label() == "knn-pca");
    CHECK_THROWS_AS(parse_detector_spec("msp-pca"), ArgumentError);
    CHECK_THROWS_AS(parse_detector_spec("react"), ArgumentError);

    DetectorSpec s = parse_detector_spec("dice");
    s.p = 100;
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    s = parse_detector_spec("knn");
    s.k = 0;
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    s = parse_detector_spec("knn");
    s.subsample_fraction = 0.0;
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    s = parse_detector_spec("mds");
    s.ridge.absolute = -1;
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    CHECK(parse_energy_form("printed") == EnergyForm::printed);
    CHECK_THROWS_AS(parse_energy_form("other"), ArgumentError);
}

TEST_CASE("fit_detector needs labels for MDS") {
    EmbeddingBundle b = synthesize(small_bundle_spec());
    const std::vector<int> none;
    CHECK_THROWS(fit_detector(parse_detector_spec("mds"), b.id_train.features, none, b.head));
    const Vector s = fit_detector(parse_detector_spec("msp"), b).score_batch(b.id_test.features);
    CHECK(to_std(s).size() == b.id_test.features.rows());
}
