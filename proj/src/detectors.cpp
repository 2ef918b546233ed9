#include "oodkit/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "oodkit/error.hpp"

namespace oodkit {

std::string_view to_string(Method method) {
    switch (method) {
        case Method::msp: return "msp";
        case Method::energy: return "energy";
        case Method::ash: return "ash";
        case Method::dice: return "dice";
        case Method::dicecol: return "dicecol";
        case Method::mds: return "mds";
        case Method::rmds: return "rmds";
        case Method::knn: return "knn";
    }
    return "unknown";
}

std::string_view to_string(EnergyForm form) { return form == EnergyForm::printed ? "printed" : "log_sum_exp"; }

std::string_view to_string(MaskMode mode) { return mode == MaskMode::global ? "global" : "per_column"; }

EnergyForm parse_energy_form(std::string_view text) {
    if (text == "log_sum_exp" || text == "logsumexp") return EnergyForm::log_sum_exp;
    if (text == "printed") return EnergyForm::printed;
    throw ArgumentError("unknown energy form '" + std::string(text) + "'");
}

bool is_representation_method(Method method) {
    return method == Method::mds || method == Method::rmds || method == Method::knn;
}

std::string DetectorSpec::label() const {
    if (!name.empty()) return name;
    std::string out(to_string(method));
    if (use_pca) {
        out += "-pca";
        if (pca_components) out += std::to_string(*pca_components);
    }
    return out;
}

void DetectorSpec::validate() const {
    if (!(p >= 0.0 && p < 100.0)) throw ArgumentError("p must lie in [0, 100)");
    if (!(prune_percent >= 0.0 && prune_percent < 100.0)) throw ArgumentError("prune_percent must lie in [0, 100)");
    if (k && *k == 0) throw ArgumentError("k must be positive");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
        throw ArgumentError("subsample_fraction must lie in (0, 1]");
    }
    if (use_pca && !is_representation_method(method)) {
        throw ArgumentError("PCA reduction applies only to mds, rmds and knn");
    }
    if (pca_components && *pca_components == 0) throw ArgumentError("pca_components must be positive");
    if (ridge.absolute && !(*ridge.absolute >= 0.0)) throw ArgumentError("epsilon must be non-negative");
    if (!(ridge.relative >= 0.0)) throw ArgumentError("relative epsilon must be non-negative");
}

DetectorSpec parse_detector_spec(std::string_view method_name) {
    DetectorSpec spec;
    std::string name(method_name);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    constexpr std::string_view kPca = "-pca";
    if (name.size() > kPca.size() && name.ends_with(kPca)) {
        spec.use_pca = true;
        name.resize(name.size() - kPca.size());
    }
    if (name == "msp") spec.method = Method::msp;
    else if (name == "energy") spec.method = Method::energy;
    else if (name == "ash") spec.method = Method::ash;
    else if (name == "dice") spec.method = Method::dice;
    else if (name == "dicecol" || name == "dice-col") spec.method = Method::dicecol;
    else if (name == "mds") spec.method = Method::mds;
    else if (name == "rmds") spec.method = Method::rmds;
    else if (name == "knn") spec.method = Method::knn;
    else throw ArgumentError("unknown method '" + std::string(method_name) + "'");
    if (spec.use_pca && !is_representation_method(spec.method)) {
        throw ArgumentError("unknown method '" + std::string(method_name) + "' (PCA applies to mds, rmds, knn)");
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Logit scores

Vector logits(const ClassifierHead& head, std::span<const double> z) {
    if (z.size() != head.feature_dim()) {
        throw ArgumentError("logits: embedding has " + std::to_string(z.size()) + " entries, head expects " +
                            std::to_string(head.feature_dim()));
    }
    const Eigen::Map<const Vector> zv(z.data(), static_cast<Eigen::Index>(z.size()));
    return head.weights.transpose() * zv + head.bias;
}

Matrix logits(const ClassifierHead& head, const Matrix& z) {
    if (static_cast<std::size_t>(z.cols()) != head.feature_dim()) {
        throw ArgumentError("logits: embeddings have " + std::to_string(z.cols()) + " columns, head expects " +
                            std::to_string(head.feature_dim()));
    }
    Matrix out = z * head.weights;
    out.rowwise() += head.bias.transpose();
    return out;
}

namespace {

void require_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite logit");
    }
}

}  // namespace

double msp_score(std::span<const double> logit_vec) {
    if (logit_vec.size() < 2) throw ArgumentError("msp_score: need at least 2 classes");
    require_finite(logit_vec, "msp_score");
    const double top = *std::max_element(logit_vec.begin(), logit_vec.end());
    double denom = 0.0;
    for (double l : logit_vec) denom += std::exp(l - top);
    return 1.0 / denom;
}

double energy_score(std::span<const double> logit_vec, EnergyForm form) {
    if (logit_vec.empty()) throw ArgumentError("energy_score: need at least 1 class");
    require_finite(logit_vec, "energy_score");
    if (form == EnergyForm::printed) {
        double sum = 0.0;
        for (double l : logit_vec) sum += std::exp(-l);
        if (!std::isfinite(sum)) throw NumericError("energy_score: printed form overflowed");
        return sum;
    }
    const double top = *std::max_element(logit_vec.begin(), logit_vec.end());
    double sum = 0.0;
    for (double l : logit_vec) sum += std::exp(l - top);
    return top + std::log(sum);
}

std::size_t percent_count(double percent, std::size_t n) {
    // The small slack absorbs representation error in products such as 0.29 * 100.
    const double exact = percent * static_cast<double>(n) / 100.0;
    return std::min(n, static_cast<std::size_t>(std::floor(exact + 1e-9)));
}

namespace {

// Indices [0, n) ordered by (value, index).
std::vector<std::size_t> ascending_order(std::size_t n, const auto& value_at) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return value_at(a) < value_at(b); });
    return order;
}

}  // namespace

Vector ash_prune(std::span<const double> z, double prune_percent) {
    if (!(prune_percent >= 0.0 && prune_percent < 100.0)) throw ArgumentError("ash_prune: percent outside [0, 100)");
    Vector out = Eigen::Map<const Vector>(z.data(), static_cast<Eigen::Index>(z.size()));
    const std::size_t drop = percent_count(prune_percent, z.size());
    if (drop == 0) return out;
    const auto order = ascending_order(z.size(), [&](std::size_t i) { return z[i]; });
    for (std::size_t i = 0; i < drop; ++i) out[static_cast<Eigen::Index>(order[i])] = 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Masks

std::size_t ContributionMask::ones() const {
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < mask.size(); ++i) n += mask.data()[i];
    return n;
}

std::size_t ContributionMask::ones_in_column(Eigen::Index c) const {
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < mask.rows(); ++r) n += mask(r, c);
    return n;
}

Matrix contribution_matrix(const Matrix& weights, const Vector& mean_feature) {
    if (weights.rows() != mean_feature.size()) throw ArgumentError("contribution_matrix: dimension mismatch");
    return mean_feature.asDiagonal() * weights;
}

ContributionMask global_mask(const Matrix& contributions, double p) {
    if (!(p >= 0.0 && p < 100.0)) throw ArgumentError("global_mask: p outside [0, 100)");
    ContributionMask m;
    m.p = p;
    m.mode = MaskMode::global;
    m.mask.setOnes(contributions.rows(), contributions.cols());
    const auto n = static_cast<std::size_t>(contributions.size());
    const std::size_t drop = percent_count(p, n);
    // Row-major storage makes the flat index the row-major index.
    const double* v = contributions.data();
    const auto order = ascending_order(n, [&](std::size_t i) { return v[i]; });
    for (std::size_t i = 0; i < drop; ++i) m.mask.data()[order[i]] = 0;
    return m;
}

ContributionMask column_mask(const Matrix& contributions, double p) {
    if (!(p >= 0.0 && p < 100.0)) throw ArgumentError("column_mask: p outside [0, 100)");
    ContributionMask m;
    m.p = p;
    m.mode = MaskMode::per_column;
    m.mask.setOnes(contributions.rows(), contributions.cols());
    const auto d = static_cast<std::size_t>(contributions.rows());
    const std::size_t drop = percent_count(p, d);
    for (Eigen::Index c = 0; c < contributions.cols(); ++c) {
        const auto order = ascending_order(d, [&](std::size_t r) { return contributions(static_cast<Eigen::Index>(r), c); });
        for (std::size_t i = 0; i < drop; ++i) m.mask(static_cast<Eigen::Index>(order[i]), c) = 0;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Mahalanobis scoring

MahalanobisScorer::MahalanobisScorer(const Matrix& means, const Matrix& precision) {
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) throw NumericError("precision matrix is not positive definite");
    factor_ = llt.matrixL();
    whitened_means_ = means * factor_;
}

Matrix MahalanobisScorer::distances(const Matrix& z) const {
    if (z.cols() != factor_.rows()) throw ArgumentError("mahalanobis: embedding dimension mismatch");
    const Matrix y = z * factor_;
    Matrix out(y.rows(), whitened_means_.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        for (Eigen::Index c = 0; c < whitened_means_.rows(); ++c) {
            out(i, c) = (y.row(i) - whitened_means_.row(c)).squaredNorm();
        }
    }
    return out;
}

MdsState::MdsState(GaussianByClass g) : gaussians(std::move(g)), scorer(gaussians.means, gaussians.precision) {}

RmdsState::RmdsState(GaussianByClass g, BackgroundGaussian bg)
    : gaussians(std::move(g)),
      background(std::move(bg)),
      class_scorer(gaussians.means, gaussians.precision),
      background_scorer(background.mean.transpose(), background.precision) {}

// ---------------------------------------------------------------------------
// FittedDetector

FittedDetector::FittedDetector(DetectorSpec spec, DetectorState state, std::optional<PcaModel> pca)
    : spec_(std::move(spec)), state_(std::move(state)), pca_(std::move(pca)) {
    spec_.use_pca = pca_.has_value();
    if (pca_) spec_.pca_components = pca_->k();
}

std::size_t FittedDetector::input_dim() const {
    if (pca_) return pca_->input_dim();
    return std::visit(
        [](const auto& s) -> std::size_t {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, DiceState>) return s.masked.feature_dim();
            else if constexpr (std::is_same_v<T, MdsState>) return s.gaussians.means.cols();
            else if constexpr (std::is_same_v<T, RmdsState>) return s.gaussians.means.cols();
            else if constexpr (std::is_same_v<T, KnnState>) return s.index.dim();
            else return s.head.feature_dim();
        },
        state_);
}

double FittedDetector::score(std::span<const double> z) const {
    const Matrix row = Eigen::Map<const Matrix>(z.data(), 1, static_cast<Eigen::Index>(z.size()));
    return score_batch(row, 1)[0];
}

Vector FittedDetector::score_batch(const Matrix& z, std::size_t threads) const {
    if (static_cast<std::size_t>(z.cols()) != input_dim()) {
        throw ArgumentError("score: embeddings have " + std::to_string(z.cols()) + " columns, detector expects " +
                            std::to_string(input_dim()));
    }
    if (pca_) return score_reduced(pca_transform(*pca_, z), threads);
    return score_reduced(z, threads);
}

namespace {

Vector energy_rows(const Matrix& l, EnergyForm form) {
    Vector out(l.rows());
    for (Eigen::Index i = 0; i < l.rows(); ++i) out[i] = energy_score(row_span(l, i), form);
    return out;
}

}  // namespace

Vector FittedDetector::score_reduced(const Matrix& z, std::size_t threads) const {
    const EnergyForm form = spec_.energy_form;
    return std::visit(
        [&](const auto& s) -> Vector {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, LogitState>) {
                const Matrix l = logits(s.head, z);
                if (spec_.method == Method::msp) {
                    Vector out(l.rows());
                    for (Eigen::Index i = 0; i < l.rows(); ++i) out[i] = msp_score(row_span(l, i));
                    return out;
                }
                return energy_rows(l, form);
            } else if constexpr (std::is_same_v<T, AshState>) {
                Matrix pruned(z.rows(), z.cols());
                for (Eigen::Index i = 0; i < z.rows(); ++i) {
                    pruned.row(i) = ash_prune(row_span(z, i), s.prune_percent).transpose();
                }
                return energy_rows(logits(s.head, pruned), form);
            } else if constexpr (std::is_same_v<T, DiceState>) {
                return energy_rows(logits(s.masked, z), form);
            } else if constexpr (std::is_same_v<T, MdsState>) {
                const Matrix d = s.scorer.distances(z);
                return -d.rowwise().minCoeff();
            } else if constexpr (std::is_same_v<T, RmdsState>) {
                const Matrix d = s.class_scorer.distances(z);
                const Matrix d0 = s.background_scorer.distances(z);
                Vector out(z.rows());
                for (Eigen::Index i = 0; i < z.rows(); ++i) {
                    out[i] = -(d.row(i).array() - d0(i, 0)).minCoeff();
                }
                return out;
            } else {
                const Matrix q = s.index.normalized ? l2_normalize_rows(z) : z;
                return -kth_distances(s.index, q, s.k, threads);
            }
        },
        state_);
}

// ---------------------------------------------------------------------------
// Fit

namespace {

DetectorSpec base_spec(Method method) {
    DetectorSpec spec;
    spec.method = method;
    return spec;
}

Vector column_mean(const Matrix& z) {
    if (z.rows() == 0) throw FitError("cannot fit on an empty ID set");
    return z.colwise().mean().transpose();
}

FittedDetector dice_like(Method method, const Matrix& z_id, const ClassifierHead& head, double p, EnergyForm form) {
    if (static_cast<std::size_t>(z_id.cols()) != head.feature_dim()) {
        throw ArgumentError("dice_fit: embeddings and head disagree on feature dimension");
    }
    if (!(p >= 0.0 && p < 100.0)) throw ArgumentError("dice_fit: p outside [0, 100)");
    DiceState state;
    state.mean_feature = column_mean(z_id);
    const Matrix v = contribution_matrix(head.weights, state.mean_feature);
    state.mask = method == Method::dice ? global_mask(v, p) : column_mask(v, p);
    state.masked.weights = head.weights.array() * state.mask.mask.cast<double>().array();
    state.masked.bias = head.bias;
    DetectorSpec spec = base_spec(method);
    spec.p = p;
    spec.energy_form = form;
    return FittedDetector(spec, std::move(state));
}

}  // namespace

FittedDetector msp_fit(const ClassifierHead& head) { return FittedDetector(base_spec(Method::msp), LogitState{head}); }

FittedDetector energy_fit(const ClassifierHead& head, EnergyForm form) {
    DetectorSpec spec = base_spec(Method::energy);
    spec.energy_form = form;
    return FittedDetector(spec, LogitState{head});
}

FittedDetector ash_fit(const ClassifierHead& head, double prune_percent, EnergyForm form) {
    if (!(prune_percent >= 0.0 && prune_percent < 100.0)) throw ArgumentError("ash: percent outside [0, 100)");
    DetectorSpec spec = base_spec(Method::ash);
    spec.prune_percent = prune_percent;
    spec.energy_form = form;
    return FittedDetector(spec, AshState{head, prune_percent});
}

FittedDetector dice_fit(const Matrix& z_id, const ClassifierHead& head, double p, EnergyForm form) {
    return dice_like(Method::dice, z_id, head, p, form);
}

FittedDetector dicecol_fit(const Matrix& z_id, const ClassifierHead& head, double p, EnergyForm form) {
    return dice_like(Method::dicecol, z_id, head, p, form);
}

FittedDetector mds_fit(const Matrix& z_id, std::span<const int> labels, std::size_t num_classes, const Ridge& ridge) {
    DetectorSpec spec = base_spec(Method::mds);
    spec.ridge = ridge;
    return FittedDetector(spec, MdsState(fit_class_gaussians(z_id, labels, num_classes, ridge)));
}

FittedDetector rmds_fit(const Matrix& z_id, std::span<const int> labels, std::size_t num_classes, const Ridge& ridge) {
    DetectorSpec spec = base_spec(Method::rmds);
    spec.ridge = ridge;
    return FittedDetector(spec,
                          RmdsState(fit_class_gaussians(z_id, labels, num_classes, ridge), fit_background(z_id, ridge)));
}

FittedDetector knn_fit(const Matrix& z_id, const KnnConfig& cfg) {
    KnnState state;
    state.index = build_index(z_id, cfg.subsample_fraction, cfg.normalize, cfg.seed);
    state.k = cfg.k.value_or(std::min(default_knn_k(static_cast<std::size_t>(z_id.rows())), state.index.size()));
    if (state.k < 1 || state.k > state.index.size()) {
        throw ArgumentError("knn: k=" + std::to_string(state.k) + " exceeds the bank size " +
                            std::to_string(state.index.size()));
    }
    DetectorSpec spec = base_spec(Method::knn);
    spec.k = state.k;
    spec.normalize = cfg.normalize;
    spec.subsample_fraction = cfg.subsample_fraction;
    spec.seed = cfg.seed;
    return FittedDetector(spec, std::move(state));
}

namespace {

FittedDetector fit_plain(const DetectorSpec& spec, const Matrix& z_id, std::span<const int> labels,
                         std::size_t num_classes, const ClassifierHead* head) {
    auto need_head = [&]() -> const ClassifierHead& {
        if (!head) throw ArgumentError(std::string(to_string(spec.method)) + " needs a classifier head");
        return *head;
    };
    FittedDetector det = [&] {
        switch (spec.method) {
            case Method::msp: return msp_fit(need_head());
            case Method::energy: return energy_fit(need_head(), spec.energy_form);
            case Method::ash: return ash_fit(need_head(), spec.prune_percent, spec.energy_form);
            case Method::dice: return dice_fit(z_id, need_head(), spec.p, spec.energy_form);
            case Method::dicecol: return dicecol_fit(z_id, need_head(), spec.p, spec.energy_form);
            case Method::mds: return mds_fit(z_id, labels, num_classes, spec.ridge);
            case Method::rmds: return rmds_fit(z_id, labels, num_classes, spec.ridge);
            case Method::knn:
                return knn_fit(z_id, KnnConfig{spec.k, spec.normalize, spec.subsample_fraction, spec.seed});
        }
        throw ArgumentError("unknown method");
    }();
    // Keep the caller's label and any fields the method does not consume.
    DetectorSpec merged = spec;
    merged.k = det.spec().k;
    return FittedDetector(merged, det.state());
}

}  // namespace

FittedDetector with_pca(const DetectorSpec& inner, std::size_t components, const Matrix& z_id,
                        std::span<const int> labels, std::size_t num_classes) {
    if (!is_representation_method(inner.method)) {
        throw ArgumentError("with_pca: inner method must be mds, rmds or knn");
    }
    PcaModel pca = pca_fit(z_id, components);
    const Matrix reduced = pca_transform(pca, z_id);
    DetectorSpec plain = inner;
    plain.use_pca = false;
    FittedDetector det = fit_plain(plain, reduced, labels, num_classes, nullptr);
    DetectorSpec spec = det.spec();
    spec.name = inner.name;
    return FittedDetector(spec, det.state(), std::move(pca));
}

FittedDetector fit_detector(const DetectorSpec& spec, const Matrix& z_id, std::span<const int> labels,
                            const ClassifierHead& head) {
    spec.validate();
    const std::size_t num_classes = head.num_classes();
    if (spec.use_pca) {
        const std::size_t limit = std::min<std::size_t>(z_id.rows(), z_id.cols());
        const std::size_t k = spec.pca_components.value_or(std::min(kDefaultPcaComponents, limit));
        return with_pca(spec, k, z_id, labels, num_classes);
    }
    return fit_plain(spec, z_id, labels, num_classes, &head);
}

FittedDetector fit_detector(const DetectorSpec& spec, const EmbeddingBundle& bundle) {
    static const std::vector<int> kNoLabels;
    const std::vector<int>& labels = bundle.id_train.labels ? *bundle.id_train.labels : kNoLabels;
    return fit_detector(spec, bundle.id_train.features, labels, bundle.head);
}

namespace {

void expect_method(const FittedDetector& det, std::initializer_list<Method> allowed, const char* fn) {
    if (std::find(allowed.begin(), allowed.end(), det.method()) == allowed.end()) {
        throw ArgumentError(std::string(fn) + ": detector was fitted as " + std::string(to_string(det.method())));
    }
}

}  // namespace

double dice_score(const FittedDetector& det, std::span<const double> z) {
    expect_method(det, {Method::dice, Method::dicecol}, "dice_score");
    return det.score(z);
}

double mds_score(const FittedDetector& det, std::span<const double> z) {
    expect_method(det, {Method::mds}, "mds_score");
    return det.score(z);
}

double rmds_score(const FittedDetector& det, std::span<const double> z) {
    expect_method(det, {Method::rmds}, "rmds_score");
    return det.score(z);
}

double knn_score(const FittedDetector& det, std::span<const double> z) {
    expect_method(det, {Method::knn}, "knn_score");
    return det.score(z);
}

}  // namespace oodkit
