#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "oodkit/array_store.hpp"
#include "oodkit/knn_index.hpp"
#include "oodkit/linalg.hpp"
#include "oodkit/matrix.hpp"

namespace oodkit {

// Every detector maps an embedding to a score where larger means "more
// in-distribution"; distance-based methods are negated at this boundary.

enum class Method { msp, energy, ash, dice, dicecol, mds, rmds, knn };

/// `log_sum_exp` is the usual free-energy score. `printed` evaluates
/// sum_i exp(-logit_i) literally and exists only for comparison runs.
enum class EnergyForm { log_sum_exp, printed };

enum class MaskMode { global, per_column };

std::string_view to_string(Method method);
std::string_view to_string(EnergyForm form);
std::string_view to_string(MaskMode mode);
EnergyForm parse_energy_form(std::string_view text);

/// True for methods that work on embeddings directly (and accept PCA).
bool is_representation_method(Method method);

inline constexpr std::size_t kDefaultPcaComponents = 128;

struct DetectorSpec {
    Method method = Method::msp;
    std::string name;                       // report label; derived when empty
    double p = 90.0;                        // DICE / DICE-COL sparsity percent
    double prune_percent = 90.0;            // ASH
    std::optional<std::size_t> k;           // KNN; default_knn_k(N) otherwise
    bool normalize = true;                  // KNN
    double subsample_fraction = 1.0;        // KNN
    bool use_pca = false;                   // MDS / RMDS / KNN only
    std::optional<std::size_t> pca_components;
    Ridge ridge;                            // MDS / RMDS
    EnergyForm energy_form = EnergyForm::log_sum_exp;
    std::uint64_t seed = 0;

    std::string label() const;
    /// Throws ArgumentError for out-of-range hyperparameters.
    void validate() const;
};

/// Accepts "msp", "energy", "ash", "dice", "dicecol" (or "dice-col"), "mds",
/// "rmds", "knn" and the "-pca" forms of the representation methods.
DetectorSpec parse_detector_spec(std::string_view method_name);

// ---------------------------------------------------------------------------
// Logit scores

Vector logits(const ClassifierHead& head, std::span<const double> z);
Matrix logits(const ClassifierHead& head, const Matrix& z);  // N x C

double msp_score(std::span<const double> logit_vec);
double energy_score(std::span<const double> logit_vec, EnergyForm form = EnergyForm::log_sum_exp);

/// floor(percent / 100 * n), the conversion used by every sparsity knob.
std::size_t percent_count(double percent, std::size_t n);

/// Zeroes the floor(prune_percent% * d) smallest entries; among equal values
/// the lower index is pruned first.
Vector ash_prune(std::span<const double> z, double prune_percent);

// ---------------------------------------------------------------------------
// DICE contribution masks

struct ContributionMask {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mask;  // d x C, 1 = kept
    double p = 0.0;
    MaskMode mode = MaskMode::global;

    std::size_t ones() const;
    std::size_t ones_in_column(Eigen::Index c) const;
};

/// V = W ⊙ mean_h, i.e. V(i, c) = W(i, c) * mean_h(i).
Matrix contribution_matrix(const Matrix& weights, const Vector& mean_feature);

/// Drops the floor(p% * d * C) smallest entries of V, ties by row-major index.
ContributionMask global_mask(const Matrix& contributions, double p);

/// Drops the floor(p% * d) smallest entries of every column, ties by row.
ContributionMask column_mask(const Matrix& contributions, double p);

// ---------------------------------------------------------------------------
// Fitted state

struct LogitState {
    ClassifierHead head;
};

struct AshState {
    ClassifierHead head;
    double prune_percent = 90.0;
};

struct DiceState {
    ClassifierHead masked;  // W ⊙ M with the original bias
    ContributionMask mask;
    Vector mean_feature;
};

/// Squared Mahalanobis distances to a set of means sharing one precision,
/// evaluated through the Cholesky factor of the precision.
class MahalanobisScorer {
public:
    MahalanobisScorer() = default;
    MahalanobisScorer(const Matrix& means, const Matrix& precision);

    /// N x (number of means) matrix of squared distances.
    Matrix distances(const Matrix& z) const;

private:
    Matrix factor_;            // L with precision = L Lᵀ
    Matrix whitened_means_;    // means · L
};

struct MdsState {
    GaussianByClass gaussians;
    MahalanobisScorer scorer;

    explicit MdsState(GaussianByClass g);
};

struct RmdsState {
    GaussianByClass gaussians;
    BackgroundGaussian background;
    MahalanobisScorer class_scorer;
    MahalanobisScorer background_scorer;

    RmdsState(GaussianByClass g, BackgroundGaussian bg);
};

struct KnnState {
    KnnIndex index;
    std::size_t k = 1;
};

using DetectorState = std::variant<LogitState, AshState, DiceState, MdsState, RmdsState, KnnState>;

/// Immutable result of a fit step.
class FittedDetector {
public:
    FittedDetector(DetectorSpec spec, DetectorState state, std::optional<PcaModel> pca = std::nullopt);

    const DetectorSpec& spec() const { return spec_; }
    Method method() const { return spec_.method; }
    const DetectorState& state() const { return state_; }
    const std::optional<PcaModel>& pca() const { return pca_; }
    std::size_t input_dim() const;

    template <class T>
    const T& as() const {
        return std::get<T>(state_);
    }

    double score(std::span<const double> z) const;
    Vector score_batch(const Matrix& z, std::size_t threads = 0) const;

private:
    Vector score_reduced(const Matrix& z, std::size_t threads) const;

    DetectorSpec spec_;
    DetectorState state_;
    std::optional<PcaModel> pca_;
};

// ---------------------------------------------------------------------------
// Fit entry points

FittedDetector msp_fit(const ClassifierHead& head);
FittedDetector energy_fit(const ClassifierHead& head, EnergyForm form = EnergyForm::log_sum_exp);
FittedDetector ash_fit(const ClassifierHead& head, double prune_percent = 90.0,
                       EnergyForm form = EnergyForm::log_sum_exp);
FittedDetector dice_fit(const Matrix& z_id, const ClassifierHead& head, double p = 90.0,
                        EnergyForm form = EnergyForm::log_sum_exp);
FittedDetector dicecol_fit(const Matrix& z_id, const ClassifierHead& head, double p = 90.0,
                           EnergyForm form = EnergyForm::log_sum_exp);
FittedDetector mds_fit(const Matrix& z_id, std::span<const int> labels, std::size_t num_classes,
                       const Ridge& ridge = {});
FittedDetector rmds_fit(const Matrix& z_id, std::span<const int> labels, std::size_t num_classes,
                        const Ridge& ridge = {});

struct KnnConfig {
    std::optional<std::size_t> k;
    bool normalize = true;
    double subsample_fraction = 1.0;
    std::uint64_t seed = 0;
};
FittedDetector knn_fit(const Matrix& z_id, const KnnConfig& cfg = {});

/// Fits PCA with `components` directions on z_id, then fits `inner` (which
/// must be MDS, RMDS or KNN) on the reduced rows.
FittedDetector with_pca(const DetectorSpec& inner, std::size_t components, const Matrix& z_id,
                        std::span<const int> labels, std::size_t num_classes);

/// Dispatches on spec.method. Labels are required by MDS/RMDS, the head by
/// the logit methods.
FittedDetector fit_detector(const DetectorSpec& spec, const Matrix& z_id, std::span<const int> labels,
                            const ClassifierHead& head);
FittedDetector fit_detector(const DetectorSpec& spec, const EmbeddingBundle& bundle);

double dice_score(const FittedDetector& det, std::span<const double> z);
double mds_score(const FittedDetector& det, std::span<const double> z);
double rmds_score(const FittedDetector& det, std::span<const double> z);
double knn_score(const FittedDetector& det, std::span<const double> z);

}  // namespace oodkit
