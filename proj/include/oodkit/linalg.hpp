#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oodkit/matrix.hpp"

namespace oodkit {

/// Principal subspace of a feature matrix. Rows of `components` are
/// orthonormal directions ordered by descending singular value, each flipped
/// so its largest-magnitude entry is positive (lowest index wins a tie).
struct PcaModel {
    Vector mean;
    Matrix components;               // k x d
    Vector singular_values;          // length k, non-increasing
    std::size_t rank = 0;            // numerical rank of the centered data
    std::vector<std::string> warnings;

    std::size_t k() const { return static_cast<std::size_t>(components.rows()); }
    std::size_t input_dim() const { return static_cast<std::size_t>(components.cols()); }
    bool rank_deficient() const { return rank < k(); }
};

PcaModel pca_fit(const Matrix& x, std::size_t k);
Matrix pca_transform(const PcaModel& model, const Matrix& x);

/// Ridge added to a covariance before inversion. When `absolute` is unset the
/// ridge is `relative * trace(cov) / m`; a zero-trace covariance falls back to
/// `relative` itself so degenerate data still yields a precision.
struct Ridge {
    double relative = 1e-6;
    std::optional<double> absolute;

    double resolve(const Matrix& cov) const;
};

struct GaussianByClass {
    Matrix means;      // C x m
    Matrix precision;  // m x m, shared
    double epsilon = 0.0;
};

struct BackgroundGaussian {
    Vector mean;
    Matrix precision;
    double epsilon = 0.0;
};

/// Class means plus the shared MLE covariance (divisor N), then regularized.
/// Throws FitError naming any class without samples.
GaussianByClass fit_class_gaussians(const Matrix& z, std::span<const int> labels, std::size_t num_classes,
                                    const Ridge& ridge = {});

BackgroundGaussian fit_background(const Matrix& z, const Ridge& ridge = {});

/// MLE covariance of `z` around the given per-row centers (divisor N).
Matrix mle_covariance(const Matrix& centered);

/// (cov + eps I)^-1 via Cholesky, symmetrizing the input first. Throws
/// NumericError when the regularized matrix is not positive definite.
Matrix regularize_precision(const Matrix& cov, double epsilon);

/// Squared Mahalanobis form (z - mean)ᵀ P (z - mean), clamped at zero.
double mahalanobis_sq(std::span<const double> z, std::span<const double> mean, const Matrix& precision);

inline std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline std::span<const double> row_span(const Matrix& m, Eigen::Index row) {
    return {m.data() + row * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace oodkit
