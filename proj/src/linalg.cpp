#include "oodkit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "oodkit/error.hpp"

namespace oodkit {

namespace {

void canonicalize_sign(Eigen::Ref<RowVector> row) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j) {
        if (std::abs(row[j]) > std::abs(row[best])) best = j;
    }
    if (row[best] < 0) row = -row;
}

}  // namespace

PcaModel pca_fit(const Matrix& x, std::size_t k) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    if (n < 2) throw ArgumentError("pca_fit: need at least 2 rows");
    if (k < 1 || k > std::min(n, d)) {
        throw ArgumentError("pca_fit: k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(n, d)) + "]");
    }

    PcaModel model;
    model.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const Eigen::MatrixXd& v = svd.matrixV();

    const double smax = s.size() ? s[0] : 0.0;
    const double tol = static_cast<double>(std::max(n, d)) * std::numeric_limits<double>::epsilon() * smax;
    std::size_t rank = 0;
    while (rank < static_cast<std::size_t>(s.size()) && s[rank] > tol && smax > 0) ++rank;
    model.rank = rank;

    const auto ki = static_cast<Eigen::Index>(k);
    const auto kept = static_cast<Eigen::Index>(std::min(rank, k));
    model.components.resize(ki, static_cast<Eigen::Index>(d));
    model.components.topRows(kept) = v.leftCols(kept).transpose();
    if (kept < ki) {
        // Directions beyond the numerical rank are an arbitrary orthonormal
        // completion of the retained span.
        Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(d, d);
        if (kept > 0) {
            Eigen::HouseholderQR<Eigen::MatrixXd> qr(v.leftCols(kept));
            basis = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
        }
        model.components.bottomRows(ki - kept) = basis.middleCols(kept, ki - kept).transpose();
        model.warnings.push_back("pca_fit: centered data has rank " + std::to_string(rank) + " < k=" +
                                 std::to_string(k) + "; trailing components are arbitrary");
    }
    for (Eigen::Index i = 0; i < ki; ++i) canonicalize_sign(model.components.row(i));
    model.singular_values = s.head(ki);
    return model;
}

Matrix pca_transform(const PcaModel& model, const Matrix& x) {
    if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
        throw ArgumentError("pca_transform: input has " + std::to_string(x.cols()) + " columns, model expects " +
                            std::to_string(model.input_dim()));
    }
    return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

double Ridge::resolve(const Matrix& cov) const {
    if (absolute) {
        if (!(*absolute >= 0.0)) throw ArgumentError("ridge epsilon must be non-negative");
        return *absolute;
    }
    if (!(relative >= 0.0)) throw ArgumentError("relative ridge must be non-negative");
    const double scale = cov.rows() ? cov.trace() / static_cast<double>(cov.rows()) : 0.0;
    return relative * (scale > 0.0 ? scale : 1.0);
}

Matrix mle_covariance(const Matrix& centered) {
    const double n = static_cast<double>(centered.rows());
    Matrix cov = (centered.transpose() * centered) / n;
    return 0.5 * (cov + cov.transpose());
}

GaussianByClass fit_class_gaussians(const Matrix& z, std::span<const int> labels, std::size_t num_classes,
                                    const Ridge& ridge) {
    const auto n = static_cast<std::size_t>(z.rows());
    if (labels.size() != n) throw ArgumentError("fit_class_gaussians: label count does not match rows");
    if (num_classes == 0) throw ArgumentError("fit_class_gaussians: num_classes must be positive");

    const auto m = z.cols();
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(num_classes), m);
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int c = labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
            throw ArgumentError("fit_class_gaussians: label " + std::to_string(c) + " out of range");
        }
        sums.row(c) += z.row(static_cast<Eigen::Index>(i));
        ++counts[c];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) throw FitError("fit_class_gaussians: class " + std::to_string(c) + " has no samples");
    }

    GaussianByClass g;
    g.means.resize(static_cast<Eigen::Index>(num_classes), m);
    for (std::size_t c = 0; c < num_classes; ++c) g.means.row(c) = sums.row(c) / static_cast<double>(counts[c]);

    Matrix centered(z.rows(), m);
    for (std::size_t i = 0; i < n; ++i) centered.row(i) = z.row(i) - g.means.row(labels[i]);
    const Matrix cov = mle_covariance(centered);
    g.epsilon = ridge.resolve(cov);
    g.precision = regularize_precision(cov, g.epsilon);
    return g;
}

BackgroundGaussian fit_background(const Matrix& z, const Ridge& ridge) {
    if (z.rows() < 2) throw FitError("fit_background: need at least 2 rows");
    // Same estimator as a single-class fit, so the two coincide bitwise.
    const std::vector<int> zeros(static_cast<std::size_t>(z.rows()), 0);
    GaussianByClass one = fit_class_gaussians(z, zeros, 1, ridge);
    return BackgroundGaussian{one.means.row(0).transpose(), std::move(one.precision), one.epsilon};
}

Matrix regularize_precision(const Matrix& cov, double epsilon) {
    if (cov.rows() != cov.cols()) throw ArgumentError("regularize_precision: matrix is not square");
    if (!(epsilon >= 0.0)) throw ArgumentError("regularize_precision: epsilon must be non-negative");
    const double scale = 1.0 + cov.cwiseAbs().maxCoeff();
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-6 * scale) {
        throw ArgumentError("regularize_precision: covariance is not symmetric");
    }
    Matrix a = 0.5 * (cov + cov.transpose());
    a.diagonal().array() += epsilon;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) {
        throw NumericError("regularize_precision: Cholesky failed; epsilon " + std::to_string(epsilon) +
                           " is too small for the data scale");
    }
    Matrix p = llt.solve(Matrix::Identity(a.rows(), a.cols()));
    if (!p.allFinite()) throw NumericError("regularize_precision: non-finite inverse");
    return 0.5 * (p + p.transpose());
}

double mahalanobis_sq(std::span<const double> z, std::span<const double> mean, const Matrix& precision) {
    const auto m = static_cast<Eigen::Index>(z.size());
    if (mean.size() != z.size() || precision.rows() != m || precision.cols() != m) {
        throw ArgumentError("mahalanobis_sq: shape mismatch");
    }
    Vector diff(m);
    for (Eigen::Index i = 0; i < m; ++i) diff[i] = z[i] - mean[i];
    return std::max(0.0, diff.dot(precision * diff));
}

}  // namespace oodkit
