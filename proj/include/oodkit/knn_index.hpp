#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "oodkit/matrix.hpp"

namespace oodkit {

/// Exact k-th nearest neighbour search over a bank of stored embeddings.
struct KnnIndex {
    Matrix bank;  // M x m
    bool normalized = true;
    double subsample_fraction = 1.0;

    std::size_t size() const { return static_cast<std::size_t>(bank.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(bank.cols()); }
};

/// Keeps ceil(fraction * N) rows drawn uniformly without replacement (original
/// row order preserved; fraction 1 keeps everything) and optionally L2
/// normalizes them. Zero rows under `normalize` raise BuildError.
KnnIndex build_index(const Matrix& z, double subsample_fraction = 1.0, bool normalize = true, std::uint64_t seed = 0);

/// k-th smallest Euclidean distance from `z` to the bank; duplicates each take
/// a rank. The caller normalizes `z` when the bank is normalized.
double kth_distance(const KnnIndex& index, std::span<const double> z, std::size_t k);

/// kth_distance for every row of `queries`, parallel over rows.
Vector kth_distances(const KnnIndex& index, const Matrix& queries, std::size_t k, std::size_t threads = 0);

/// Row-wise L2 normalization; zero rows stay zero.
Matrix l2_normalize_rows(const Matrix& z);

/// Default neighbour count for an ID training set of n rows.
std::size_t default_knn_k(std::size_t n);

}  // namespace oodkit
