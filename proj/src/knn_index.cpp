#include "oodkit/knn_index.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "oodkit/error.hpp"
#include "oodkit/parallel.hpp"
#include "oodkit/random.hpp"

namespace oodkit {

namespace {

double kth_distance_with(const KnnIndex& index, const double* z, std::size_t k, std::vector<double>& scratch) {
    const auto m = index.bank.cols();
    const auto rows = index.bank.rows();
    scratch.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double* b = index.bank.data() + r * m;
        double acc = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double diff = z[j] - b[j];
            acc += diff * diff;
        }
        scratch[r] = acc;
    }
    auto kth = scratch.begin() + static_cast<std::ptrdiff_t>(k - 1);
    std::nth_element(scratch.begin(), kth, scratch.end());
    return std::sqrt(*kth);
}

void check_k(const KnnIndex& index, std::size_t k) {
    if (k < 1 || k > index.size()) {
        throw ArgumentError("kth_distance: k=" + std::to_string(k) + " outside [1, " + std::to_string(index.size()) +
                            "]");
    }
}

}  // namespace

KnnIndex build_index(const Matrix& z, double subsample_fraction, bool normalize, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(z.rows());
    if (n == 0) throw BuildError("build_index: no rows to index");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
        throw ArgumentError("build_index: subsample_fraction must lie in (0, 1]");
    }

    std::vector<std::size_t> keep;
    if (subsample_fraction == 1.0) {
        keep.resize(n);
        for (std::size_t i = 0; i < n; ++i) keep[i] = i;
    } else {
        // The epsilon keeps exact products such as 0.3 * 10 from rounding up.
        auto count = static_cast<std::size_t>(std::ceil(subsample_fraction * static_cast<double>(n) - 1e-9));
        count = std::clamp<std::size_t>(count, 1, n);
        Rng rng(seed, 0x6b6e6eULL);
        keep = sample_without_replacement(n, count, rng);
    }

    KnnIndex index;
    index.normalized = normalize;
    index.subsample_fraction = subsample_fraction;
    index.bank.resize(static_cast<Eigen::Index>(keep.size()), z.cols());
    std::vector<std::size_t> zero_rows;
    for (std::size_t r = 0; r < keep.size(); ++r) {
        index.bank.row(r) = z.row(static_cast<Eigen::Index>(keep[r]));
        if (normalize) {
            const double norm = index.bank.row(r).norm();
            if (norm == 0.0) {
                zero_rows.push_back(keep[r]);
            } else {
                index.bank.row(r) /= norm;
            }
        }
    }
    if (!zero_rows.empty()) {
        std::string list;
        for (std::size_t i = 0; i < zero_rows.size() && i < 20; ++i) list += (i ? ", " : "") + std::to_string(zero_rows[i]);
        if (zero_rows.size() > 20) list += ", ...";
        throw BuildError("build_index: cannot normalize zero-norm rows [" + list + "]");
    }
    return index;
}

double kth_distance(const KnnIndex& index, std::span<const double> z, std::size_t k) {
    check_k(index, k);
    if (z.size() != index.dim()) throw ArgumentError("kth_distance: query dimension mismatch");
    std::vector<double> scratch;
    return kth_distance_with(index, z.data(), k, scratch);
}

Vector kth_distances(const KnnIndex& index, const Matrix& queries, std::size_t k, std::size_t threads) {
    check_k(index, k);
    if (static_cast<std::size_t>(queries.cols()) != index.dim()) {
        throw ArgumentError("kth_distances: query dimension mismatch");
    }
    const auto n = static_cast<std::size_t>(queries.rows());
    Vector out(queries.rows());
    constexpr std::size_t kBlock = 64;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    parallel_for(
        blocks,
        [&](std::size_t b) {
            std::vector<double> scratch;
            const std::size_t end = std::min(n, (b + 1) * kBlock);
            for (std::size_t i = b * kBlock; i < end; ++i) {
                out[static_cast<Eigen::Index>(i)] =
                    kth_distance_with(index, queries.data() + i * queries.cols(), k, scratch);
            }
        },
        threads);
    return out;
}

Matrix l2_normalize_rows(const Matrix& z) {
    Matrix out = z;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double norm = out.row(r).norm();
        if (norm > 0.0) out.row(r) /= norm;
    }
    return out;
}

std::size_t default_knn_k(std::size_t n) {
    if (n >= 10000) return 50;
    return std::max<std::size_t>(1, (n + 199) / 200);
}

}  // namespace oodkit
