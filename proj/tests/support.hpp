#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "oodkit/matrix.hpp"
#include "oodkit/random.hpp"

namespace testing {

// Scratch directory removed on scope exit.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("oodkit-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

inline oodkit::Matrix random_matrix(oodkit::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    oodkit::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

inline oodkit::Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const auto r = static_cast<Eigen::Index>(rows.size());
    const auto c = static_cast<Eigen::Index>(rows.begin()->size());
    oodkit::Matrix m(r, c);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

inline oodkit::Vector vec(std::initializer_list<double> v) {
    oodkit::Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

inline std::span<const double> span_of(const std::vector<double>& v) { return {v.data(), v.size()}; }
inline std::span<const double> span_of(const oodkit::Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

// Oracles: deliberately naive reference implementations.

inline std::vector<double> naive_logits(const oodkit::Matrix& w, const oodkit::Vector& b,
                                        std::span<const double> z) {
    std::vector<double> out(static_cast<std::size_t>(w.cols()));
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
        double s = b[c];
        for (Eigen::Index i = 0; i < w.rows(); ++i) s += w(i, c) * z[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(c)] = s;
    }
    return out;
}

inline double naive_logsumexp(const std::vector<double>& l) {
    double s = 0.0;
    for (double x : l) s += std::exp(x);
    return std::log(s);
}

// Every distance from z to the bank, fully sorted; k-th entry (1-indexed).
inline double sorted_kth_distance(const oodkit::Matrix& bank, std::span<const double> z, std::size_t k) {
    std::vector<double> d;
    for (Eigen::Index r = 0; r < bank.rows(); ++r) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < bank.cols(); ++j) {
            const double diff = bank(r, j) - z[static_cast<std::size_t>(j)];
            s += diff * diff;
        }
        d.push_back(std::sqrt(s));
    }
    std::sort(d.begin(), d.end());
    return d[k - 1];
}

// Score vector drawn from a small integer grid so duplicates are common.
inline std::vector<double> tied_scores(oodkit::Rng& rng, std::size_t n, std::uint64_t levels) {
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(rng.below(levels)) * 0.25;
    return v;
}

}  // namespace testing
