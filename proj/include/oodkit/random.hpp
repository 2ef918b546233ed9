#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace oodkit {

/// Portable seeded generator: std::mt19937_64 (whose output sequence the C++
/// standard pins) plus hand-written uniform and Box-Muller normal draws, so
/// sequences do not depend on the standard library's distribution code.
class Rng {
public:
    /// `stream` derives independent sequences from one user seed.
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64() { return engine_(); }
    double uniform();                       // [0, 1)
    std::uint64_t below(std::uint64_t n);   // [0, n), unbiased
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// `count` distinct indices from [0, n), returned in ascending order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng);

}  // namespace oodkit
