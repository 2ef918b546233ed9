#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oodkit/array_store.hpp"

namespace oodkit {

// Synthetic bundles. All randomness comes from oodkit::Rng (mt19937_64 with
// Box-Muller normals); every dataset draws from its own stream derived from
// (seed, dataset index), so output is byte-identical for a given spec.

/// `orthant`: class means at `separation` along random non-negative unit
/// directions (ReLU-like features). `line`: class c sits at
/// (c + 1) * separation along one random direction; every other direction is
/// pure noise.
enum class SynthLayout { orthant, line };

std::string_view to_string(SynthLayout layout);
SynthLayout parse_layout(std::string_view text);

/// OOD samples start from a class mean, move `shift` noise-units toward the
/// origin along that mean's direction, add `translate` (absolute units, empty
/// for none), then receive isotropic noise scaled by `scale`.
struct OodRecipe {
    std::string name;
    OodGroup group = OodGroup::near;
    double shift = 0.0;
    std::vector<double> translate;
    double scale = 1.0;
    std::size_t count = 0;  // 0 = same size as id_test
};

/// near: 1 noise-unit shift; far: 20 noise-unit shift.
std::vector<OodRecipe> default_ood_recipes();

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t dim = 16;
    std::size_t classes = 4;
    std::size_t per_class = 500;
    std::size_t test_per_class = 250;
    double separation = 20.0;
    double noise = 1.0;
    double logit_scale = 10.0;  // least-squares head targets logit_scale * one-hot
    SynthLayout layout = SynthLayout::orthant;
    std::vector<OodRecipe> ood = default_ood_recipes();

    /// Throws ArgumentError unless dim >= 2, classes >= 2, separation > 0, ...
    void validate() const;
};

/// In-memory bundle; features and head are already rounded to float32, so the
/// result equals what load_bundle reads back after save_bundle.
EmbeddingBundle synthesize(const SynthSpec& spec);

/// Writes the bundle to `dir` and returns the manifest path.
std::filesystem::path generate_bundle(const SynthSpec& spec, const std::filesystem::path& dir);

struct AdversarialBundle {
    EmbeddingBundle bundle;
    std::size_t victim_class = 0;
    double p = 90.0;
};

/// Bundle whose head makes the global DICE mask at sparsity `p` zero one whole
/// class column (the victim): every non-victim class is concentrated on a few
/// coordinates while the victim spreads small contributions over all of them.
/// The property is verified with the real mask code; GeneratorError otherwise.
AdversarialBundle synthesize_adversarial(const SynthSpec& spec, double p = 90.0);

struct GeneratedAdversarial {
    std::filesystem::path manifest;
    std::size_t victim_class = 0;
};

/// Writes the adversarial bundle plus `adversarial.json` naming the victim.
GeneratedAdversarial generate_adversarial_head(const SynthSpec& spec, const std::filesystem::path& dir,
                                               double p = 90.0);

/// All-pairs AUROC with half credit for ties; O(n * m), for tests.
double oracle_auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

}  // namespace oodkit
