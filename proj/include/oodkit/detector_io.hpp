#pragma once

#include <filesystem>

#include <json.hpp>

#include "oodkit/detectors.hpp"

namespace oodkit {

inline constexpr int kDetectorFormatVersion = 1;

/// Hyperparameters as a JSON object; the same keys are accepted in run configs.
nlohmann::ordered_json spec_to_json(const DetectorSpec& spec);

/// Reads "method" plus any of: name, p, prune_percent, k, normalize,
/// subsample_fraction, pca_components, epsilon, relative_epsilon,
/// energy_form, seed. Unknown keys raise SchemaError.
DetectorSpec spec_from_json(const nlohmann::json& obj);

/// Writes detector.json plus one NPY file per array role into `dir`.
void save_detector(const FittedDetector& det, const std::filesystem::path& dir);

FittedDetector load_detector(const std::filesystem::path& dir);

}  // namespace oodkit
