#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include <json.hpp>

#include "oodkit/detectors.hpp"
#include "oodkit/eval.hpp"

namespace oodkit {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Everything `eval` needs. The JSON form (`--config run.json`) uses the keys
/// "manifests", "detectors", "format", "seed", "tpr", "out" and "threads".
struct RunConfig {
    std::vector<std::filesystem::path> manifests;
    std::vector<DetectorSpec> detectors;
    ReportFormat format = ReportFormat::markdown;
    std::uint64_t seed = 0;
    double tpr = 0.95;
    std::optional<std::filesystem::path> out;
    std::size_t threads = 0;

    /// Throws ArgumentError when a field is missing or out of range.
    void validate() const;
};

/// Relative manifest and output paths are resolved against `base_dir`.
/// Detector entries are either a method name or an object accepted by
/// spec_from_json; entries without their own "seed" take the config seed.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

/// Runs `oodkit <synth|fit|eval> ...`; returns one of the ExitCode values.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace oodkit
