#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oodkit/matrix.hpp"

namespace oodkit {

/// Dense float32 array of rank 1 or 2, row-major.
struct ArrayF32 {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() == 2 ? shape[1] : 1; }

    bool operator==(const ArrayF32&) const = default;
};

/// Reads an NPY v1.0 file holding little-endian float32 data.
/// Fortran-ordered files are transposed so the result is always row-major.
ArrayF32 read_npy(const std::filesystem::path& path);

/// Writes an NPY v1.0 file ('<f4', C order). The header is space-padded so the
/// payload starts on a 64-byte boundary.
void write_npy(const ArrayF32& array, const std::filesystem::path& path);

ArrayF32 to_array(const Matrix& m);
ArrayF32 to_array(const Vector& v);
Matrix to_matrix(const ArrayF32& a);
Vector to_vector(const ArrayF32& a);

enum class OodGroup { near, far };

std::string_view to_string(OodGroup group);
OodGroup parse_group(std::string_view text);

/// Final linear layer: logits = weightsᵀ z + bias, weights is d×C.
struct ClassifierHead {
    Matrix weights;
    Vector bias;

    std::size_t feature_dim() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t num_classes() const { return static_cast<std::size_t>(weights.cols()); }
};

struct EmbeddingSet {
    Matrix features;
    std::optional<std::vector<int>> labels;
};

struct OodSet {
    std::string name;
    OodGroup group = OodGroup::near;
    Matrix features;
};

struct EmbeddingBundle {
    std::filesystem::path source;  // manifest the bundle was loaded from, if any
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    EmbeddingSet id_train;
    EmbeddingSet id_test;
    std::vector<OodSet> ood;
    ClassifierHead head;
};

inline constexpr int kManifestVersion = 1;

/// Parses the JSON manifest, loads every referenced array, and cross-checks
/// dimensions and labels. Throws SchemaError for a malformed manifest and
/// ValidationError (naming the offending file) for inconsistent arrays.
EmbeddingBundle load_bundle(const std::filesystem::path& manifest_path);

/// Writes `bundle` into `dir` as NPY files plus manifest.json and returns the
/// manifest path. Arrays are rounded to float32.
std::filesystem::path save_bundle(const EmbeddingBundle& bundle, const std::filesystem::path& dir);

/// Checks every bundle invariant; throws ValidationError on the first violation.
void validate_bundle(const EmbeddingBundle& bundle);

}  // namespace oodkit
