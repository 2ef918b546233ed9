#include "oodkit/array_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "oodkit/error.hpp"

namespace oodkit {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 6> kMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kPreludeSize = 10;  // magic + version + uint16 header length
constexpr std::size_t kAlignment = 64;

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
}

std::string shape_tuple(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    if (shape.size() == 1) os << ',';
    os << ')';
    return os.str();
}

std::vector<std::size_t> parse_shape(const std::string& text, const fs::path& path) {
    std::vector<std::size_t> shape;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = item.find_last_not_of(" \t");
        item = item.substr(first, last - first + 1);
        if (item.empty() || !std::all_of(item.begin(), item.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            throw FormatError(path.string() + ": malformed shape entry '" + item + "'");
        }
        shape.push_back(static_cast<std::size_t>(std::stoull(item)));
    }
    return shape;
}

void decode_f32le(const char* bytes, std::size_t count, float* out) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out, bytes, count * sizeof(float));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const auto* b = reinterpret_cast<const unsigned char*>(bytes + 4 * i);
            const std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                                    (std::uint32_t(b[3]) << 24);
            out[i] = std::bit_cast<float>(u);
        }
    }
}

std::string encode_f32le(const std::vector<float>& data) {
    std::string bytes(data.size() * sizeof(float), '\0');
    if constexpr (std::endian::native == std::endian::little) {
        if (!data.empty()) std::memcpy(bytes.data(), data.data(), bytes.size());
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto u = std::bit_cast<std::uint32_t>(data[i]);
            for (int k = 0; k < 4; ++k) bytes[4 * i + k] = static_cast<char>((u >> (8 * k)) & 0xFF);
        }
    }
    return bytes;
}

}  // namespace

ArrayF32 read_npy(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (blob.size() < kPreludeSize || !std::equal(kMagic.begin(), kMagic.end(), blob.begin())) {
        throw FormatError(path.string() + ": missing NPY magic");
    }
    const auto major = static_cast<unsigned char>(blob[6]);
    const auto minor = static_cast<unsigned char>(blob[7]);
    if (major != 1 || minor != 0) {
        throw FormatError(path.string() + ": only NPY version 1.0 is supported (found " + std::to_string(major) + "." +
                          std::to_string(minor) + ")");
    }
    const std::size_t header_len =
        std::size_t(static_cast<unsigned char>(blob[8])) | (std::size_t(static_cast<unsigned char>(blob[9])) << 8);
    if (blob.size() < kPreludeSize + header_len) throw FormatError(path.string() + ": truncated header");
    const std::string header = blob.substr(kPreludeSize, header_len);

    static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
    static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
    std::smatch descr, order, shape_m;
    if (header.find('{') == std::string::npos || header.find('}') == std::string::npos ||
        !std::regex_search(header, descr, descr_re) || !std::regex_search(header, order, order_re) ||
        !std::regex_search(header, shape_m, shape_re)) {
        throw FormatError(path.string() + ": malformed NPY header dictionary");
    }
    if (descr[1] != "<f4") {
        throw UnsupportedDtypeError(path.string() + ": unsupported dtype '" + descr[1].str() +
                                    "' (only little-endian float32 '<f4')");
    }
    const bool fortran = order[1] == "True";

    ArrayF32 out;
    out.shape = parse_shape(shape_m[1].str(), path);
    if (out.shape.size() != 1 && out.shape.size() != 2) {
        throw FormatError(path.string() + ": rank " + std::to_string(out.shape.size()) + " arrays are not supported");
    }
    const std::size_t count = element_count(out.shape);
    const std::size_t payload = blob.size() - kPreludeSize - header_len;
    if (payload < count * sizeof(float)) {
        throw FormatError(path.string() + ": truncated payload (header declares " + std::to_string(count) +
                          " floats, file holds " + std::to_string(payload / sizeof(float)) + ")");
    }
    if (payload > count * sizeof(float)) throw FormatError(path.string() + ": trailing bytes after payload");

    out.data.resize(count);
    decode_f32le(blob.data() + kPreludeSize + header_len, count, out.data.data());

    if (fortran && out.shape.size() == 2) {
        const std::size_t r = out.shape[0], c = out.shape[1];
        std::vector<float> row_major(count);
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t i = 0; i < r; ++i) row_major[i * c + j] = out.data[j * r + i];
        out.data = std::move(row_major);
    }
    return out;
}

void write_npy(const ArrayF32& array, const fs::path& path) {
    if (array.shape.size() != 1 && array.shape.size() != 2) {
        throw ArgumentError("write_npy: rank must be 1 or 2");
    }
    if (element_count(array.shape) != array.data.size()) {
        throw ArgumentError("write_npy: shape " + shape_tuple(array.shape) + " does not match " +
                            std::to_string(array.data.size()) + " elements");
    }
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_tuple(array.shape) + ", }";
    const std::size_t unpadded = kPreludeSize + header.size() + 1;
    header.append((kAlignment - unpadded % kAlignment) % kAlignment, ' ');
    header.push_back('\n');
    if (header.size() > 0xFFFF) throw ArgumentError("write_npy: header exceeds the v1.0 limit");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    const char version[2] = {1, 0};
    out.write(version, 2);
    const char len[2] = {static_cast<char>(header.size() & 0xFF), static_cast<char>((header.size() >> 8) & 0xFF)};
    out.write(len, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    const std::string payload = encode_f32le(array.data);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("short write to " + path.string());
}

ArrayF32 to_array(const Matrix& m) {
    ArrayF32 a;
    a.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    a.data.resize(m.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) a.data[i] = static_cast<float>(m.data()[i]);
    return a;
}

ArrayF32 to_array(const Vector& v) {
    ArrayF32 a;
    a.shape = {static_cast<std::size_t>(v.size())};
    a.data.resize(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) a.data[i] = static_cast<float>(v[i]);
    return a;
}

Matrix to_matrix(const ArrayF32& a) {
    Matrix m(static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
    for (std::size_t i = 0; i < a.data.size(); ++i) m.data()[i] = a.data[i];
    return m;
}

Vector to_vector(const ArrayF32& a) {
    Vector v(static_cast<Eigen::Index>(a.data.size()));
    for (std::size_t i = 0; i < a.data.size(); ++i) v[i] = a.data[i];
    return v;
}

std::string_view to_string(OodGroup group) { return group == OodGroup::near ? "near" : "far"; }

OodGroup parse_group(std::string_view text) {
    if (text == "near") return OodGroup::near;
    if (text == "far") return OodGroup::far;
    throw SchemaError("ood group must be \"near\" or \"far\", got \"" + std::string(text) + "\"");
}

// ---------------------------------------------------------------------------
// Bundle validation

namespace {

void check_features(const Matrix& x, std::size_t d, const std::string& what) {
    if (static_cast<std::size_t>(x.cols()) != d) {
        throw ValidationError(what + ": feature width " + std::to_string(x.cols()) + " does not match feature_dim " +
                              std::to_string(d));
    }
    if (!x.allFinite()) throw ValidationError(what + ": features contain NaN or Inf");
}

void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t num_classes, const std::string& what) {
    if (labels.size() != rows) {
        throw ValidationError(what + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                              " feature rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw ValidationError(what + ": label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

void check_head(const ClassifierHead& head, std::size_t d, std::size_t c, const std::string& weights_what,
                const std::string& bias_what) {
    if (head.feature_dim() != d || head.num_classes() != c) {
        throw ValidationError(weights_what + ": head weights are " + std::to_string(head.weights.rows()) + "x" +
                              std::to_string(head.weights.cols()) + ", expected " + std::to_string(d) + "x" +
                              std::to_string(c));
    }
    if (static_cast<std::size_t>(head.bias.size()) != c) {
        throw ValidationError(bias_what + ": bias length " + std::to_string(head.bias.size()) + ", expected " +
                              std::to_string(c));
    }
    if (!head.weights.allFinite()) throw ValidationError(weights_what + ": non-finite head weights");
    if (!head.bias.allFinite()) throw ValidationError(bias_what + ": non-finite head bias");
}

std::vector<int> labels_from_array(const ArrayF32& a, const std::string& what) {
    if (a.shape.size() != 1) throw ValidationError(what + ": labels must be a 1-D array");
    std::vector<int> out(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const float v = a.data[i];
        if (!std::isfinite(v) || std::nearbyint(v) != v) {
            throw ValidationError(what + ": non-integral label value at row " + std::to_string(i));
        }
        out[i] = static_cast<int>(v);
    }
    return out;
}

ArrayF32 labels_to_array(const std::vector<int>& labels) {
    ArrayF32 a;
    a.shape = {labels.size()};
    a.data.assign(labels.begin(), labels.end());
    return a;
}

using Json = nlohmann::json;

const Json& require(const Json& obj, const char* key, const std::string& ctx) {
    if (!obj.is_object() || !obj.contains(key)) throw SchemaError(ctx + ": missing \"" + key + "\"");
    return obj.at(key);
}

std::string require_string(const Json& obj, const char* key, const std::string& ctx) {
    const Json& v = require(obj, key, ctx);
    if (!v.is_string()) throw SchemaError(ctx + ": \"" + key + "\" must be a string");
    return v.get<std::string>();
}

std::size_t require_positive(const Json& obj, const char* key, const std::string& ctx) {
    const Json& v = require(obj, key, ctx);
    if (!v.is_number_integer() || v.get<long long>() <= 0) {
        throw SchemaError(ctx + ": \"" + key + "\" must be a positive integer");
    }
    return v.get<std::size_t>();
}

fs::path resolve(const fs::path& base, const std::string& rel) {
    const fs::path p(rel);
    return p.is_absolute() ? p : base / p;
}

Matrix load_features(const fs::path& path, std::size_t d) {
    const ArrayF32 a = read_npy(path);
    if (a.shape.size() != 2) throw ValidationError(path.string() + ": features must be a 2-D array");
    Matrix m = to_matrix(a);
    check_features(m, d, path.string());
    return m;
}

}  // namespace

void validate_bundle(const EmbeddingBundle& b) {
    if (b.feature_dim == 0 || b.num_classes == 0) throw ValidationError("bundle: feature_dim and num_classes must be > 0");
    check_head(b.head, b.feature_dim, b.num_classes, "head weights", "head bias");
    check_features(b.id_train.features, b.feature_dim, "id_train");
    if (!b.id_train.labels) throw ValidationError("id_train: labels are required");
    check_labels(*b.id_train.labels, b.id_train.features.rows(), b.num_classes, "id_train");
    check_features(b.id_test.features, b.feature_dim, "id_test");
    if (b.id_test.labels) check_labels(*b.id_test.labels, b.id_test.features.rows(), b.num_classes, "id_test");
    for (const auto& o : b.ood) check_features(o.features, b.feature_dim, "ood '" + o.name + "'");
}

EmbeddingBundle load_bundle(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    Json m;
    try {
        m = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw SchemaError(manifest_path.string() + ": invalid JSON: " + e.what());
    }
    const std::string ctx = manifest_path.string();
    const Json& version = require(m, "version", ctx);
    if (!version.is_number_integer() || version.get<int>() != kManifestVersion) {
        throw SchemaError(ctx + ": unsupported manifest version");
    }

    EmbeddingBundle b;
    b.source = manifest_path;
    b.feature_dim = require_positive(m, "feature_dim", ctx);
    b.num_classes = require_positive(m, "num_classes", ctx);
    const fs::path base = manifest_path.parent_path();

    // Parse the whole schema before touching any array file.
    const Json& train = require(m, "id_train", ctx);
    const fs::path train_features = resolve(base, require_string(train, "features", ctx + " id_train"));
    if (!train.contains("labels")) throw ValidationError(ctx + ": id_train labels are required");
    const fs::path train_labels = resolve(base, require_string(train, "labels", ctx + " id_train"));
    const Json& test = require(m, "id_test", ctx);
    const fs::path test_features = resolve(base, require_string(test, "features", ctx + " id_test"));
    std::optional<fs::path> test_labels;
    if (test.contains("labels")) test_labels = resolve(base, require_string(test, "labels", ctx + " id_test"));
    const Json& head = require(m, "head", ctx);
    const fs::path weights_path = resolve(base, require_string(head, "weights", ctx + " head"));
    const fs::path bias_path = resolve(base, require_string(head, "bias", ctx + " head"));

    const Json& ood = require(m, "ood", ctx);
    if (!ood.is_array()) throw SchemaError(ctx + ": \"ood\" must be a list");
    struct OodEntry {
        std::string name;
        OodGroup group;
        fs::path path;
    };
    std::vector<OodEntry> entries;
    for (const Json& e : ood) {
        OodEntry entry;
        entry.name = require_string(e, "name", ctx + " ood entry");
        entry.group = parse_group(require_string(e, "group", ctx + " ood '" + entry.name + "'"));
        entry.path = resolve(base, require_string(e, "features", ctx + " ood '" + entry.name + "'"));
        entries.push_back(std::move(entry));
    }

    const ArrayF32 w = read_npy(weights_path);
    if (w.shape.size() != 2) throw ValidationError(weights_path.string() + ": head weights must be 2-D");
    const ArrayF32 bias = read_npy(bias_path);
    if (bias.shape.size() != 1) throw ValidationError(bias_path.string() + ": head bias must be 1-D");
    b.head.weights = to_matrix(w);
    b.head.bias = to_vector(bias);
    check_head(b.head, b.feature_dim, b.num_classes, weights_path.string(), bias_path.string());

    b.id_train.features = load_features(train_features, b.feature_dim);
    b.id_train.labels = labels_from_array(read_npy(train_labels), train_labels.string());
    check_labels(*b.id_train.labels, b.id_train.features.rows(), b.num_classes, train_labels.string());

    b.id_test.features = load_features(test_features, b.feature_dim);
    if (test_labels) {
        b.id_test.labels = labels_from_array(read_npy(*test_labels), test_labels->string());
        check_labels(*b.id_test.labels, b.id_test.features.rows(), b.num_classes, test_labels->string());
    }

    for (const auto& e : entries) {
        b.ood.push_back(OodSet{e.name, e.group, load_features(e.path, b.feature_dim)});
    }
    return b;
}

fs::path save_bundle(const EmbeddingBundle& bundle, const fs::path& dir) {
    validate_bundle(bundle);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    nlohmann::ordered_json m;
    m["version"] = kManifestVersion;
    m["feature_dim"] = bundle.feature_dim;
    m["num_classes"] = bundle.num_classes;

    write_npy(to_array(bundle.id_train.features), dir / "id_train_features.npy");
    write_npy(labels_to_array(*bundle.id_train.labels), dir / "id_train_labels.npy");
    m["id_train"] = {{"features", "id_train_features.npy"}, {"labels", "id_train_labels.npy"}};

    write_npy(to_array(bundle.id_test.features), dir / "id_test_features.npy");
    m["id_test"] = {{"features", "id_test_features.npy"}};
    if (bundle.id_test.labels) {
        write_npy(labels_to_array(*bundle.id_test.labels), dir / "id_test_labels.npy");
        m["id_test"]["labels"] = "id_test_labels.npy";
    }

    m["ood"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < bundle.ood.size(); ++i) {
        const auto& o = bundle.ood[i];
        const std::string file = "ood_" + std::to_string(i) + ".npy";
        write_npy(to_array(o.features), dir / file);
        m["ood"].push_back({{"name", o.name}, {"features", file}, {"group", std::string(to_string(o.group))}});
    }

    write_npy(to_array(bundle.head.weights), dir / "head_weights.npy");
    write_npy(to_array(bundle.head.bias), dir / "head_bias.npy");
    m["head"] = {{"weights", "head_weights.npy"}, {"bias", "head_bias.npy"}};

    const fs::path manifest = dir / "manifest.json";
    std::ofstream out(manifest, std::ios::trunc);
    if (!out) throw IoError("cannot write " + manifest.string());
    out << m.dump(2) << '\n';
    if (!out) throw IoError("short write to " + manifest.string());
    return manifest;
}

}  // namespace oodkit
