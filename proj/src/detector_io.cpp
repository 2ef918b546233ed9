#include "oodkit/detector_io.hpp"

#include <fstream>
#include <map>
#include <set>

#include "oodkit/error.hpp"

namespace oodkit {

namespace fs = std::filesystem;
using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

namespace {

bool uses_energy(Method m) {
    return m == Method::energy || m == Method::ash || m == Method::dice || m == Method::dicecol;
}

template <class T>
T get_as(const Json& obj, const char* key) {
    try {
        return obj.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw SchemaError(std::string("detector spec: bad value for \"") + key + "\": " + e.what());
    }
}

}  // namespace

OrderedJson spec_to_json(const DetectorSpec& spec) {
    OrderedJson j;
    std::string method(to_string(spec.method));
    if (spec.use_pca) method += "-pca";
    j["method"] = method;
    if (!spec.name.empty()) j["name"] = spec.name;
    if (spec.method == Method::dice || spec.method == Method::dicecol) j["p"] = spec.p;
    if (spec.method == Method::ash) j["prune_percent"] = spec.prune_percent;
    if (uses_energy(spec.method)) j["energy_form"] = std::string(to_string(spec.energy_form));
    if (spec.method == Method::mds || spec.method == Method::rmds) {
        if (spec.ridge.absolute) j["epsilon"] = *spec.ridge.absolute;
        else j["relative_epsilon"] = spec.ridge.relative;
    }
    if (spec.method == Method::knn) {
        if (spec.k) j["k"] = *spec.k;
        j["normalize"] = spec.normalize;
        j["subsample_fraction"] = spec.subsample_fraction;
        j["seed"] = spec.seed;
    }
    if (spec.use_pca && spec.pca_components) j["pca_components"] = *spec.pca_components;
    return j;
}

DetectorSpec spec_from_json(const Json& obj) {
    if (!obj.is_object()) throw SchemaError("detector spec must be a JSON object");
    static const std::set<std::string> known = {"method",    "name",           "p",
                                                "prune_percent", "k",          "normalize",
                                                "subsample_fraction", "pca_components", "epsilon",
                                                "relative_epsilon", "energy_form", "seed"};
    for (const auto& [key, value] : obj.items()) {
        if (!known.contains(key)) throw SchemaError("detector spec: unknown key \"" + key + "\"");
    }
    if (!obj.contains("method") || !obj["method"].is_string()) throw SchemaError("detector spec: missing \"method\"");
    DetectorSpec spec = parse_detector_spec(obj["method"].get<std::string>());
    if (obj.contains("name")) spec.name = get_as<std::string>(obj, "name");
    if (obj.contains("p")) spec.p = get_as<double>(obj, "p");
    if (obj.contains("prune_percent")) spec.prune_percent = get_as<double>(obj, "prune_percent");
    if (obj.contains("k")) spec.k = get_as<std::size_t>(obj, "k");
    if (obj.contains("normalize")) spec.normalize = get_as<bool>(obj, "normalize");
    if (obj.contains("subsample_fraction")) spec.subsample_fraction = get_as<double>(obj, "subsample_fraction");
    if (obj.contains("pca_components")) {
        spec.pca_components = get_as<std::size_t>(obj, "pca_components");
        spec.use_pca = true;
    }
    if (obj.contains("epsilon")) spec.ridge.absolute = get_as<double>(obj, "epsilon");
    if (obj.contains("relative_epsilon")) spec.ridge.relative = get_as<double>(obj, "relative_epsilon");
    if (obj.contains("energy_form")) spec.energy_form = parse_energy_form(get_as<std::string>(obj, "energy_form"));
    if (obj.contains("seed")) spec.seed = get_as<std::uint64_t>(obj, "seed");
    spec.validate();
    return spec;
}

namespace {

ArrayF32 mask_to_array(const ContributionMask& m) {
    ArrayF32 a;
    a.shape = {static_cast<std::size_t>(m.mask.rows()), static_cast<std::size_t>(m.mask.cols())};
    a.data.assign(m.mask.data(), m.mask.data() + m.mask.size());
    return a;
}

class ArrayWriter {
public:
    ArrayWriter(const fs::path& dir, OrderedJson& roles) : dir_(dir), roles_(roles) {}

    void put(const std::string& role, const ArrayF32& a) {
        const std::string file = role + ".npy";
        write_npy(a, dir_ / file);
        roles_[role] = file;
    }
    void put(const std::string& role, const Matrix& m) { put(role, to_array(m)); }
    void put(const std::string& role, const Vector& v) { put(role, to_array(v)); }

private:
    fs::path dir_;
    OrderedJson& roles_;
};

class ArrayReader {
public:
    ArrayReader(const fs::path& dir, const Json& roles) : dir_(dir), roles_(roles) {}

    ArrayF32 raw(const std::string& role) const {
        if (!roles_.contains(role)) throw SchemaError("detector.json: missing array role \"" + role + "\"");
        return read_npy(dir_ / roles_.at(role).get<std::string>());
    }
    Matrix matrix(const std::string& role) const {
        const ArrayF32 a = raw(role);
        if (a.shape.size() != 2) throw ValidationError(role + ": expected a 2-D array");
        return to_matrix(a);
    }
    Vector vector(const std::string& role) const {
        const ArrayF32 a = raw(role);
        if (a.shape.size() != 1) throw ValidationError(role + ": expected a 1-D array");
        return to_vector(a);
    }

private:
    fs::path dir_;
    const Json& roles_;
};

}  // namespace

void save_detector(const FittedDetector& det, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    OrderedJson side;
    side["format"] = "oodkit-detector";
    side["version"] = kDetectorFormatVersion;
    side["method"] = std::string(to_string(det.method()));
    side["label"] = det.spec().label();
    side["spec"] = spec_to_json(det.spec());
    side["state"] = OrderedJson::object();
    side["arrays"] = OrderedJson::object();
    ArrayWriter out(dir, side["arrays"]);
    OrderedJson& scalars = side["state"];

    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, LogitState>) {
                out.put("head_weights", s.head.weights);
                out.put("head_bias", s.head.bias);
            } else if constexpr (std::is_same_v<T, AshState>) {
                out.put("head_weights", s.head.weights);
                out.put("head_bias", s.head.bias);
                scalars["prune_percent"] = s.prune_percent;
            } else if constexpr (std::is_same_v<T, DiceState>) {
                out.put("masked_weights", s.masked.weights);
                out.put("head_bias", s.masked.bias);
                out.put("mask", mask_to_array(s.mask));
                out.put("mean_feature", s.mean_feature);
                scalars["p"] = s.mask.p;
                scalars["mask_mode"] = std::string(to_string(s.mask.mode));
            } else if constexpr (std::is_same_v<T, MdsState>) {
                out.put("class_means", s.gaussians.means);
                out.put("precision", s.gaussians.precision);
                scalars["epsilon"] = s.gaussians.epsilon;
            } else if constexpr (std::is_same_v<T, RmdsState>) {
                out.put("class_means", s.gaussians.means);
                out.put("precision", s.gaussians.precision);
                out.put("background_mean", s.background.mean);
                out.put("background_precision", s.background.precision);
                scalars["epsilon"] = s.gaussians.epsilon;
                scalars["background_epsilon"] = s.background.epsilon;
            } else {
                out.put("bank", s.index.bank);
                scalars["k"] = s.k;
                scalars["normalized"] = s.index.normalized;
                scalars["subsample_fraction"] = s.index.subsample_fraction;
            }
        },
        det.state());

    if (const auto& pca = det.pca()) {
        out.put("pca_mean", pca->mean);
        out.put("pca_components", pca->components);
        out.put("pca_singular_values", pca->singular_values);
        scalars["pca_rank"] = pca->rank;
    }

    const fs::path sidecar = dir / "detector.json";
    std::ofstream f(sidecar, std::ios::trunc);
    if (!f) throw IoError("cannot write " + sidecar.string());
    f << side.dump(2) << '\n';
    if (!f) throw IoError("short write to " + sidecar.string());
}

FittedDetector load_detector(const fs::path& dir) {
    const fs::path sidecar = dir / "detector.json";
    std::ifstream f(sidecar);
    if (!f) throw IoError("cannot open " + sidecar.string());
    Json side;
    try {
        side = Json::parse(f);
    } catch (const Json::parse_error& e) {
        throw SchemaError(sidecar.string() + ": invalid JSON: " + e.what());
    }
    if (side.value("format", "") != "oodkit-detector") throw SchemaError(sidecar.string() + ": not a detector sidecar");
    if (side.value("version", 0) != kDetectorFormatVersion) throw SchemaError(sidecar.string() + ": unsupported version");
    if (!side.contains("spec") || !side.contains("arrays") || !side.contains("state")) {
        throw SchemaError(sidecar.string() + ": missing spec, state or arrays");
    }

    DetectorSpec spec = spec_from_json(side["spec"]);
    const Json& st = side["state"];
    const ArrayReader in(dir, side["arrays"]);
    auto scalar = [&](const char* key) -> const Json& {
        if (!st.contains(key)) throw SchemaError(sidecar.string() + ": missing state field \"" + key + "\"");
        return st.at(key);
    };

    auto head_from = [&](const char* weights_role) {
        ClassifierHead h{in.matrix(weights_role), in.vector("head_bias")};
        if (h.bias.size() != h.weights.cols()) throw ValidationError(sidecar.string() + ": head bias/weights mismatch");
        return h;
    };

    DetectorState state = [&]() -> DetectorState {
        switch (spec.method) {
            case Method::msp:
            case Method::energy: return LogitState{head_from("head_weights")};
            case Method::ash: return AshState{head_from("head_weights"), scalar("prune_percent").get<double>()};
            case Method::dice:
            case Method::dicecol: {
                DiceState s;
                s.masked = head_from("masked_weights");
                const ArrayF32 m = in.raw("mask");
                if (m.shape.size() != 2 || m.shape[0] != s.masked.feature_dim() || m.shape[1] != s.masked.num_classes()) {
                    throw ValidationError(sidecar.string() + ": mask shape does not match weights");
                }
                s.mask.mask.resize(static_cast<Eigen::Index>(m.shape[0]), static_cast<Eigen::Index>(m.shape[1]));
                for (std::size_t i = 0; i < m.data.size(); ++i) s.mask.mask.data()[i] = m.data[i] != 0.0f ? 1 : 0;
                s.mask.p = scalar("p").get<double>();
                s.mask.mode = scalar("mask_mode").get<std::string>() == "global" ? MaskMode::global : MaskMode::per_column;
                s.mean_feature = in.vector("mean_feature");
                return s;
            }
            case Method::mds: {
                GaussianByClass g{in.matrix("class_means"), in.matrix("precision"), scalar("epsilon").get<double>()};
                return MdsState(std::move(g));
            }
            case Method::rmds: {
                GaussianByClass g{in.matrix("class_means"), in.matrix("precision"), scalar("epsilon").get<double>()};
                BackgroundGaussian bg{in.vector("background_mean"), in.matrix("background_precision"),
                                      scalar("background_epsilon").get<double>()};
                return RmdsState(std::move(g), std::move(bg));
            }
            case Method::knn: {
                KnnState s;
                s.index.bank = in.matrix("bank");
                s.index.normalized = scalar("normalized").get<bool>();
                s.index.subsample_fraction = scalar("subsample_fraction").get<double>();
                s.k = scalar("k").get<std::size_t>();
                if (s.k < 1 || s.k > s.index.size()) throw ValidationError(sidecar.string() + ": k exceeds bank size");
                return s;
            }
        }
        throw SchemaError(sidecar.string() + ": unknown method");
    }();

    std::optional<PcaModel> pca;
    if (side["arrays"].contains("pca_components")) {
        PcaModel model;
        model.mean = in.vector("pca_mean");
        model.components = in.matrix("pca_components");
        model.singular_values = in.vector("pca_singular_values");
        model.rank = scalar("pca_rank").get<std::size_t>();
        if (model.mean.size() != model.components.cols()) throw ValidationError(sidecar.string() + ": PCA shape mismatch");
        pca = std::move(model);
    }
    return FittedDetector(std::move(spec), std::move(state), std::move(pca));
}

}  // namespace oodkit
