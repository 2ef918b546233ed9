#include "oodkit/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "oodkit/array_store.hpp"
#include "oodkit/detector_io.hpp"
#include "oodkit/error.hpp"
#include "oodkit/parallel.hpp"
#include "oodkit/synth.hpp"

namespace oodkit {

namespace fs = std::filesystem;

namespace {

std::string_view format_name(ReportFormat f) {
    switch (f) {
        case ReportFormat::csv: return "csv";
        case ReportFormat::markdown: return "markdown";
        case ReportFormat::json: return "json";
    }
    return "markdown";
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.is_absolute() || base.empty()) return p;
    return base / p;
}

// Flags shared by `fit` and `eval`; applied to every --method given on the
// command line.
struct HyperFlags {
    std::vector<std::string> methods;
    std::optional<double> p;
    std::optional<double> prune_percent;
    std::optional<std::size_t> k;
    std::optional<std::size_t> pca_components;
    bool normalize = true;
    CLI::Option* normalize_opt = nullptr;
    std::optional<double> subsample;
    std::optional<double> epsilon;
    std::optional<double> relative_epsilon;
    std::optional<std::string> energy_form;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;

    void add_to(CLI::App& app) {
        app.add_option("--p", p, "DICE / DICE-COL sparsity percent (default 90)");
        app.add_option("--prune-percent", prune_percent, "ASH pruning percent (default 90)");
        app.add_option("--k", k, "KNN neighbour rank");
        app.add_option("--pca-components", pca_components, "components for the -pca variants (default 128)");
        normalize_opt = app.add_flag("--normalize,!--no-normalize", normalize, "L2-normalize KNN embeddings");
        app.add_option("--subsample", subsample, "KNN memory-bank fraction in (0, 1]");
        app.add_option("--epsilon", epsilon, "absolute covariance ridge for MDS / RMDS");
        app.add_option("--relative-epsilon", relative_epsilon, "ridge as a fraction of trace / dim (default 1e-6)");
        app.add_option("--energy-form", energy_form, "log_sum_exp or printed")
            ->check(CLI::IsMember({"log_sum_exp", "printed"}));
        seed_opt = app.add_option("--seed", seed, "seed for every random choice (default 0)");
    }

    std::vector<DetectorSpec> specs() const {
        std::vector<DetectorSpec> out;
        for (const auto& m : methods) {
            DetectorSpec s = parse_detector_spec(m);
            if (p) s.p = *p;
            if (prune_percent) s.prune_percent = *prune_percent;
            if (k) s.k = *k;
            if (pca_components) s.pca_components = *pca_components;
            if (normalize_opt && normalize_opt->count() > 0) s.normalize = normalize;
            if (subsample) s.subsample_fraction = *subsample;
            if (epsilon) s.ridge.absolute = *epsilon;
            if (relative_epsilon) s.ridge.relative = *relative_epsilon;
            if (energy_form) s.energy_form = parse_energy_form(*energy_form);
            s.seed = seed;
            s.validate();
            out.push_back(std::move(s));
        }
        return out;
    }
};

class UsageError : public Error {
public:
    using Error::Error;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
    SynthSpec spec;
    std::string layout = "orthant";
    std::optional<double> near_shift;
    std::optional<double> far_shift;
    bool adversarial = false;
    double p = 90.0;
    fs::path out;
};

void add_synth(CLI::App& app, SynthArgs& a) {
    app.add_option("--seed", a.spec.seed, "generator seed (default 0)");
    app.add_option("--dim", a.spec.dim, "embedding dimension (default 16)");
    app.add_option("--classes", a.spec.classes, "number of ID classes (default 4)");
    app.add_option("--per-class", a.spec.per_class, "id_train rows per class (default 500)");
    app.add_option("--test-per-class", a.spec.test_per_class, "id_test rows per class (default 250)");
    app.add_option("--separation", a.spec.separation, "norm of each class mean (default 20)");
    app.add_option("--noise", a.spec.noise, "isotropic noise std (default 1)");
    app.add_option("--logit-scale", a.spec.logit_scale, "head target scale (default 10)");
    app.add_option("--layout", a.layout, "orthant or line")->check(CLI::IsMember({"orthant", "line"}));
    app.add_option("--near-shift", a.near_shift, "shift of the near OOD set in noise units (default 1)");
    app.add_option("--far-shift", a.far_shift, "shift of the far OOD set in noise units (default 20)");
    app.add_flag("--adversarial", a.adversarial, "build a head whose global DICE mask zeroes one class");
    app.add_option("--adversarial-p", a.p, "sparsity the adversarial head targets (default 90)");
    app.add_option("--out", a.out, "bundle directory")->required();
}

int cmd_synth(SynthArgs& a, std::ostream& out) {
    a.spec.layout = parse_layout(a.layout);
    for (auto& r : a.spec.ood) {
        if (r.group == OodGroup::near && a.near_shift) r.shift = *a.near_shift;
        if (r.group == OodGroup::far && a.far_shift) r.shift = *a.far_shift;
    }
    try {
        a.spec.validate();
    } catch (const ArgumentError& e) {
        throw UsageError(e.what());
    }
    if (a.adversarial) {
        const GeneratedAdversarial g = generate_adversarial_head(a.spec, a.out, a.p);
        out << g.manifest.string() << "\n";
    } else {
        out << generate_bundle(a.spec, a.out).string() << "\n";
    }
    return kExitOk;
}

// --- fit -------------------------------------------------------------------

struct FitArgs {
    fs::path manifest;
    HyperFlags hyper;
    fs::path out = "detectors";
};

void add_fit(CLI::App& app, FitArgs& a) {
    app.add_option("--manifest", a.manifest, "bundle manifest.json")->required();
    app.add_option("--method", a.hyper.methods, "detector to fit; repeatable")->required();
    a.hyper.add_to(app);
    app.add_option("--out", a.out, "parent directory for detector directories (default ./detectors)");
}

int cmd_fit(FitArgs& a, std::ostream& out) {
    std::vector<DetectorSpec> specs;
    try {
        specs = a.hyper.specs();
    } catch (const ArgumentError& e) {
        throw UsageError(e.what());
    }
    const EmbeddingBundle bundle = load_bundle(a.manifest);
    std::vector<std::pair<fs::path, FittedDetector>> fitted;
    for (const auto& s : specs) fitted.emplace_back(a.out / s.label(), fit_detector(s, bundle));
    for (const auto& [dir, det] : fitted) {
        save_detector(det, dir);
        out << dir.string() << "\n";
    }
    return kExitOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
    std::vector<fs::path> manifests;
    HyperFlags hyper;
    std::optional<fs::path> config;
    std::optional<std::string> format;
    std::optional<fs::path> out;
    std::optional<double> tpr;
    std::optional<std::size_t> threads;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    app.add_option("--manifest", a.manifests, "bundle manifest.json; repeatable");
    app.add_option("--method", a.hyper.methods, "detector to evaluate; repeatable");
    a.hyper.add_to(app);
    app.add_option("--config", a.config, "run configuration JSON");
    app.add_option("--format", a.format, "csv, markdown or json (default markdown)")
        ->check(CLI::IsMember({"csv", "markdown", "json"}));
    app.add_option("--out", a.out, "report file (default stdout)");
    app.add_option("--tpr", a.tpr, "ID acceptance rate for the FPR threshold (default 0.95)");
    app.add_option("--threads", a.threads, "worker threads (default OODKIT_THREADS or all cores)");
}

RunConfig build_run_config(const EvalArgs& a) {
    RunConfig cfg;
    if (a.config) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_text(*a.config));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(a.config->string() + ": " + e.what());
        }
        cfg = run_config_from_json(j, a.config->parent_path());
    }
    if (a.hyper.seed_opt->count() > 0) {
        cfg.seed = a.hyper.seed;
        for (auto& s : cfg.detectors) s.seed = cfg.seed;
    }
    HyperFlags flags = a.hyper;
    flags.seed = cfg.seed;
    for (auto& s : flags.specs()) cfg.detectors.push_back(std::move(s));
    for (const auto& m : a.manifests) cfg.manifests.push_back(m);
    if (a.format) cfg.format = parse_report_format(*a.format);
    if (a.out) cfg.out = *a.out;
    if (a.tpr) cfg.tpr = *a.tpr;
    if (a.threads) cfg.threads = *a.threads;
    cfg.validate();
    return cfg;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    RunConfig cfg;
    try {
        cfg = build_run_config(a);
    } catch (const ArgumentError& e) {
        throw UsageError(e.what());
    } catch (const SchemaError& e) {
        throw UsageError(e.what());
    }
    std::vector<EmbeddingBundle> bundles;
    bundles.reserve(cfg.manifests.size());
    for (const auto& m : cfg.manifests) bundles.push_back(load_bundle(m));
    BenchmarkConfig bc;
    bc.tpr = cfg.tpr;
    bc.threads = cfg.threads ? cfg.threads : default_thread_count();
    const EvalReport report = run_benchmark(bundles, cfg.detectors, bc);
    const std::string text = render_report(report, cfg.format);
    if (cfg.out) {
        write_text(*cfg.out, text);
    } else {
        out << text;
    }
    return kExitOk;
}

}  // namespace

void RunConfig::validate() const {
    if (manifests.empty()) throw ArgumentError("run config: no manifests");
    if (detectors.empty()) throw ArgumentError("run config: no detectors");
    if (!(tpr > 0.0 && tpr <= 1.0)) throw ArgumentError("run config: tpr must lie in (0, 1]");
    for (const auto& d : detectors) d.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw SchemaError("run config: expected a JSON object");
    static const std::vector<std::string> known{"manifests", "detectors", "format", "seed", "tpr", "out", "threads"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw SchemaError("run config: unknown key '" + key + "'");
        }
    }
    RunConfig cfg;
    try {
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("tpr")) cfg.tpr = j.at("tpr").get<double>();
        if (j.contains("threads")) cfg.threads = j.at("threads").get<std::size_t>();
        if (j.contains("format")) cfg.format = parse_report_format(j.at("format").get<std::string>());
        if (j.contains("out")) cfg.out = resolve(j.at("out").get<std::string>(), base_dir);
        if (j.contains("manifests")) {
            const auto& m = j.at("manifests");
            if (m.is_string()) {
                cfg.manifests.push_back(resolve(m.get<std::string>(), base_dir));
            } else {
                for (const auto& e : m) cfg.manifests.push_back(resolve(e.get<std::string>(), base_dir));
            }
        }
        if (j.contains("detectors")) {
            for (const auto& e : j.at("detectors")) {
                DetectorSpec s;
                if (e.is_string()) {
                    s = parse_detector_spec(e.get<std::string>());
                    s.seed = cfg.seed;
                } else {
                    s = spec_from_json(e);
                    if (!e.contains("seed")) s.seed = cfg.seed;
                }
                cfg.detectors.push_back(std::move(s));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("run config: ") + e.what());
    }
    return cfg;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& config) {
    nlohmann::ordered_json j;
    j["manifests"] = nlohmann::ordered_json::array();
    for (const auto& m : config.manifests) j["manifests"].push_back(m.string());
    j["detectors"] = nlohmann::ordered_json::array();
    for (const auto& d : config.detectors) j["detectors"].push_back(spec_to_json(d));
    j["format"] = format_name(config.format);
    j["seed"] = config.seed;
    j["tpr"] = config.tpr;
    if (config.out) j["out"] = config.out->string();
    if (config.threads) j["threads"] = config.threads;
    return j;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"oodkit: post-hoc OOD detectors on embedding bundles", "oodkit"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    FitArgs fit_args;
    EvalArgs eval_args;
    CLI::App* synth = app.add_subcommand("synth", "write a synthetic embedding bundle");
    CLI::App* fit = app.add_subcommand("fit", "fit detectors on a bundle and save them");
    CLI::App* eval = app.add_subcommand("eval", "benchmark detectors over one or more bundles");
    add_synth(*synth, synth_args);
    add_fit(*fit, fit_args);
    add_eval(*eval, eval_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, err, err);
        return kExitUsage;
    }

    CLI::App* active = app.get_subcommands().front();
    try {
        if (active == synth) return cmd_synth(synth_args, out);
        if (active == fit) return cmd_fit(fit_args, out);
        return cmd_eval(eval_args, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << active->help();
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"oodkit"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace oodkit
