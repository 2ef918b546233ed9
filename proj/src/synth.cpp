#include "oodkit/synth.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "oodkit/detectors.hpp"
#include "oodkit/error.hpp"
#include "oodkit/random.hpp"

namespace oodkit {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDirectionStream = 0;
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kTestStream = 2;
constexpr std::uint64_t kFirstOodStream = 3;
constexpr std::uint64_t kAdversarialStream = 0x616476;

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Matrix rounded(Matrix m) {
    m = m.unaryExpr(&round_f32);
    return m;
}

Vector random_unit(Rng& rng, std::size_t d, bool non_negative) {
    Vector v(static_cast<Eigen::Index>(d));
    do {
        for (auto& x : v) x = non_negative ? std::abs(rng.normal()) : rng.normal();
    } while (v.norm() == 0.0);
    return v / v.norm();
}

// Rows cycle through the classes: row i belongs to class i % C.
Matrix sample_classes(const Matrix& means, std::size_t per_class, double noise, Rng& rng, std::vector<int>* labels) {
    const auto c_count = static_cast<std::size_t>(means.rows());
    const std::size_t n = per_class * c_count;
    Matrix x(static_cast<Eigen::Index>(n), means.cols());
    if (labels) labels->resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i % c_count);
        for (Eigen::Index j = 0; j < means.cols(); ++j) x(i, j) = means(c, j) + noise * rng.normal();
        if (labels) (*labels)[i] = static_cast<int>(c);
    }
    return x;
}

Matrix sample_ood(const Matrix& means, const OodRecipe& recipe, std::size_t count, double noise, Rng& rng) {
    const auto c_count = static_cast<std::size_t>(means.rows());
    const auto d = means.cols();
    Matrix x(static_cast<Eigen::Index>(count), d);
    for (std::size_t i = 0; i < count; ++i) {
        const auto c = static_cast<Eigen::Index>(i % c_count);
        RowVector base = means.row(c);
        const double norm = base.norm();
        if (norm > 0.0) base -= (recipe.shift * noise / norm) * means.row(c);
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(recipe.translate.size()); ++j) base[j] += recipe.translate[j];
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = base[j] + recipe.scale * noise * rng.normal();
    }
    return x;
}

ClassifierHead least_squares_head(const Matrix& x, std::span<const int> labels, std::size_t classes, double scale) {
    const auto n = x.rows();
    const auto d = x.cols();
    Eigen::MatrixXd a(n, d + 1);
    a.leftCols(d) = x;
    a.col(d).setOnes();
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(classes));
    for (Eigen::Index i = 0; i < n; ++i) targets(i, labels[i]) = scale;
    const Eigen::MatrixXd coef = a.colPivHouseholderQr().solve(targets);
    ClassifierHead head;
    head.weights = rounded(coef.topRows(d));
    head.bias = coef.row(d).transpose().unaryExpr(&round_f32);
    return head;
}

EmbeddingBundle assemble(const SynthSpec& spec, const Matrix& means) {
    EmbeddingBundle b;
    b.feature_dim = spec.dim;
    b.num_classes = spec.classes;

    Rng train_rng(spec.seed, kTrainStream);
    std::vector<int> train_labels;
    b.id_train.features = rounded(sample_classes(means, spec.per_class, spec.noise, train_rng, &train_labels));
    b.id_train.labels = std::move(train_labels);

    Rng test_rng(spec.seed, kTestStream);
    std::vector<int> test_labels;
    b.id_test.features = rounded(sample_classes(means, spec.test_per_class, spec.noise, test_rng, &test_labels));
    b.id_test.labels = std::move(test_labels);

    for (std::size_t j = 0; j < spec.ood.size(); ++j) {
        const OodRecipe& r = spec.ood[j];
        Rng rng(spec.seed, kFirstOodStream + j);
        const std::size_t count = r.count ? r.count : spec.test_per_class * spec.classes;
        b.ood.push_back(OodSet{r.name, r.group, rounded(sample_ood(means, r, count, spec.noise, rng))});
    }
    return b;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

std::string_view to_string(SynthLayout layout) { return layout == SynthLayout::orthant ? "orthant" : "line"; }

SynthLayout parse_layout(std::string_view text) {
    if (text == "orthant") return SynthLayout::orthant;
    if (text == "line") return SynthLayout::line;
    throw ArgumentError("unknown layout '" + std::string(text) + "'");
}

std::vector<OodRecipe> default_ood_recipes() {
    return {
        OodRecipe{"near-shift1", OodGroup::near, 1.0, {}, 1.0, 0},
        OodRecipe{"far-shift20", OodGroup::far, 20.0, {}, 1.0, 0},
    };
}

void SynthSpec::validate() const {
    if (dim < 2) throw ArgumentError("synth: dim must be >= 2");
    if (classes < 2) throw ArgumentError("synth: classes must be >= 2");
    if (!(separation > 0.0)) throw ArgumentError("synth: separation must be > 0");
    if (!(noise > 0.0)) throw ArgumentError("synth: noise must be > 0");
    if (!(logit_scale > 0.0)) throw ArgumentError("synth: logit_scale must be > 0");
    if (per_class == 0 || test_per_class == 0) throw ArgumentError("synth: per-class sample counts must be positive");
    for (const auto& r : ood) {
        if (r.name.empty()) throw ArgumentError("synth: OOD recipe without a name");
        if (!r.translate.empty() && r.translate.size() != dim) {
            throw ArgumentError("synth: translate vector of '" + r.name + "' must have dim entries");
        }
        if (!(r.scale >= 0.0)) throw ArgumentError("synth: scale of '" + r.name + "' must be non-negative");
    }
}

EmbeddingBundle synthesize(const SynthSpec& spec) {
    spec.validate();
    Rng dir_rng(spec.seed, kDirectionStream);
    Matrix means(static_cast<Eigen::Index>(spec.classes), static_cast<Eigen::Index>(spec.dim));
    if (spec.layout == SynthLayout::orthant) {
        for (std::size_t c = 0; c < spec.classes; ++c) {
            means.row(c) = spec.separation * random_unit(dir_rng, spec.dim, true).transpose();
        }
    } else {
        const Vector v = random_unit(dir_rng, spec.dim, false);
        for (std::size_t c = 0; c < spec.classes; ++c) {
            means.row(c) = static_cast<double>(c + 1) * spec.separation * v.transpose();
        }
    }
    EmbeddingBundle b = assemble(spec, means);
    b.head = least_squares_head(b.id_train.features, *b.id_train.labels, spec.classes, spec.logit_scale);
    validate_bundle(b);
    return b;
}

fs::path generate_bundle(const SynthSpec& spec, const fs::path& dir) { return save_bundle(synthesize(spec), dir); }

AdversarialBundle synthesize_adversarial(const SynthSpec& spec, double p) {
    spec.validate();
    if (spec.classes < 3) throw ArgumentError("adversarial head needs at least 3 classes");
    if (!(p >= 0.0 && p < 100.0)) throw ArgumentError("adversarial head: p outside [0, 100)");
    const std::size_t d = spec.dim;
    const std::size_t c_count = spec.classes;
    const std::size_t total = d * c_count;
    const std::size_t kept = total - percent_count(p, total);
    const std::size_t others = c_count - 1;
    const std::size_t support = (kept + others - 1) / others;
    if (support == 0 || support * others > d || support >= d) {
        throw GeneratorError("adversarial head: dim " + std::to_string(d) + " cannot hold " + std::to_string(others) +
                             " disjoint supports of size " + std::to_string(support));
    }

    Rng rng(spec.seed, kAdversarialStream);
    AdversarialBundle out;
    out.p = p;
    out.victim_class = static_cast<std::size_t>(rng.below(c_count));
    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = d; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

    Matrix directions = Matrix::Zero(static_cast<Eigen::Index>(c_count), static_cast<Eigen::Index>(d));
    std::size_t block = 0;
    for (std::size_t c = 0; c < c_count; ++c) {
        if (c == out.victim_class) {
            directions.row(c).setConstant(1.0 / std::sqrt(static_cast<double>(d)));
            continue;
        }
        for (std::size_t i = 0; i < support; ++i) {
            directions(c, perm[block * support + i]) = 1.0 / std::sqrt(static_cast<double>(support));
        }
        ++block;
    }
    const Matrix means = spec.separation * directions;

    out.bundle = assemble(spec, means);
    // Matched-filter head: each class logit peaks at logit_scale on its own mean.
    out.bundle.head.weights = rounded((spec.logit_scale / spec.separation) * directions.transpose());
    out.bundle.head.bias = Vector::Zero(static_cast<Eigen::Index>(c_count));
    validate_bundle(out.bundle);

    const FittedDetector dice = dice_fit(out.bundle.id_train.features, out.bundle.head, p);
    const auto victim = static_cast<Eigen::Index>(out.victim_class);
    if (dice.as<DiceState>().mask.ones_in_column(victim) != 0) {
        throw GeneratorError("adversarial head: global DICE mask kept " +
                             std::to_string(dice.as<DiceState>().mask.ones_in_column(victim)) +
                             " weights of the victim column");
    }
    const FittedDetector col = dicecol_fit(out.bundle.id_train.features, out.bundle.head, p);
    if (col.as<DiceState>().mask.ones_in_column(victim) != d - percent_count(p, d)) {
        throw GeneratorError("adversarial head: per-column mask cardinality check failed");
    }
    return out;
}

GeneratedAdversarial generate_adversarial_head(const SynthSpec& spec, const fs::path& dir, double p) {
    const AdversarialBundle adv = synthesize_adversarial(spec, p);
    GeneratedAdversarial out;
    out.manifest = save_bundle(adv.bundle, dir);
    out.victim_class = adv.victim_class;
    nlohmann::ordered_json marker;
    marker["victim_class"] = adv.victim_class;
    marker["p"] = adv.p;
    marker["mask_mode"] = "global";
    write_text(dir / "adversarial.json", marker.dump(2) + "\n");
    return out;
}

double oracle_auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw ArgumentError("oracle_auroc: empty score set");
    double wins = 0.0;
    for (double a : id_scores) {
        for (double b : ood_scores) {
            if (a > b) wins += 1.0;
            else if (a == b) wins += 0.5;
        }
    }
    return wins / (static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

}  // namespace oodkit
