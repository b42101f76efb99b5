#include "advrobust/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "advrobust/rng.hpp"
#include "binio.hpp"
#include "json.hpp"

namespace advrobust {

std::string to_string(AttackKind kind) { return kind == AttackKind::kFgsm ? "fgsm" : "pgd"; }

std::string to_string(AlphaSchedule schedule) {
    switch (schedule) {
        case AlphaSchedule::kFixed: return "fixed";
        case AlphaSchedule::kEpsOver4: return "eps_over_4";
        case AlphaSchedule::kEpsOverIters: return "eps_over_iters";
    }
    return "fixed";
}

AttackKind attack_kind_from_string(const std::string& text) {
    if (text == "fgsm") return AttackKind::kFgsm;
    if (text == "pgd") return AttackKind::kPgd;
    throw std::invalid_argument("unknown attack kind '" + text + "' (expected fgsm or pgd)");
}

AlphaSchedule alpha_schedule_from_string(const std::string& text) {
    if (text == "fixed") return AlphaSchedule::kFixed;
    if (text == "eps_over_4") return AlphaSchedule::kEpsOver4;
    if (text == "eps_over_iters") return AlphaSchedule::kEpsOverIters;
    throw std::invalid_argument("unknown alpha schedule '" + text + "' (expected fixed, eps_over_4 or eps_over_iters)");
}

AttackConfig fgsm_config(double epsilon) {
    AttackConfig c;
    c.kind = AttackKind::kFgsm;
    c.epsilon = epsilon;
    return c;
}

AttackConfig pgd_config(double epsilon, AlphaSchedule schedule, std::size_t iterations, std::uint64_t rng_seed) {
    AttackConfig c;
    c.kind = AttackKind::kPgd;
    c.epsilon = epsilon;
    c.alpha_schedule = schedule;
    c.iterations = iterations;
    c.rng_seed = rng_seed;
    return c;
}

double resolve_alpha(const AttackConfig& config) {
    double alpha = 0.0;
    switch (config.alpha_schedule) {
        case AlphaSchedule::kFixed: alpha = config.alpha; break;
        case AlphaSchedule::kEpsOver4: alpha = config.epsilon / 4.0; break;
        case AlphaSchedule::kEpsOverIters:
            if (config.iterations == 0) throw std::invalid_argument("eps_over_iters needs iterations >= 1");
            alpha = config.epsilon / static_cast<double>(config.iterations);
            break;
    }
    if (!(alpha > 0.0)) throw std::invalid_argument("resolved PGD step size must be positive");
    return alpha;
}

void validate(const AttackConfig& config) {
    if (!(config.epsilon > 0.0) || config.epsilon > 1.0)
        throw std::invalid_argument("epsilon must lie in (0, 1]");
    if (config.kind == AttackKind::kPgd) {
        if (config.iterations == 0) throw std::invalid_argument("PGD iterations must be at least 1");
        resolve_alpha(config);
    }
}

std::string attack_label(const AttackConfig& config) {
    if (config.kind == AttackKind::kFgsm) return "fgsm";
    return "pgd-" + to_string(config.alpha_schedule) + "-" + std::to_string(config.iterations);
}

namespace {

void require_frozen(const Model& model) {
    if (!model.is_frozen())
        throw std::logic_error("attack: source model '" + model.spec().name + "' must be frozen");
}

void check_batch(const Model& model, const Tensor& x, std::span<const int> labels) {
    if (x.rank() != 4 || x.dim(0) != labels.size())
        throw ShapeError("attack: expected [N,C,H,W] with N = " + std::to_string(labels.size()) + ", got " +
                         shape_str(x.shape()));
    const auto& in = model.spec().input_shape;
    if (x.dim(1) != in.channels || x.dim(2) != in.height || x.dim(3) != in.width)
        throw ShapeError("attack: model '" + model.spec().name + "' expects " + std::to_string(in.channels) + "x" +
                         std::to_string(in.height) + "x" + std::to_string(in.width) + " inputs, got " +
                         shape_str(x.shape()));
}

double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> labels) {
    check_batch(model, x, labels);
    Tensor probe = x.clone();
    probe.set_requires_grad(true);
    Tape tape;
    Tensor logits = model.forward(probe, &tape);
    Tensor loss = softmax_cross_entropy(logits, labels, Reduction::kSum, &tape);
    tape.backward(loss);
    Tensor grad(x.shape());
    if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), grad.data().begin());
    return grad;
}

namespace {

GradientFn model_gradient(const Model& model) {
    return [&model](const Tensor& x, std::span<const int> labels) { return input_gradient(model, x, labels); };
}

}  // namespace

Tensor fgsm(const GradientFn& gradient, const Tensor& x, std::span<const int> labels, double epsilon) {
    if (epsilon < 0.0) throw std::invalid_argument("fgsm: epsilon must be nonnegative");
    const Tensor g = gradient(x, labels);
    if (g.shape() != x.shape()) throw ShapeError("fgsm: gradient shape differs from input");
    Tensor out(x.shape());
    auto o = out.data();
    const auto xs = x.data();
    const auto gs = g.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = clamp01(xs[i] + epsilon * sign(gs[i]));
    return out;
}

Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> labels, double epsilon) {
    require_frozen(model);
    check_batch(model, x, labels);
    return fgsm(model_gradient(model), x, labels, epsilon);
}

Tensor pgd(const GradientFn& gradient, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           std::size_t first_index, const PgdObserver& observer) {
    if (x.rank() < 1 || x.dim(0) == 0) throw ShapeError("pgd: empty batch");
    if (config.iterations == 0) throw std::invalid_argument("pgd: iterations must be at least 1");
    if (config.epsilon < 0.0) throw std::invalid_argument("pgd: epsilon must be nonnegative");
    const double eps = config.epsilon;
    const auto xs = x.data();
    if (eps == 0.0) return x.clone();
    const double alpha = resolve_alpha(config);

    const std::size_t n = x.dim(0);
    const std::size_t per = x.numel() / n;
    Tensor cur(x.shape());
    auto c = cur.data();
    for (std::size_t e = 0; e < n; ++e) {
        Rng rng(derive_seed(config.rng_seed, first_index + e));
        for (std::size_t k = e * per; k < (e + 1) * per; ++k) c[k] = clamp01(xs[k] + rng.uniform(-eps, eps));
    }
    if (observer) observer(0, cur);

    for (std::size_t it = 1; it <= config.iterations; ++it) {
        const Tensor g = gradient(cur, labels);
        if (g.shape() != x.shape()) throw ShapeError("pgd: gradient shape differs from input");
        const auto gs = g.data();
        for (std::size_t k = 0; k < c.size(); ++k) {
            const double stepped = c[k] + alpha * sign(gs[k]);
            c[k] = clamp01(std::clamp(stepped, xs[k] - eps, xs[k] + eps));
        }
        if (observer) observer(it, cur);
    }
    return cur;
}

Tensor pgd(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           std::size_t first_index, const PgdObserver& observer) {
    require_frozen(model);
    check_batch(model, x, labels);
    return pgd(model_gradient(model), x, labels, config, first_index, observer);
}

Tensor attack(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
              std::size_t first_index) {
    if (config.kind == AttackKind::kFgsm) return fgsm(model, x, labels, config.epsilon);
    return pgd(model, x, labels, config, first_index);
}

double linf_distance(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("linf_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    const auto as = a.data();
    const auto bs = b.data();
    for (std::size_t i = 0; i < as.size(); ++i) m = std::max(m, std::abs(as[i] - bs[i]));
    return m;
}

bool within_unit_range(const Tensor& x) {
    for (double v : x.data())
        if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
}

AdversarialSet generate_adversarial_set(const Model& source, const DatasetVariant& variant,
                                        const AttackConfig& config, std::size_t chunk) {
    validate(config);
    require_frozen(source);
    const auto& in = source.spec().input_shape;
    if (in.height != variant.image_size() || in.width != variant.image_size())
        throw ShapeError("source model '" + source.spec().name + "' expects " + std::to_string(in.height) +
                         "-pixel inputs, variant '" + variant.name + "' has " +
                         std::to_string(variant.image_size()));
    if (variant.splits.attack.empty()) throw std::invalid_argument("variant has an empty attack split");
    if (chunk == 0) chunk = 1;

    AdversarialSet set;
    set.source_model = source.spec().name;
    set.variant = variant.name;
    set.config = config;
    set.corpus_hash = corpus_hash(variant.images);
    set.indices = variant.splits.attack;
    const Batch clean = gather(variant, set.indices);
    set.labels = clean.labels;
    set.examples = Tensor(clean.images.shape());

    const std::size_t n = set.indices.size();
    const std::size_t per = clean.images.numel() / n;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t end = std::min(n, start + chunk);
        Shape s = clean.images.shape();
        s[0] = end - start;
        const auto first = clean.images.data().begin() + static_cast<std::ptrdiff_t>(start * per);
        const Tensor part(s, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - start) * per)));
        const std::span<const int> labels(set.labels.data() + start, end - start);
        const Tensor adv = attack(source, part, labels, config, start);
        std::copy(adv.data().begin(), adv.data().end(),
                  set.examples.data().begin() + static_cast<std::ptrdiff_t>(start * per));
    }
    return set;
}

namespace {

constexpr char kSetMagic[8] = {'A', 'D', 'V', 'R', 'A', 'S', 'E', 'T'};

std::string header_json(const AdversarialSet& set) {
    nlohmann::ordered_json j;
    j["source_model"] = set.source_model;
    j["variant"] = set.variant;
    j["attack"] = to_string(set.config.kind);
    j["epsilon"] = set.config.epsilon;
    j["alpha_schedule"] = to_string(set.config.alpha_schedule);
    j["alpha"] = set.config.alpha;
    j["iterations"] = set.config.iterations;
    j["rng_seed"] = set.config.rng_seed;
    j["corpus_hash"] = hex64(set.corpus_hash);
    return j.dump();
}

}  // namespace

void save(const AdversarialSet& set, const std::filesystem::path& path) {
    using namespace binio;
    std::ostringstream os(std::ios::binary);
    os.write(kSetMagic, 8);
    write_le<std::uint32_t>(os, kAdversarialSetVersion);
    write_string(os, header_json(set));
    write_le<std::uint64_t>(os, set.size());
    const auto& shape = set.examples.shape();
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) write_le<std::uint64_t>(os, d);
    for (std::size_t i = 0; i < set.size(); ++i) {
        write_le<std::uint64_t>(os, set.indices[i]);
        write_le<std::int32_t>(os, set.labels[i]);
    }
    // Doubles are stored as raw bit patterns so the round trip is exact.
    for (double v : set.examples.data()) write_le<double>(os, v);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write adversarial set " + path.string());
    const std::string bytes = os.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing adversarial set " + path.string());
}

AdversarialSet load_adversarial_set(const std::filesystem::path& path) {
    using namespace binio;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open adversarial set " + path.string());
    try {
        char magic[8];
        if (!in.read(magic, 8) || std::memcmp(magic, kSetMagic, 8) != 0) throw std::runtime_error("bad magic");
        const auto version = read_le<std::uint32_t>(in);
        if (version != kAdversarialSetVersion) throw std::runtime_error("unsupported version " + std::to_string(version));
        const auto j = nlohmann::json::parse(read_string(in));
        AdversarialSet set;
        set.source_model = j.at("source_model").get<std::string>();
        set.variant = j.at("variant").get<std::string>();
        set.config.kind = attack_kind_from_string(j.at("attack").get<std::string>());
        set.config.epsilon = j.at("epsilon").get<double>();
        set.config.alpha_schedule = alpha_schedule_from_string(j.at("alpha_schedule").get<std::string>());
        set.config.alpha = j.at("alpha").get<double>();
        set.config.iterations = j.at("iterations").get<std::size_t>();
        set.config.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        set.corpus_hash = std::stoull(j.at("corpus_hash").get<std::string>(), nullptr, 16);
        const auto n = read_le<std::uint64_t>(in);
        const auto rank = read_le<std::uint32_t>(in);
        if (rank != 4) throw std::runtime_error("expected rank-4 examples");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_le<std::uint64_t>(in));
        if (shape[0] != n) throw std::runtime_error("example count does not match header");
        for (std::uint64_t i = 0; i < n; ++i) {
            set.indices.push_back(read_le<std::uint64_t>(in));
            set.labels.push_back(read_le<std::int32_t>(in));
        }
        set.examples = Tensor(shape);
        for (double& v : set.examples.data()) v = read_le<double>(in);
        return set;
    } catch (const std::exception& e) {
        throw std::runtime_error("adversarial set " + path.string() + ": " + e.what());
    }
}

}  // namespace advrobust
