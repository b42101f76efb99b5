#include <cmath>
#include <filesystem>

#include "advrobust/attacks.hpp"
#include "advrobust/rng.hpp"
#include "doctest.h"
#include "support/logistic_toy.hpp"

using namespace advrobust;
using advrobust::testing::LogisticToy;

namespace {

Model frozen_model(const std::string& name, std::uint64_t seed) {
    Model m = Model::build(*registry_find(name, 20), seed);
    m.set_trainable(false);
    return m;
}

Batch probe_batch(std::size_t n, std::uint64_t seed) {
    Batch b;
    b.images = Tensor(Shape{n, 3, 20, 20});
    fill_uniform(b.images, 0.0, 1.0, seed);
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % 3));
    return b;
}

const DatasetVariant& small_variant() {
    static const DatasetVariant v = make_variant(generate_corpus(10, 24, 2), Resolution::kShrunk, false, 3);
    return v;
}

}  // namespace

TEST_CASE("alpha: schedules resolve to the published step sizes") {
    CHECK(resolve_alpha(pgd_config(0.03, AlphaSchedule::kEpsOver4, 20)) == 0.0075);
    CHECK(resolve_alpha(pgd_config(0.03, AlphaSchedule::kEpsOverIters, 10)) == 0.003);
    CHECK(resolve_alpha(pgd_config(0.03, AlphaSchedule::kEpsOverIters, 20)) == 0.0015);
    auto fixed = pgd_config(0.03, AlphaSchedule::kFixed, 5);
    fixed.alpha = 0.01;
    CHECK(resolve_alpha(fixed) == 0.01);
    fixed.alpha = 0.0;
    CHECK_THROWS_AS(resolve_alpha(fixed), std::invalid_argument);
    CHECK(std::lround(0.04 * 255.0) == 10);
}

TEST_CASE("config: validation, labels and names") {
    CHECK_NOTHROW(validate(fgsm_config(0.02)));
    CHECK_THROWS_AS(validate(fgsm_config(0.0)), std::invalid_argument);
    CHECK_THROWS_AS(validate(fgsm_config(1.5)), std::invalid_argument);
    CHECK_THROWS_AS(validate(pgd_config(0.03, AlphaSchedule::kEpsOver4, 0)), std::invalid_argument);
    CHECK(attack_label(fgsm_config(0.02)) == "fgsm");
    CHECK(attack_label(pgd_config(0.03, AlphaSchedule::kEpsOverIters, 20)) == "pgd-eps_over_iters-20");
    for (auto s : {AlphaSchedule::kFixed, AlphaSchedule::kEpsOver4, AlphaSchedule::kEpsOverIters})
        CHECK(alpha_schedule_from_string(to_string(s)) == s);
    CHECK(attack_kind_from_string("pgd") == AttackKind::kPgd);
    CHECK_THROWS_AS(attack_kind_from_string("cw"), std::invalid_argument);
}

TEST_CASE("projection: clip-then-clamp equals clamp-then-clip inside the unit box") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double x = rng.uniform(), eps = rng.uniform(0.0, 0.1), v = rng.uniform(-0.2, 1.2);
        const double a = std::clamp(std::clamp(v, x - eps, x + eps), 0.0, 1.0);
        const double b = std::clamp(std::clamp(v, 0.0, 1.0), x - eps, x + eps);
        REQUIRE(a == b);
    }
}

TEST_CASE("fgsm: zero budget is the identity") {
    const Model m = frozen_model("brainnet", 1);
    const Batch b = probe_batch(2, 4);
    const Tensor adv = fgsm(m, b.images, b.labels, 0.0);
    for (std::size_t i = 0; i < adv.numel(); ++i) CHECK(adv[i] == b.images[i]);
}

TEST_CASE("fgsm: interior pixels move by exactly epsilon along the gradient sign") {
    const Model m = frozen_model("brainnext_small", 2);
    const Batch b = probe_batch(3, 5);
    const double eps = 0.03;
    const Tensor g = input_gradient(m, b.images, b.labels);
    const Tensor adv = fgsm(m, b.images, b.labels, eps);
    std::size_t interior = 0;
    for (std::size_t i = 0; i < adv.numel(); ++i) {
        const double x = b.images[i];
        if (x < eps || x > 1.0 - eps) continue;
        ++interior;
        const double expected = g[i] > 0 ? x + eps : g[i] < 0 ? x - eps : x;
        REQUIRE(adv[i] == expected);
    }
    CHECK(interior > 0);
    CHECK(linf_distance(adv, b.images) <= eps + 1e-12);
    CHECK(within_unit_range(adv));
}

TEST_CASE("fgsm: epsilon 0.04 changes 8-bit intensities by at most 10 levels") {
    const Model m = frozen_model("dilation2", 3);
    Batch b = probe_batch(2, 6);
    for (double& v : b.images.data()) v = std::round(v * 255.0) / 255.0;
    const Tensor adv = fgsm(m, b.images, b.labels, 0.04);
    long worst = 0;
    for (std::size_t i = 0; i < adv.numel(); ++i)
        worst = std::max(worst, std::labs(std::lround(adv[i] * 255.0) - std::lround(b.images[i] * 255.0)));
    CHECK(worst == 10);
}

TEST_CASE("fgsm: loss rises on most examples for the white-box source") {
    const Model m = frozen_model("brainnet", 8);
    const Batch b = probe_batch(40, 9);
    const Tensor adv = fgsm(m, b.images, b.labels, 0.02);
    const auto before = per_example_cross_entropy(m.forward(b.images), b.labels);
    const auto after = per_example_cross_entropy(m.forward(adv), b.labels);
    std::size_t rose = 0;
    for (std::size_t i = 0; i < before.size(); ++i) rose += after[i] >= before[i] ? 1 : 0;
    CHECK(static_cast<double>(rose) >= 0.95 * static_cast<double>(before.size()));
}

TEST_CASE("pgd: zero budget is the identity") {
    const Model m = frozen_model("densenet_surrogate", 1);
    const Batch b = probe_batch(2, 7);
    const Tensor adv = pgd(m, b.images, b.labels, pgd_config(0.0, AlphaSchedule::kFixed, 5));
    for (std::size_t i = 0; i < adv.numel(); ++i) CHECK(adv[i] == b.images[i]);
}

TEST_CASE("pgd: every iterate stays in the budget and the unit range") {
    const Model m = frozen_model("brainnext_medium", 4);
    const Batch b = probe_batch(3, 8);
    const auto cfg = pgd_config(0.05, AlphaSchedule::kEpsOver4, 10, 11);
    std::size_t calls = 0;
    const Tensor adv = pgd(m, b.images, b.labels, cfg, 0, [&](std::size_t it, const Tensor& x) {
        CHECK(it == calls);
        ++calls;
        CHECK(linf_distance(x, b.images) <= cfg.epsilon + 1e-12);
        CHECK(within_unit_range(x));
    });
    CHECK(calls == 11);
    CHECK(linf_distance(adv, b.images) > 0.0);
}

TEST_CASE("pgd: deterministic, seed-sensitive and independent of batching") {
    const Model m = frozen_model("dilation3", 5);
    const Batch b = probe_batch(4, 10);
    const auto cfg = pgd_config(0.03, AlphaSchedule::kEpsOverIters, 10, 21);
    const Tensor a1 = pgd(m, b.images, b.labels, cfg);
    const Tensor a2 = pgd(m, b.images, b.labels, cfg);
    CHECK(linf_distance(a1, a2) == 0.0);
    auto other = cfg;
    other.rng_seed = 22;
    CHECK(linf_distance(a1, pgd(m, b.images, b.labels, other)) > 0.0);

    // Attack the last two examples alone, telling pgd where they sit.
    const std::size_t per = 3 * 20 * 20;
    Tensor tail(Shape{2, 3, 20, 20}, std::vector<double>(b.images.data().begin() + 2 * per, b.images.data().end()));
    const std::vector<int> tail_labels(b.labels.begin() + 2, b.labels.end());
    const Tensor t = pgd(m, tail, tail_labels, cfg, 2);
    for (std::size_t i = 0; i < 2 * per; ++i) REQUIRE(t[i] == a1[2 * per + i]);
}

TEST_CASE("attacks: require a frozen model of matching shape") {
    Model m = Model::build(*registry_find("brainnet", 20), 1);
    const Batch b = probe_batch(1, 1);
    CHECK_THROWS_AS(fgsm(m, b.images, b.labels, 0.03), std::logic_error);
    CHECK_THROWS_AS(pgd(m, b.images, b.labels, pgd_config(0.03, AlphaSchedule::kEpsOver4, 2)), std::logic_error);
    m.set_trainable(false);
    Tensor wrong(Shape{1, 3, 16, 16});
    CHECK_THROWS_AS(fgsm(m, wrong, b.labels, 0.03), ShapeError);
    CHECK_THROWS_AS(pgd(m, b.images, b.labels, pgd_config(0.03, AlphaSchedule::kEpsOver4, 0)), std::invalid_argument);
}

TEST_CASE("convex toy: PGD reaches the box optimum and beats FGSM") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const LogisticToy toy = LogisticToy::random(seed);
        const Tensor x = toy.input();
        const std::vector<int> y{toy.label};
        const double eps = 0.03;
        const Tensor p = pgd(toy.gradient(), x, y, pgd_config(eps, AlphaSchedule::kEpsOver4, 10, seed));
        const Tensor f = fgsm(toy.gradient(), x, y, eps);
        const double best = toy.grid_maximum(eps);
        CAPTURE(seed);
        CHECK(toy.loss(p) >= toy.loss(f) - 1e-12);
        CHECK(std::abs(toy.loss(p) - best) < 1e-3);
        CHECK(toy.loss(p) <= best + 1e-12);
    }
}

TEST_CASE("convex toy: taped gradient agrees with the closed form") {
    const LogisticToy toy = LogisticToy::random(17);
    const Tensor g = toy.gradient()(toy.input(), std::vector<int>{toy.label});
    double z = toy.b;
    for (int i = 0; i < 4; ++i) z += toy.w[i] * toy.x[i];
    const double sigma = 1.0 / (1.0 + std::exp(-z));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(g[i] - (sigma - toy.label) * toy.w[i]) < 1e-12);
}

TEST_CASE("adversarial set: covers the attack split and keeps the invariants") {
    const auto& v = small_variant();
    const Model m = frozen_model("brainnet", 6);
    for (const auto& cfg : {fgsm_config(0.05), pgd_config(0.03, AlphaSchedule::kEpsOver4, 3, 2)}) {
        const auto set = generate_adversarial_set(m, v, cfg, 2);
        REQUIRE(set.size() == v.splits.attack.size());
        CHECK(set.indices == v.splits.attack);
        CHECK(set.source_model == "brainnet");
        CHECK(set.corpus_hash == corpus_hash(v.images));
        const Batch clean = gather(v, v.splits.attack);
        CHECK(set.labels == clean.labels);
        CHECK(linf_distance(set.examples, clean.images) <= cfg.epsilon + 1e-12);
        CHECK(within_unit_range(set.examples));
        const auto again = generate_adversarial_set(m, v, cfg, 5);
        CHECK(linf_distance(set.examples, again.examples) == 0.0);
    }
}

TEST_CASE("adversarial set: resolution mismatch and unfrozen sources are rejected") {
    const auto& v = small_variant();
    Model full = Model::build(*registry_find("brainnet", 64), 1);
    full.set_trainable(false);
    CHECK_THROWS_AS(generate_adversarial_set(full, v, fgsm_config(0.03)), ShapeError);
    Model open = Model::build(*registry_find("brainnet", 20), 1);
    CHECK_THROWS_AS(generate_adversarial_set(open, v, fgsm_config(0.03)), std::logic_error);
}

TEST_CASE("adversarial set: container round-trips bit-exactly") {
    const auto& v = small_variant();
    const Model m = frozen_model("densenet_surrogate", 2);
    const auto set = generate_adversarial_set(m, v, pgd_config(0.04, AlphaSchedule::kEpsOverIters, 4, 9));
    const auto path = std::filesystem::temp_directory_path() / "advrobust_test_set.bin";
    save(set, path);
    const auto back = load_adversarial_set(path);
    CHECK(back.source_model == set.source_model);
    CHECK(back.variant == set.variant);
    CHECK(back.config == set.config);
    CHECK(back.corpus_hash == set.corpus_hash);
    CHECK(back.indices == set.indices);
    CHECK(back.labels == set.labels);
    REQUIRE(back.examples.shape() == set.examples.shape());
    for (std::size_t i = 0; i < set.examples.numel(); ++i) REQUIRE(back.examples[i] == set.examples[i]);
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_adversarial_set(path), std::runtime_error);
    std::filesystem::remove(path);
}
