#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "advrobust/data.hpp"
#include "advrobust/ops.hpp"
#include "advrobust/rng.hpp"
#include "doctest.h"

using namespace advrobust;

namespace {

double image_mean(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return s / static_cast<double>(t.numel());
}

std::vector<double> sorted_values(const Tensor& t) {
    std::vector<double> v(t.data().begin(), t.data().end());
    std::sort(v.begin(), v.end());
    return v;
}

bool same_pixels(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

LabeledImage random_image(std::size_t side, std::uint64_t seed) {
    Tensor t(Shape{3, side, side});
    fill_uniform(t, 0.0, 1.0, seed);
    return {t, 1};
}

}  // namespace

TEST_CASE("corpus: deterministic in seed, in range, balanced") {
    const auto a = generate_corpus(12, 32, 1);
    const auto b = generate_corpus(12, 32, 1);
    const auto c = generate_corpus(12, 32, 2);
    REQUIRE(a.size() == 36);
    CHECK(corpus_hash(a) == corpus_hash(b));
    CHECK(corpus_hash(a) != corpus_hash(c));
    int counts[3] = {0, 0, 0};
    for (const auto& img : a) {
        CHECK(img.pixels.shape() == Shape{3, 32, 32});
        counts[img.label]++;
        for (double v : img.pixels.data()) REQUIRE((v >= 0.0 && v <= 1.0));
    }
    CHECK(counts[0] == 12);
    CHECK(counts[1] == 12);
    CHECK(counts[2] == 12);
    CHECK_THROWS_AS(generate_corpus(0, 32, 1), std::invalid_argument);
}

TEST_CASE("corpus: class pixel means differ by more than three pooled standard errors") {
    const auto corpus = generate_corpus(100, 64, 1);
    std::vector<double> means[3];
    for (const auto& img : corpus) means[img.label].push_back(image_mean(img.pixels));
    auto stats = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::pair{m, ss / static_cast<double>(v.size() - 1)};
    };
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            const auto [mi, vi] = stats(means[i]);
            const auto [mj, vj] = stats(means[j]);
            const double se = std::sqrt(vi / static_cast<double>(means[i].size()) +
                                        vj / static_cast<double>(means[j].size()));
            CAPTURE(i);
            CAPTURE(j);
            CHECK(std::abs(mi - mj) > 3.0 * se);
        }
}

TEST_CASE("resize: constant image stays constant") {
    LabeledImage img{Tensor(Shape{3, 64, 64}, 0.7), 2};
    const auto out = resize(img, 20);
    CHECK(out.pixels.shape() == Shape{3, 20, 20});
    CHECK(out.label == 2);
    for (double v : out.pixels.data()) CHECK(std::abs(v - 0.7) < 1e-12);
}

TEST_CASE("resize: integer ratio averages blocks") {
    Tensor t(Shape{3, 64, 64});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 64; ++i)
            for (std::size_t j = 0; j < 64; ++j) t[(c * 64 + i) * 64 + j] = ((i + j) % 2) ? 1.0 : 0.0;
    const auto checker = resize({t, 0}, 32);
    for (double v : checker.pixels.data()) CHECK(std::abs(v - 0.5) < 1e-12);

    const auto img = random_image(64, 5);
    const auto out = resize(img, 32);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 32; ++i)
            for (std::size_t j = 0; j < 32; ++j) {
                double block = 0.0;
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) block += img.pixels[(c * 64 + 2 * i + di) * 64 + 2 * j + dj];
                CHECK(std::abs(out.pixels[(c * 32 + i) * 32 + j] - block / 4.0) < 1e-12);
            }
}

TEST_CASE("resize: non-integer ratio keeps the input range and mean") {
    const auto img = random_image(64, 9);
    const auto out = resize(img, 20);
    const auto [lo, hi] = std::minmax_element(img.pixels.data().begin(), img.pixels.data().end());
    for (double v : out.pixels.data()) {
        CHECK(v >= *lo);
        CHECK(v <= *hi);
    }
    // Area weights integrate to the same total over the whole image.
    CHECK(std::abs(image_mean(out.pixels) - image_mean(img.pixels)) < 1e-12);
}

TEST_CASE("resize: errors") {
    const auto img = random_image(20, 1);
    CHECK_THROWS_AS(resize(img, 40), std::invalid_argument);
    CHECK_THROWS_AS(resize(img, 3), std::invalid_argument);
    CHECK(same_pixels(resize(img, 20).pixels, img.pixels));
}

TEST_CASE("augment: identity parameters leave the image unchanged") {
    const auto img = random_image(8, 3);
    CHECK(same_pixels(apply_augment(img, {}).pixels, img.pixels));
}

TEST_CASE("augment: any seed permutes pixels and keeps the label") {
    const auto img = random_image(10, 4);
    const auto ref = sorted_values(img.pixels);
    std::set<std::tuple<bool, bool, int>> seen;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        const auto p = sample_augment(seed);
        seen.insert({p.flip_horizontal, p.flip_vertical, p.quarter_turns});
        CHECK((p.quarter_turns >= 0 && p.quarter_turns < 4));
        const auto out = augment(img, seed);
        CHECK(out.label == img.label);
        CHECK(sorted_values(out.pixels) == ref);
    }
    CHECK(seen.size() >= 12);
}

TEST_CASE("augment: half turn twice is the identity; quarter turn is counter-clockwise") {
    const auto img = random_image(6, 8);
    const AugmentParams half{false, false, 2};
    CHECK(same_pixels(apply_augment(apply_augment(img, half), half).pixels, img.pixels));
    const AugmentParams quarter{false, false, 1};
    auto r = img;
    for (int k = 0; k < 4; ++k) r = apply_augment(r, quarter);
    CHECK(same_pixels(r.pixels, img.pixels));
    const auto q = apply_augment(img, quarter);
    // The top-right corner moves to the top-left.
    CHECK(q.pixels[0] == img.pixels[5]);
    const auto hf = apply_augment(img, {true, false, 0});
    CHECK(hf.pixels[0] == img.pixels[5]);
    const auto vf = apply_augment(img, {false, true, 0});
    CHECK(vf.pixels[0] == img.pixels[30]);
}

TEST_CASE("augment: non-square input is rejected") {
    LabeledImage img{Tensor(Shape{3, 4, 6}), 0};
    CHECK_THROWS_AS(apply_augment(img, {true, false, 1}), ShapeError);
}

TEST_CASE("splits: 300 images give 180/30/60/30, disjoint and covering") {
    const auto corpus = generate_corpus(100, 32, 1);
    const auto v = make_variant(corpus, Resolution::kShrunk, true, 4);
    CHECK(v.splits.train.size() == 180);
    CHECK(v.splits.val.size() == 30);
    CHECK(v.splits.test.size() == 60);
    CHECK(v.splits.attack.size() == 30);
    std::vector<std::size_t> all;
    for (const auto* part : {&v.splits.train, &v.splits.val, &v.splits.test, &v.splits.attack})
        all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == 300);
    for (std::size_t i = 0; i < 300; ++i) CHECK(all[i] == i);
    CHECK(v.images.front().pixels.shape() == Shape{3, 20, 20});
}

TEST_CASE("splits: stratified within one sample per class for assorted sizes") {
    for (std::size_t per : {10u, 11u, 17u, 33u}) {
        std::vector<int> labels;
        for (int c = 0; c < 3; ++c) labels.insert(labels.end(), per, c);
        const auto s = stratified_splits(labels, per);
        const double fr[4] = {0.6, 0.1, 0.2, 0.1};
        const std::vector<std::size_t>* parts[4] = {&s.train, &s.val, &s.test, &s.attack};
        for (int k = 0; k < 4; ++k) {
            CHECK(std::abs(static_cast<double>(parts[k]->size()) - fr[k] * 3.0 * per) <= 1.0);
            for (int c = 0; c < 3; ++c) {
                const auto n = std::count_if(parts[k]->begin(), parts[k]->end(),
                                             [&](std::size_t i) { return labels[i] == c; });
                CHECK(std::abs(static_cast<double>(n) - fr[k] * per) <= 1.0);
            }
        }
    }
}

TEST_CASE("splits: deterministic in seed; small corpora rejected") {
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c) labels.insert(labels.end(), 20, c);
    const auto a = stratified_splits(labels, 5), b = stratified_splits(labels, 5), c = stratified_splits(labels, 6);
    CHECK(a.train == b.train);
    CHECK(a.attack == b.attack);
    CHECK(a.train != c.train);
    std::vector<int> tiny{0, 0, 0, 1, 1, 1, 2, 2, 2};
    CHECK_THROWS_AS(stratified_splits(tiny, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_variant(generate_corpus(5, 16, 1), Resolution::kShrunk, false, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_variant({}, Resolution::kShrunk, false, 1), std::invalid_argument);
}

TEST_CASE("epochs: non-augmented batches repeat exactly, augmented ones vary") {
    const auto corpus = generate_corpus(10, 24, 3);
    const auto plain = make_variant(corpus, Resolution::kShrunk, false, 2);
    const auto aug = make_variant(corpus, Resolution::kShrunk, true, 2);
    const auto p1 = epoch_batches(plain, 1, 7, 99), p2 = epoch_batches(plain, 2, 7, 99);
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(same_pixels(p1[i].images, p2[i].images));
        CHECK(p1[i].labels == p2[i].labels);
    }
    std::size_t total = 0;
    for (const auto& b : p1) total += b.labels.size();
    CHECK(total == plain.splits.train.size());

    const auto a1 = epoch_batches(aug, 1, 7, 99), a2 = epoch_batches(aug, 2, 7, 99);
    const auto a1again = epoch_batches(aug, 1, 7, 99);
    bool differs = false;
    for (std::size_t i = 0; i < a1.size(); ++i) {
        differs = differs || !same_pixels(a1[i].images, a2[i].images);
        CHECK(same_pixels(a1[i].images, a1again[i].images));
        CHECK(a1[i].labels == a2[i].labels);
    }
    CHECK(differs);
}

TEST_CASE("epochs: evaluation splits are never augmented") {
    const auto corpus = generate_corpus(10, 24, 3);
    const auto aug = make_variant(corpus, Resolution::kShrunk, true, 2);
    const auto batch = gather(aug, aug.splits.attack);
    const std::size_t per = 3 * 20 * 20;
    for (std::size_t k = 0; k < aug.splits.attack.size(); ++k) {
        const auto& src = aug.images[aug.splits.attack[k]].pixels;
        CHECK(std::equal(src.data().begin(), src.data().end(), batch.images.data().begin() + k * per));
        CHECK(batch.labels[k] == aug.images[aug.splits.attack[k]].label);
    }
}

TEST_CASE("variant names round-trip") {
    for (const auto& name : default_variant_names()) {
        const auto [res, aug] = parse_variant_name(name);
        CHECK(variant_name(res, aug) == name);
    }
    CHECK(default_variant_names().size() == 3);
    CHECK_THROWS_AS(parse_variant_name("tiny"), std::invalid_argument);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("image folder: PNG round trip through the loader") {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "advrobust_test_folder";
    fs::remove_all(root);
    const auto corpus = generate_corpus(2, 16, 5);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const fs::path dir = root / ("class" + std::to_string(corpus[i].label));
        fs::create_directories(dir);
        write_png(dir / ("img" + std::to_string(i) + ".png"), corpus[i].pixels);
    }
    const auto loaded = load_image_folder(root, 16);
    REQUIRE(loaded.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(loaded[i].label == corpus[i].label);
        for (std::size_t k = 0; k < corpus[i].pixels.numel(); ++k)
            CHECK(std::abs(loaded[i].pixels[k] - corpus[i].pixels[k]) <= 0.5 / 255.0 + 1e-12);
    }
    const auto small = load_image_folder(root, 8);
    CHECK(small.front().pixels.shape() == Shape{3, 8, 8});
    fs::remove_all(root);
    CHECK_THROWS(load_image_folder(root, 16));
}
