#include "advrobust/data.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "advrobust/rng.hpp"

namespace advrobust {

namespace {

constexpr std::size_t kChannels = 3;

double gaussian_blob(double dx, double dy, double sigma) { return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)); }

// Renders one sample. Coordinates are expressed in units of the 64-pixel
// reference grid so that the class signatures scale with resolution.
Tensor render(int label, std::size_t res, Rng& rng) {
    const double unit = static_cast<double>(res) / 64.0;
    const double base = rng.uniform(0.30, 0.40);
    double tint[kChannels];
    for (double& t : tint) t = rng.uniform(0.92, 1.08);

    // Smooth background texture shared by all classes.
    const double bg_fx = rng.uniform(0.5, 1.5) / (64.0 * unit), bg_fy = rng.uniform(0.5, 1.5) / (64.0 * unit);
    const double bg_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double bg_amp = rng.uniform(0.02, 0.05);

    std::vector<double> signal(res * res, 0.0);
    const double c = static_cast<double>(res - 1) / 2.0;
    if (label == 0) {
        const double sigma = rng.uniform(7.0, 10.0) * unit;
        const double cx = c + rng.uniform(-12.0, 12.0) * unit, cy = c + rng.uniform(-12.0, 12.0) * unit;
        const double amp = rng.uniform(0.25, 0.40);
        for (std::size_t y = 0; y < res; ++y)
            for (std::size_t x = 0; x < res; ++x)
                signal[y * res + x] = amp * gaussian_blob(static_cast<double>(x) - cx, static_cast<double>(y) - cy, sigma);
    } else if (label == 1) {
        const double period = rng.uniform(10.0, 16.0) * unit;
        const double theta = rng.uniform(-0.5, 0.5);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double amp = rng.uniform(0.10, 0.18);
        const double kx = std::sin(theta) * 2.0 * std::numbers::pi / period;
        const double ky = std::cos(theta) * 2.0 * std::numbers::pi / period;
        for (std::size_t y = 0; y < res; ++y)
            for (std::size_t x = 0; x < res; ++x)
                signal[y * res + x] =
                    amp * 0.5 * (1.0 + std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase));
    } else {
        const auto count = 4 + rng.below(4);
        for (std::uint64_t b = 0; b < count; ++b) {
            const double sigma = rng.uniform(2.0, 3.0) * unit;
            const double cx = rng.uniform(6.0, 58.0) * unit, cy = rng.uniform(6.0, 58.0) * unit;
            const double amp = rng.uniform(0.30, 0.45);
            for (std::size_t y = 0; y < res; ++y)
                for (std::size_t x = 0; x < res; ++x)
                    signal[y * res + x] +=
                        amp * gaussian_blob(static_cast<double>(x) - cx, static_cast<double>(y) - cy, sigma);
        }
    }

    Tensor pixels(Shape{kChannels, res, res});
    auto px = pixels.data();
    for (std::size_t ch = 0; ch < kChannels; ++ch)
        for (std::size_t y = 0; y < res; ++y)
            for (std::size_t x = 0; x < res; ++x) {
                const double bg = bg_amp * std::sin(bg_fx * 2.0 * std::numbers::pi * static_cast<double>(x) +
                                                    bg_fy * 2.0 * std::numbers::pi * static_cast<double>(y) + bg_phase);
                const double v = tint[ch] * (base + bg + signal[y * res + x]) + rng.normal(0.0, 0.03);
                px[(ch * res + y) * res + x] = std::clamp(v, 0.0, 1.0);
            }
    return pixels;
}

void require_square(const Tensor& t, const char* op) {
    if (!t.defined() || t.rank() != 3 || t.dim(1) != t.dim(2))
        throw ShapeError(std::string(op) + ": expected a square [C,H,W] image, got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

// Row-stochastic area-overlap weights for shrinking `in` samples to `out`.
struct AreaWeights {
    std::vector<std::size_t> first;
    std::vector<std::vector<double>> weights;
};

AreaWeights area_weights(std::size_t in, std::size_t out) {
    AreaWeights aw;
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double lo = static_cast<double>(i) * scale, hi = static_cast<double>(i + 1) * scale;
        const auto k0 = static_cast<std::size_t>(std::floor(lo));
        const auto k1 = std::min(in, static_cast<std::size_t>(std::ceil(hi)));
        std::vector<double> w;
        for (std::size_t k = k0; k < k1; ++k) {
            const double overlap = std::min(hi, static_cast<double>(k + 1)) - std::max(lo, static_cast<double>(k));
            w.push_back(overlap / scale);
        }
        aw.first.push_back(k0);
        aw.weights.push_back(std::move(w));
    }
    return aw;
}

}  // namespace

Corpus generate_corpus(std::size_t n_per_class, std::size_t resolution, std::uint64_t seed) {
    if (n_per_class == 0) throw std::invalid_argument("generate_corpus: n_per_class must be positive");
    if (resolution < 8) throw std::invalid_argument("generate_corpus: resolution must be at least 8");
    Corpus corpus;
    corpus.reserve(n_per_class * kNumClasses);
    for (int label = 0; label < kNumClasses; ++label)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label), i));
            corpus.push_back(LabeledImage{render(label, resolution, rng), label});
        }
    return corpus;
}

LabeledImage resize(const LabeledImage& image, std::size_t target) {
    require_square(image.pixels, "resize");
    const std::size_t channels = image.pixels.dim(0), in = image.pixels.dim(1);
    if (target < 4) throw std::invalid_argument("resize: target must be at least 4");
    if (target > in)
        throw std::invalid_argument("resize: upscaling " + std::to_string(in) + " -> " + std::to_string(target) +
                                    " is not supported");
    if (target == in) return LabeledImage{image.pixels.clone(), image.label};
    const AreaWeights aw = area_weights(in, target);
    Tensor out(Shape{channels, target, target});
    auto src = image.pixels.data();
    auto dst = out.data();
    std::vector<double> rows(target * in);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        const double* plane = src.data() + ch * in * in;
        // Vertical pass: target rows × in columns.
        for (std::size_t i = 0; i < target; ++i)
            for (std::size_t x = 0; x < in; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < aw.weights[i].size(); ++k)
                    acc += aw.weights[i][k] * plane[(aw.first[i] + k) * in + x];
                rows[i * in + x] = acc;
            }
        for (std::size_t i = 0; i < target; ++i)
            for (std::size_t j = 0; j < target; ++j) {
                double acc = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
                for (std::size_t k = 0; k < aw.weights[j].size(); ++k)
                    acc += aw.weights[j][k] * rows[i * in + aw.first[j] + k];
                // Clamp to the source window so rounding never leaves its range.
                for (std::size_t a = 0; a < aw.weights[i].size(); ++a)
                    for (std::size_t b = 0; b < aw.weights[j].size(); ++b) {
                        const double v = plane[(aw.first[i] + a) * in + aw.first[j] + b];
                        lo = std::min(lo, v);
                        hi = std::max(hi, v);
                    }
                dst[(ch * target + i) * target + j] = std::clamp(acc, lo, hi);
            }
    }
    return LabeledImage{out, image.label};
}

AugmentParams sample_augment(std::uint64_t seed) {
    Rng rng(seed);
    AugmentParams p;
    p.flip_horizontal = rng.bernoulli(0.5);
    p.flip_vertical = rng.bernoulli(0.5);
    p.quarter_turns = static_cast<int>(rng.below(4));
    return p;
}

LabeledImage apply_augment(const LabeledImage& image, const AugmentParams& params) {
    require_square(image.pixels, "augment");
    const std::size_t channels = image.pixels.dim(0), n = image.pixels.dim(1);
    auto src = image.pixels.data();
    Tensor out(image.pixels.shape());
    auto dst = out.data();
    const int k = ((params.quarter_turns % 4) + 4) % 4;
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                // Invert the rotation to find the flipped-image coordinate.
                std::size_t fr = r, fc = c;
                for (int t = 0; t < k; ++t) {
                    // Counter-clockwise quarter turn: new(r, c) = old(c, n-1-r).
                    const std::size_t pr = fc, pc = n - 1 - fr;
                    fr = pr;
                    fc = pc;
                }
                if (params.flip_vertical) fr = n - 1 - fr;
                if (params.flip_horizontal) fc = n - 1 - fc;
                dst[(ch * n + r) * n + c] = src[(ch * n + fr) * n + fc];
            }
    return LabeledImage{out, image.label};
}

LabeledImage augment(const LabeledImage& image, std::uint64_t seed) {
    return apply_augment(image, sample_augment(seed));
}

std::size_t resolution_pixels(Resolution r) { return r == Resolution::kFull ? kFullResolution : kShrunkResolution; }

std::string variant_name(Resolution resolution, bool augmented) {
    return std::string(resolution == Resolution::kFull ? "full" : "shrunk") + (augmented ? "-aug" : "-noaug");
}

std::pair<Resolution, bool> parse_variant_name(const std::string& name) {
    if (name == "full-aug") return {Resolution::kFull, true};
    if (name == "full-noaug") return {Resolution::kFull, false};
    if (name == "shrunk-aug") return {Resolution::kShrunk, true};
    if (name == "shrunk-noaug") return {Resolution::kShrunk, false};
    throw std::invalid_argument("unknown dataset variant '" + name + "' (expected full-aug, shrunk-aug, shrunk-noaug)");
}

std::vector<std::string> default_variant_names() { return {"full-aug", "shrunk-aug", "shrunk-noaug"}; }

Splits stratified_splits(std::span<const int> labels, std::uint64_t seed) {
    const std::size_t n = labels.size();
    int classes = 0;
    for (int l : labels) {
        if (l < 0) throw std::invalid_argument("stratified_splits: negative label");
        classes = std::max(classes, l + 1);
    }
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (!by_class[c].empty() && by_class[c].size() < 10)
            throw std::invalid_argument("corpus too small for stratification: class " + std::to_string(c) + " has " +
                                        std::to_string(by_class[c].size()) + " images (need at least 10)");
        Rng rng(derive_seed(seed, c));
        rng.shuffle(by_class[c].begin(), by_class[c].end());
    }
    if (n < 10) throw std::invalid_argument("corpus too small for stratification");

    // Interleave classes by within-class quantile so that every prefix of
    // the order holds each class in proportion (±1).
    struct Keyed {
        double key;
        std::size_t cls;
        std::size_t index;
    };
    std::vector<Keyed> order;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto m = static_cast<double>(by_class[c].size());
        for (std::size_t r = 0; r < by_class[c].size(); ++r)
            order.push_back({(static_cast<double>(r) + 0.5) / m, c, by_class[c][r]});
    }
    std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
        return a.key != b.key ? a.key < b.key : a.cls < b.cls;
    });
    const auto cut = [n](double f) { return static_cast<std::size_t>(std::llround(f * static_cast<double>(n))); };
    const std::size_t c1 = cut(0.6), c2 = cut(0.7), c3 = cut(0.9);
    Splits s;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dst = i < c1 ? s.train : i < c2 ? s.val : i < c3 ? s.test : s.attack;
        dst.push_back(order[i].index);
    }
    for (auto* part : {&s.train, &s.val, &s.test, &s.attack}) std::sort(part->begin(), part->end());
    return s;
}

DatasetVariant make_variant(const Corpus& corpus, Resolution resolution, bool augmented, std::uint64_t seed) {
    if (corpus.empty()) throw std::invalid_argument("make_variant: corpus is empty");
    DatasetVariant v;
    v.name = variant_name(resolution, augmented);
    v.resolution = resolution;
    v.augmented = augmented;
    v.seed = seed;
    const std::size_t target = resolution_pixels(resolution);
    std::vector<int> labels;
    v.images.reserve(corpus.size());
    for (const auto& img : corpus) {
        v.images.push_back(resize(img, target));
        labels.push_back(img.label);
    }
    v.splits = stratified_splits(labels, seed);
    return v;
}

Batch gather(std::span<const LabeledImage> images) {
    if (images.empty()) throw std::invalid_argument("gather: no images");
    const Shape& s = images.front().pixels.shape();
    Batch b;
    b.images = Tensor(Shape{images.size(), s[0], s[1], s[2]});
    const std::size_t stride = images.front().pixels.numel();
    auto dst = b.images.data();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].pixels.shape() != s) throw ShapeError("gather: images have different shapes");
        std::copy(images[i].pixels.data().begin(), images[i].pixels.data().end(),
                  dst.begin() + static_cast<std::ptrdiff_t>(i * stride));
        b.labels.push_back(images[i].label);
    }
    return b;
}

Batch gather(const DatasetVariant& variant, std::span<const std::size_t> indices) {
    std::vector<LabeledImage> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(variant.images.at(i));
    return gather(picked);
}

std::vector<Batch> epoch_batches(const DatasetVariant& variant, std::size_t epoch, std::size_t batch_size,
                                 std::uint64_t shuffle_seed) {
    if (batch_size == 0) throw std::invalid_argument("epoch_batches: batch_size must be positive");
    if (variant.splits.train.empty()) throw std::invalid_argument("epoch_batches: empty training split");
    std::vector<std::size_t> order = variant.splits.train;
    Rng rng(shuffle_seed);
    rng.shuffle(order.begin(), order.end());
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        std::vector<LabeledImage> picked;
        for (std::size_t i = start; i < end; ++i) {
            const auto& img = variant.images[order[i]];
            picked.push_back(variant.augmented ? augment(img, derive_seed(variant.seed, epoch, order[i])) : img);
        }
        batches.push_back(gather(picked));
    }
    return batches;
}

std::uint64_t corpus_hash(std::span<const LabeledImage> images) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& img : images) {
        feed(static_cast<std::uint64_t>(img.label));
        for (auto d : img.pixels.shape()) feed(d);
        for (double v : img.pixels.data()) feed(std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, value >>= 4) s[static_cast<std::size_t>(i)] = digits[value & 0xf];
    return s;
}

// ---------------------------------------------------------------------------
// PNG I/O

namespace {

struct PngImage {
    std::size_t width = 0, height = 0;
    std::vector<unsigned char> rgb;
};

PngImage read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    PngImage out;
    out.width = image.width;
    out.height = image.height;
    out.rgb.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor& pixels) {
    if (pixels.rank() != 3 || pixels.dim(0) != kChannels) throw ShapeError("write_png: expected [3,H,W] pixels");
    const std::size_t h = pixels.dim(1), w = pixels.dim(2);
    std::vector<unsigned char> rgb(h * w * kChannels);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < kChannels; ++ch)
                rgb[(y * w + x) * kChannels + ch] = static_cast<unsigned char>(
                    std::lround(std::clamp(pixels[(ch * h + y) * w + x], 0.0, 1.0) * 255.0));
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

Corpus load_image_folder(const std::filesystem::path& root, std::size_t resolution) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw std::runtime_error("image folder " + root.string() + " does not exist");
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::runtime_error("image folder " + root.string() + " has no class subdirectories");
    Corpus corpus;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
            auto ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
            if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            const PngImage png = read_png(file);
            const std::size_t side = std::min(png.width, png.height);
            const std::size_t x0 = (png.width - side) / 2, y0 = (png.height - side) / 2;
            Tensor pixels(Shape{kChannels, side, side});
            for (std::size_t ch = 0; ch < kChannels; ++ch)
                for (std::size_t y = 0; y < side; ++y)
                    for (std::size_t x = 0; x < side; ++x)
                        pixels[(ch * side + y) * side + x] =
                            png.rgb[((y0 + y) * png.width + x0 + x) * kChannels + ch] / 255.0;
            corpus.push_back(resize(LabeledImage{pixels, static_cast<int>(label)}, resolution));
        }
    }
    return corpus;
}

}  // namespace advrobust
