#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advrobust/tensor.hpp"

namespace advrobust {

inline constexpr int kNumClasses = 3;
inline constexpr std::size_t kFullResolution = 64;
inline constexpr std::size_t kShrunkResolution = 20;

/// pixels [3,H,W] in [0,1]; label in {0,1,2}.
struct LabeledImage {
    Tensor pixels;
    int label = 0;
};

using Corpus = std::vector<LabeledImage>;

/// Procedural three-class corpus: one large blob (0), an oriented grating
/// (1), a scatter of small blobs (2), each over a jittered textured
/// background. Class-major order; deterministic in `seed`.
Corpus generate_corpus(std::size_t n_per_class, std::size_t resolution, std::uint64_t seed);

/// Loads one subdirectory per class (sorted by name) of 8-bit RGB PNGs,
/// center-crops to square and area-resizes to `resolution`.
Corpus load_image_folder(const std::filesystem::path& root, std::size_t resolution);

/// Writes pixels (clamped to [0,1], scaled by 255) as an 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const Tensor& pixels);

/// Area-average downsampling to target×target. Only shrinking is supported.
LabeledImage resize(const LabeledImage& image, std::size_t target);

struct AugmentParams {
    bool flip_horizontal = false;
    bool flip_vertical = false;
    int quarter_turns = 0;  // counter-clockwise rotation by 90° × k
};

AugmentParams sample_augment(std::uint64_t seed);
/// Flips first (horizontal, then vertical), then rotates.
LabeledImage apply_augment(const LabeledImage& image, const AugmentParams& params);
LabeledImage augment(const LabeledImage& image, std::uint64_t seed);

enum class Resolution { kFull, kShrunk };

std::size_t resolution_pixels(Resolution r);

struct Splits {
    std::vector<std::size_t> train, val, test, attack;
};

/// One of the three dataset variants over a corpus.
struct DatasetVariant {
    std::string name;  // full-aug | shrunk-aug | shrunk-noaug (or custom)
    Resolution resolution = Resolution::kFull;
    bool augmented = false;
    std::uint64_t seed = 0;
    std::vector<LabeledImage> images;  // resized copy of the corpus
    Splits splits;

    std::size_t image_size() const { return resolution_pixels(resolution); }
};

std::string variant_name(Resolution resolution, bool augmented);
/// Parses full-aug | shrunk-aug | shrunk-noaug.
std::pair<Resolution, bool> parse_variant_name(const std::string& name);
std::vector<std::string> default_variant_names();

/// Stratified 60/10/20/10 split.
Splits stratified_splits(std::span<const int> labels, std::uint64_t seed);

DatasetVariant make_variant(const Corpus& corpus, Resolution resolution, bool augmented, std::uint64_t seed);

struct Batch {
    Tensor images;  // [N,3,H,W]
    std::vector<int> labels;
};

/// Stacks the given variant images without augmentation.
Batch gather(const DatasetVariant& variant, std::span<const std::size_t> indices);
Batch gather(std::span<const LabeledImage> images);

/// Training batches for one epoch. Order is a shuffle seeded by
/// `shuffle_seed`; augmented variants re-sample the transform of every
/// training image from (variant.seed, epoch, image index).
std::vector<Batch> epoch_batches(const DatasetVariant& variant, std::size_t epoch, std::size_t batch_size,
                                 std::uint64_t shuffle_seed);

/// FNV-1a over labels and the bit patterns of all pixel values.
std::uint64_t corpus_hash(std::span<const LabeledImage> images);
std::string hex64(std::uint64_t value);

}  // namespace advrobust
