#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "advrobust/ops.hpp"
#include "advrobust/tensor.hpp"

namespace advrobust {

enum class Family { kBrainNet, kBrainNeXt, kDilation, kDenseNetSurrogate };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

struct InputShape {
    std::size_t channels = 3;
    std::size_t height = 64;
    std::size_t width = 64;
    bool operator==(const InputShape&) const = default;
};

/// Declarative architecture description.
///
/// Residual families: `stage_widths[i]` channels and `blocks_per_stage[i]`
/// residual blocks in stage i; stages after the first downsample by 2.
/// The dense surrogate reads `stage_widths[0]` as the stem width and
/// `blocks_per_stage` as the number of layers per dense block.
struct ModelSpec {
    std::string name;
    Family family = Family::kBrainNet;
    std::vector<std::size_t> stage_widths;
    std::vector<std::size_t> blocks_per_stage;
    std::size_t cardinality = 1;
    std::size_t dilation_rate = 1;
    std::size_t num_classes = 3;
    InputShape input_shape;
    std::size_t growth_rate = 8;

    bool operator==(const ModelSpec&) const = default;
};

class InvalidSpecError : public std::invalid_argument {
  public:
    InvalidSpecError(const std::string& name, std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

  private:
    std::vector<std::string> violations_;
};

/// Empty when the spec is buildable.
std::vector<std::string> spec_violations(const ModelSpec& spec);

/// The eight desk-scale specs: brainnet, brainnext_{small,medium,large},
/// dilation{2,3,4}, densenet_surrogate, all with the given square input size.
std::vector<ModelSpec> registry_default(std::size_t resolution = 64);
std::optional<ModelSpec> registry_find(const std::string& name, std::size_t resolution = 64);
std::vector<std::string> registry_names();

ModelSpec with_resolution(ModelSpec spec, std::size_t resolution);

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Descriptor of one convolution inside a built model.
struct ConvInfo {
    std::string name;
    std::size_t weight_index;
    Conv2dOptions options;
};

/// A built model: spec, parameters (trainable tensors, stable order) and
/// buffers (normalization running statistics).
///
/// Copies share tensor storage. Use state_snapshot()/load_state() for value
/// copies. A model is "frozen" when no parameter requires grad; frozen
/// models are read-only during forward passes in eval mode and may be
/// shared across threads.
class Model {
  public:
    static Model build(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return spec_; }

    /// Logits [N, num_classes] with frozen normalization statistics.
    /// Records on `tape` when non-null.
    Tensor forward(const Tensor& batch, Tape* tape = nullptr) const;

    /// Training-mode forward: batch statistics, running statistics updated.
    Tensor forward_train(const Tensor& batch, Tape* tape);

    /// Names of the sequential units (stem, blocks, transitions, head).
    std::vector<std::string> unit_names() const;
    /// Runs units [begin, end) on `x` in eval mode.
    Tensor forward_units(const Tensor& x, std::size_t begin, std::size_t end, Tape* tape = nullptr) const;

    std::vector<NamedTensor>& parameters() noexcept { return params_; }
    const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
    std::vector<NamedTensor>& buffers() noexcept { return buffers_; }
    const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }
    const std::vector<ConvInfo>& convolutions() const noexcept { return convs_; }

    std::size_t frozen_prefix() const noexcept { return frozen_prefix_; }
    /// Excludes the first `count` parameter tensors from optimization.
    void set_frozen_prefix(std::size_t count);
    /// trainable=false freezes every parameter (attack/eval); true restores
    /// requires_grad on the parameters past frozen_prefix.
    void set_trainable(bool trainable);
    bool is_frozen() const;

    std::vector<std::vector<double>> state_snapshot() const;
    void load_state(const std::vector<std::vector<double>>& state);

    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);

    struct Unit;

  private:
    Model() = default;
    Tensor run(const Tensor& x, std::size_t begin, std::size_t end, Tape* tape, bool training) const;
    void check_input(const Tensor& batch) const;

    ModelSpec spec_;
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
    std::vector<ConvInfo> convs_;
    std::vector<std::shared_ptr<const Unit>> units_;
    std::size_t frozen_prefix_ = 0;
};

/// Σ product(shape) over the model's parameters (buffers excluded).
std::size_t parameter_count(const Model& model);
std::size_t parameter_count(std::span<const NamedTensor> tensors);

/// Tensors frozen in phase 1 of two-phase fine-tuning: floor(0.75 × count).
std::size_t default_frozen_prefix(const Model& model);

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

/// Reads only the (kind, name, shape) table of a checkpoint file.
struct CheckpointEntry {
    bool is_buffer;
    std::string name;
    Shape shape;
};
std::vector<CheckpointEntry> read_checkpoint_table(const std::filesystem::path& path);

}  // namespace advrobust
