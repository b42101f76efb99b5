#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advrobust/tensor.hpp"

// Differentiable operations. Every op takes an optional Tape; it records a
// backward rule only when the tape is non-null and some input requires grad.

namespace advrobust {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t groups = 1;
    std::size_t padding = 0;
};

/// Output extent of a convolution along one spatial axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

/// Grouped, dilated 2-D convolution with symmetric zero padding.
/// input [N,C,H,W], weight [O,C/g,Kh,Kw], bias [O] (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt,
              Tape* tape = nullptr);

Tensor relu(const Tensor& input, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double factor, Tape* tape = nullptr);
/// Sum of all elements as a [1] tensor.
Tensor sum(const Tensor& a, Tape* tape = nullptr);

/// x [N,F], weight [O,F], bias [O] -> [N,O].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape = nullptr);

/// Max pooling without padding; ties go to the first element in scan order.
Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride, Tape* tape = nullptr);

/// [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& input, Tape* tape = nullptr);

/// Concatenates NCHW tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& inputs, Tape* tape = nullptr);

/// Per-channel affine normalization.
///
/// training=true: normalizes with the batch mean and biased variance and
/// updates the running statistics in place (unbiased variance, given momentum).
/// training=false: an affine map using the frozen running statistics, so each
/// example is processed independently of the rest of its batch.
struct ChannelNormState {
    Tensor gamma;         // [C]
    Tensor beta;          // [C]
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    double momentum = 0.1;
    double eps = 1e-5;
};
Tensor channel_norm(const Tensor& input, ChannelNormState& state, bool training, Tape* tape = nullptr);

enum class Reduction { kMean, kSum };

/// Softmax cross-entropy against integer labels, computed with max
/// subtraction. Returns a [1] tensor.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Reduction reduction = Reduction::kMean, Tape* tape = nullptr);

/// Row-wise softmax of [N,C] logits (untaped).
Tensor softmax(const Tensor& logits);

/// Per-row cross-entropy values (untaped).
std::vector<double> per_example_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Index of the largest logit in each row; ties resolve to the lower index.
std::vector<int> argmax_rows(const Tensor& logits);

void fill_uniform(Tensor& t, double lo, double hi, std::uint64_t seed);
void fill_normal(Tensor& t, double mean, double stddev, std::uint64_t seed);

}  // namespace advrobust
