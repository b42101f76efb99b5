#include "advrobust/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "advrobust/rng.hpp"

namespace advrobust {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": " + what + " is undefined");
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void accumulate(const Tensor& target, std::span<const double> delta) {
    auto g = target.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

struct ConvGeometry {
    std::size_t n, c, h, w;  // input
    std::size_t o, kh, kw;   // weight
    std::size_t ho, wo;      // output
    std::size_t groups, cg, og;
    std::size_t stride, dilation, padding;

    std::size_t col_rows() const { return cg * kh * kw; }
    std::size_t col_cols() const { return ho * wo; }
    bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// Lays out the receptive fields of group `g` of sample `n` as columns.
void im2col(const double* x, const ConvGeometry& geo, std::size_t g, double* col) {
    const std::size_t plane = geo.h * geo.w;
    const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
    for (std::size_t c = 0; c < geo.cg; ++c) {
        const double* xc = x + (g * geo.cg + c) * plane;
        for (std::size_t ki = 0; ki < geo.kh; ++ki) {
            for (std::size_t kj = 0; kj < geo.kw; ++kj) {
                double* row = col + ((c * geo.kh + ki) * geo.kw + kj) * geo.col_cols();
                for (std::size_t oh = 0; oh < geo.ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * geo.stride + ki * geo.dilation) - pad;
                    double* out = row + oh * geo.wo;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.h)) {
                        std::fill(out, out + geo.wo, 0.0);
                        continue;
                    }
                    const double* xr = xc + static_cast<std::size_t>(ih) * geo.w;
                    for (std::size_t ow = 0; ow < geo.wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kj * geo.dilation) - pad;
                        out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(geo.w))
                                      ? 0.0
                                      : xr[static_cast<std::size_t>(iw)];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& geo, std::size_t g, double* dx) {
    const std::size_t plane = geo.h * geo.w;
    const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
    for (std::size_t c = 0; c < geo.cg; ++c) {
        double* dxc = dx + (g * geo.cg + c) * plane;
        for (std::size_t ki = 0; ki < geo.kh; ++ki) {
            for (std::size_t kj = 0; kj < geo.kw; ++kj) {
                const double* row = col + ((c * geo.kh + ki) * geo.kw + kj) * geo.col_cols();
                for (std::size_t oh = 0; oh < geo.ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * geo.stride + ki * geo.dilation) - pad;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(geo.h)) continue;
                    double* dxr = dxc + static_cast<std::size_t>(ih) * geo.w;
                    const double* in = row + oh * geo.wo;
                    for (std::size_t ow = 0; ow < geo.wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * geo.stride + kj * geo.dilation) - pad;
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(geo.w)) dxr[iw] += in[ow];
                    }
                }
            }
        }
    }
}

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           const Conv2dOptions& opt) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(weight, 4, "conv2d", "weight");
    if (opt.stride == 0 || opt.dilation == 0 || opt.groups == 0)
        throw std::invalid_argument("conv2d: stride, dilation and groups must be positive");
    ConvGeometry geo{};
    geo.n = input.dim(0);
    geo.c = input.dim(1);
    geo.h = input.dim(2);
    geo.w = input.dim(3);
    geo.o = weight.dim(0);
    geo.kh = weight.dim(2);
    geo.kw = weight.dim(3);
    geo.groups = opt.groups;
    geo.stride = opt.stride;
    geo.dilation = opt.dilation;
    geo.padding = opt.padding;
    if (geo.c % geo.groups != 0)
        throw std::invalid_argument("conv2d: input channels (C=" + std::to_string(geo.c) +
                                    ") not divisible by groups=" + std::to_string(geo.groups));
    if (geo.o % geo.groups != 0)
        throw std::invalid_argument("conv2d: output channels (O=" + std::to_string(geo.o) +
                                    ") not divisible by groups=" + std::to_string(geo.groups));
    geo.cg = geo.c / geo.groups;
    geo.og = geo.o / geo.groups;
    if (weight.dim(1) != geo.cg)
        throw ShapeError("conv2d: weight dimension 1 is " + std::to_string(weight.dim(1)) + ", expected C/g=" +
                         std::to_string(geo.cg));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != geo.o))
        throw ShapeError("conv2d: bias dimension 0 must equal O=" + std::to_string(geo.o) + ", got " +
                         shape_str(bias.shape()));
    geo.ho = conv_output_extent(geo.h, geo.kh, opt);
    geo.wo = conv_output_extent(geo.w, geo.kw, opt);
    return geo;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
    const std::size_t effective = (kernel - 1) * opt.dilation + 1;
    const std::size_t padded = in + 2 * opt.padding;
    if (effective > padded)
        throw ShapeError("conv2d: effective kernel extent " + std::to_string(effective) +
                         " exceeds padded spatial extent " + std::to_string(padded));
    return (padded - effective) / opt.stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt,
              Tape* tape) {
    const ConvGeometry geo = conv_geometry(input, weight, bias, opt);
    Tensor out(Shape{geo.n, geo.o, geo.ho, geo.wo});

    const std::size_t rows = geo.col_rows();
    const std::size_t cols = geo.col_cols();
    std::vector<double> col(geo.is_pointwise() ? 0 : rows * cols);
    const double* x = input.data().data();
    const double* wt = weight.data().data();
    double* y = out.data().data();
    for (std::size_t n = 0; n < geo.n; ++n) {
        const double* xn = x + n * geo.c * geo.h * geo.w;
        for (std::size_t g = 0; g < geo.groups; ++g) {
            const double* colp = xn + g * geo.cg * geo.h * geo.w;
            if (!geo.is_pointwise()) {
                im2col(xn, geo, g, col.data());
                colp = col.data();
            }
            MapMat yg(y + (n * geo.o + g * geo.og) * cols, geo.og, cols);
            yg.noalias() = ConstMapMat(wt + g * geo.og * rows, geo.og, rows) * ConstMapMat(colp, rows, cols);
        }
        if (bias.defined()) {
            for (std::size_t o = 0; o < geo.o; ++o) {
                double* yo = y + (n * geo.o + o) * cols;
                const double b = bias[o];
                for (std::size_t i = 0; i < cols; ++i) yo[i] += b;
            }
        }
    }

    if (Tape::should_record(tape, {&input, &weight, &bias})) {
        tape->record({input, weight, bias}, out, [input, weight, bias, out, geo]() mutable {
            const std::size_t rows = geo.col_rows();
            const std::size_t cols = geo.col_cols();
            const double* dy = out.grad().data();
            const double* x = input.data().data();
            const double* wt = weight.data().data();
            const bool want_dx = input.requires_grad();
            const bool want_dw = weight.requires_grad();
            double* dx = want_dx ? input.grad_buffer().data() : nullptr;
            double* dw = want_dw ? weight.grad_buffer().data() : nullptr;
            std::vector<double> col(rows * cols);
            std::vector<double> dcol(rows * cols);
            for (std::size_t n = 0; n < geo.n; ++n) {
                const double* xn = x + n * geo.c * geo.h * geo.w;
                for (std::size_t g = 0; g < geo.groups; ++g) {
                    ConstMapMat dyg(dy + (n * geo.o + g * geo.og) * cols, geo.og, cols);
                    if (want_dw) {
                        const double* colp = xn + g * geo.cg * geo.h * geo.w;
                        if (!geo.is_pointwise()) {
                            im2col(xn, geo, g, col.data());
                            colp = col.data();
                        }
                        MapMat dwg(dw + g * geo.og * rows, geo.og, rows);
                        dwg.noalias() += dyg * ConstMapMat(colp, rows, cols).transpose();
                    }
                    if (want_dx) {
                        ConstMapMat wg(wt + g * geo.og * rows, geo.og, rows);
                        double* dxn = dx + n * geo.c * geo.h * geo.w;
                        if (geo.is_pointwise()) {
                            MapMat dxg(dxn + g * geo.cg * geo.h * geo.w, rows, cols);
                            dxg.noalias() += wg.transpose() * dyg;
                        } else {
                            MapMat dc(dcol.data(), rows, cols);
                            dc.noalias() = wg.transpose() * dyg;
                            col2im_add(dcol.data(), geo, g, dxn);
                        }
                    }
                }
            }
            if (bias.defined() && bias.requires_grad()) {
                auto db = bias.grad_buffer();
                for (std::size_t n = 0; n < geo.n; ++n)
                    for (std::size_t o = 0; o < geo.o; ++o) {
                        const double* dyo = dy + (n * geo.o + o) * cols;
                        double s = 0.0;
                        for (std::size_t i = 0; i < cols; ++i) s += dyo[i];
                        db[o] += s;
                    }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& input, Tape* tape) {
    Tensor out(input.shape());
    auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (Tape::should_record(tape, {&input})) {
        tape->record({input}, out, [input, out]() mutable {
            auto x = input.data();
            auto dy = out.grad();
            auto dx = input.grad_buffer();
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] > 0.0) dx[i] += dy[i];
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
    if (Tape::should_record(tape, {&a, &b})) {
        tape->record({a, b}, out, [a, b, out]() mutable {
            if (a.requires_grad()) accumulate(a, out.grad());
            if (b.requires_grad()) accumulate(b, out.grad());
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
    if (Tape::should_record(tape, {&a, &b})) {
        tape->record({a, b}, out, [a, b, out]() mutable {
            if (a.requires_grad()) accumulate(a, out.grad());
            if (b.requires_grad()) {
                auto g = b.grad_buffer();
                auto dy = out.grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dy[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
    if (Tape::should_record(tape, {&a, &b})) {
        tape->record({a, b}, out, [a, b, out]() mutable {
            auto dy = out.grad();
            if (a.requires_grad()) {
                auto g = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * b[i];
            }
            if (b.requires_grad()) {
                auto g = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * a[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double factor, Tape* tape) {
    Tensor out(a.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * factor;
    if (Tape::should_record(tape, {&a})) {
        tape->record({a}, out, [a, out, factor]() mutable {
            auto g = a.grad_buffer();
            auto dy = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * factor;
        });
    }
    return out;
}

Tensor sum(const Tensor& a, Tape* tape) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (Tape::should_record(tape, {&a})) {
        tape->record({a}, out, [a, out]() mutable {
            const double d = out.grad()[0];
            for (double& g : a.grad_buffer()) g += d;
        });
    }
    return out;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape) {
    require_rank(input, 2, "dense", "input");
    require_rank(weight, 2, "dense", "weight");
    const std::size_t n = input.dim(0), f = input.dim(1), o = weight.dim(0);
    if (weight.dim(1) != f)
        throw ShapeError("dense: weight dimension 1 is " + std::to_string(weight.dim(1)) +
                         ", expected input features " + std::to_string(f));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o))
        throw ShapeError("dense: bias dimension 0 must equal " + std::to_string(o));
    Tensor out(Shape{n, o});
    MapMat y(out.data().data(), n, o);
    y.noalias() = ConstMapMat(input.data().data(), n, f) * ConstMapMat(weight.data().data(), o, f).transpose();
    if (bias.defined())
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < o; ++c) y(r, c) += bias[c];
    if (Tape::should_record(tape, {&input, &weight, &bias})) {
        tape->record({input, weight, bias}, out, [input, weight, bias, out, n, f, o]() mutable {
            ConstMapMat dy(out.grad().data(), n, o);
            if (input.requires_grad()) {
                MapMat dx(input.grad_buffer().data(), n, f);
                dx.noalias() += dy * ConstMapMat(weight.data().data(), o, f);
            }
            if (weight.requires_grad()) {
                MapMat dw(weight.grad_buffer().data(), o, f);
                dw.noalias() += dy.transpose() * ConstMapMat(input.data().data(), n, f);
            }
            if (bias.defined() && bias.requires_grad()) {
                auto db = bias.grad_buffer();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < o; ++c) db[c] += dy(r, c);
            }
        });
    }
    return out;
}

Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride, Tape* tape) {
    require_rank(input, 4, "max_pool2d", "input");
    if (kernel == 0 || stride == 0) throw std::invalid_argument("max_pool2d: kernel and stride must be positive");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel > h || kernel > w)
        throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " exceeds spatial extent " +
                         shape_str(input.shape()));
    const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
    Tensor out(Shape{n, c, ho, wo});
    std::vector<std::size_t> argmax(out.numel());
    auto x = input.data();
    auto y = out.data();
    std::size_t idx = 0;
    for (std::size_t p = 0; p < n * c; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t oh = 0; oh < ho; ++oh)
            for (std::size_t ow = 0; ow < wo; ++ow, ++idx) {
                std::size_t best = base + oh * stride * w + ow * stride;
                for (std::size_t i = 0; i < kernel; ++i)
                    for (std::size_t j = 0; j < kernel; ++j) {
                        const std::size_t k = base + (oh * stride + i) * w + ow * stride + j;
                        if (x[k] > x[best]) best = k;
                    }
                argmax[idx] = best;
                y[idx] = x[best];
            }
    }
    if (Tape::should_record(tape, {&input})) {
        tape->record({input}, out, [input, out, argmax = std::move(argmax)]() mutable {
            auto dx = input.grad_buffer();
            auto dy = out.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& input, Tape* tape) {
    require_rank(input, 4, "global_avg_pool", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    Tensor out(Shape{n, c});
    auto x = input.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x[p * hw + i];
        out[p] = s / static_cast<double>(hw);
    }
    if (Tape::should_record(tape, {&input})) {
        tape->record({input}, out, [input, out, n, c, hw]() mutable {
            auto dx = input.grad_buffer();
            auto dy = out.grad();
            const double inv = 1.0 / static_cast<double>(hw);
            for (std::size_t p = 0; p < n * c; ++p)
                for (std::size_t i = 0; i < hw; ++i) dx[p * hw + i] += dy[p] * inv;
        });
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& inputs, Tape* tape) {
    if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
    for (const auto& t : inputs) require_rank(t, 4, "concat_channels", "input");
    const std::size_t n = inputs[0].dim(0), h = inputs[0].dim(2), w = inputs[0].dim(3);
    std::size_t channels = 0;
    for (const auto& t : inputs) {
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
            throw ShapeError("concat_channels: incompatible shapes " + shape_str(inputs[0].shape()) + " and " +
                             shape_str(t.shape()));
        channels += t.dim(1);
    }
    const std::size_t hw = h * w;
    Tensor out(Shape{n, channels, h, w});
    auto y = out.data();
    for (std::size_t b = 0; b < n; ++b) {
        std::size_t offset = b * channels * hw;
        for (const auto& t : inputs) {
            const std::size_t block = t.dim(1) * hw;
            auto x = t.data().subspan(b * block, block);
            std::copy(x.begin(), x.end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += block;
        }
    }
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (tape != nullptr && any) {
        tape->record(inputs, out, [inputs, out, n, channels, hw]() mutable {
            auto dy = out.grad();
            for (std::size_t b = 0; b < n; ++b) {
                std::size_t offset = b * channels * hw;
                for (auto& t : inputs) {
                    const std::size_t block = t.dim(1) * hw;
                    if (t.requires_grad()) {
                        auto g = t.grad_buffer().subspan(b * block, block);
                        for (std::size_t i = 0; i < block; ++i) g[i] += dy[offset + i];
                    }
                    offset += block;
                }
            }
        });
    }
    return out;
}

Tensor channel_norm(const Tensor& input, ChannelNormState& state, bool training, Tape* tape) {
    if (!input.defined() || input.rank() < 2) throw ShapeError("channel_norm: input must have rank >= 2");
    const std::size_t n = input.dim(0), c = input.dim(1);
    const std::size_t spatial = input.numel() / (n * c);
    if (state.gamma.numel() != c || state.beta.numel() != c || state.running_mean.numel() != c ||
        state.running_var.numel() != c)
        throw ShapeError("channel_norm: parameter dimension 0 must equal channels " + std::to_string(c));

    std::vector<double> mean(c), inv_std(c);
    auto x = input.data();
    if (training) {
        const auto m = static_cast<double>(n * spatial);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < spatial; ++i) s += x[(b * c + ch) * spatial + i];
            const double mu = s / m;
            double v = 0.0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < spatial; ++i) {
                    const double d = x[(b * c + ch) * spatial + i] - mu;
                    v += d * d;
                }
            const double var = v / m;
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
            const double unbiased = m > 1.0 ? v / (m - 1.0) : var;
            state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
            state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
        }
    }

    Tensor out(input.shape());
    auto y = out.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double a = state.gamma[ch] * inv_std[ch];
            const double shift = state.beta[ch] - a * mean[ch];
            const std::size_t base = (b * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) y[base + i] = a * x[base + i] + shift;
        }

    Tensor gamma = state.gamma, beta = state.beta;
    if (Tape::should_record(tape, {&input, &gamma, &beta})) {
        tape->record({input, gamma, beta}, out,
                     [input, gamma, beta, out, mean = std::move(mean), inv_std = std::move(inv_std), n, c,
                      spatial, training]() mutable {
                         auto x = input.data();
                         auto dy = out.grad();
                         const auto m = static_cast<double>(n * spatial);
                         for (std::size_t ch = 0; ch < c; ++ch) {
                             double sum_dy = 0.0, sum_dy_xhat = 0.0;
                             for (std::size_t b = 0; b < n; ++b)
                                 for (std::size_t i = 0; i < spatial; ++i) {
                                     const std::size_t k = (b * c + ch) * spatial + i;
                                     sum_dy += dy[k];
                                     sum_dy_xhat += dy[k] * (x[k] - mean[ch]) * inv_std[ch];
                                 }
                             if (gamma.requires_grad()) gamma.grad_buffer()[ch] += sum_dy_xhat;
                             if (beta.requires_grad()) beta.grad_buffer()[ch] += sum_dy;
                             if (!input.requires_grad()) continue;
                             auto dx = input.grad_buffer();
                             const double a = gamma[ch] * inv_std[ch];
                             for (std::size_t b = 0; b < n; ++b)
                                 for (std::size_t i = 0; i < spatial; ++i) {
                                     const std::size_t k = (b * c + ch) * spatial + i;
                                     if (training) {
                                         const double xhat = (x[k] - mean[ch]) * inv_std[ch];
                                         dx[k] += a / m * (m * dy[k] - sum_dy - xhat * sum_dy_xhat);
                                     } else {
                                         dx[k] += a * dy[k];
                                     }
                                 }
                         }
                     });
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax", "logits");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits[r * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] = std::exp(logits[r * c + j] - mx);
            z += out[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= z;
    }
    return out;
}

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy", "logits");
    if (labels.size() != logits.dim(0))
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(logits.dim(0)));
    const auto classes = static_cast<int>(logits.dim(1));
    for (int label : labels)
        if (label < 0 || label >= classes)
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(classes) + ")");
}

}  // namespace

std::vector<double> per_example_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<double> losses(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits[r * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[r * c + j] - mx);
        const double log_p = logits[r * c + static_cast<std::size_t>(labels[r])] - mx - std::log(z);
        losses[r] = std::max(0.0, -log_p);
    }
    return losses;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction, Tape* tape) {
    const auto losses = per_example_cross_entropy(logits, labels);
    double total = 0.0;
    for (double l : losses) total += l;
    const double norm = reduction == Reduction::kMean ? 1.0 / static_cast<double>(losses.size()) : 1.0;
    Tensor out = Tensor::scalar(total * norm);
    if (Tape::should_record(tape, {&logits})) {
        std::vector<int> y(labels.begin(), labels.end());
        tape->record({logits}, out, [logits, out, y = std::move(y), norm]() mutable {
            const Tensor p = softmax(logits);
            const std::size_t c = logits.dim(1);
            const double upstream = out.grad()[0] * norm;
            auto g = logits.grad_buffer();
            for (std::size_t r = 0; r < y.size(); ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    const double onehot = static_cast<int>(j) == y[r] ? 1.0 : 0.0;
                    g[r * c + j] += upstream * (p[r * c + j] - onehot);
                }
        });
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "argmax_rows", "logits");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits[r * c + j] > logits[r * c + best]) best = j;
        out[r] = static_cast<int>(best);
    }
    return out;
}

void fill_uniform(Tensor& t, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
}

void fill_normal(Tensor& t, double mean, double stddev, std::uint64_t seed) {
    Rng rng(seed);
    for (double& v : t.data()) v = rng.normal(mean, stddev);
}

}  // namespace advrobust
