#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "advrobust/ops.hpp"
#include "advrobust/tensor.hpp"

namespace advrobust::testing {

/// Direct seven-loop convolution, written straight from the definition
/// out[n,o,i,j] = b[o] + sum_{c,ki,kj} w[o,c,ki,kj] * x[n, g*Cg+c, i*s-p+d*ki, j*s-p+d*kj].
inline Tensor direct_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const std::size_t og = o / opt.groups;
    const long ho = (static_cast<long>(h + 2 * opt.padding) - static_cast<long>((kh - 1) * opt.dilation + 1)) /
                        static_cast<long>(opt.stride) + 1;
    const long wo = (static_cast<long>(wd + 2 * opt.padding) - static_cast<long>((kw - 1) * opt.dilation + 1)) /
                        static_cast<long>(opt.stride) + 1;
    Tensor out(Shape{n, o, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    for (std::size_t bn = 0; bn < n; ++bn)
        for (std::size_t oc = 0; oc < o; ++oc) {
            const std::size_t g = oc / og;
            for (long i = 0; i < ho; ++i)
                for (long j = 0; j < wo; ++j) {
                    double acc = b.defined() ? b[oc] : 0.0;
                    for (std::size_t ci = 0; ci < cg; ++ci)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const long r = i * static_cast<long>(opt.stride) - static_cast<long>(opt.padding) +
                                               static_cast<long>(ki * opt.dilation);
                                const long s = j * static_cast<long>(opt.stride) - static_cast<long>(opt.padding) +
                                               static_cast<long>(kj * opt.dilation);
                                if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(wd))
                                    continue;
                                const std::size_t xc = g * cg + ci;
                                acc += w[((oc * cg + ci) * kh + ki) * kw + kj] *
                                       x[((bn * c + xc) * h + static_cast<std::size_t>(r)) * wd +
                                         static_cast<std::size_t>(s)];
                            }
                    out[((bn * o + oc) * static_cast<std::size_t>(ho) + static_cast<std::size_t>(i)) *
                            static_cast<std::size_t>(wo) +
                        static_cast<std::size_t>(j)] = acc;
                }
        }
    return out;
}

/// Central finite differences of `loss` with respect to every element of
/// `t` (values perturbed in place, then restored).
inline std::vector<double> numeric_gradient(Tensor& t, const std::function<double()>& loss, double h = 1e-5) {
    std::vector<double> g(t.numel());
    auto v = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double orig = v[i];
        v[i] = orig + h;
        const double up = loss();
        v[i] = orig - h;
        const double down = loss();
        v[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps
/// near-zero gradients from turning round-off into large ratios.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace advrobust::testing
