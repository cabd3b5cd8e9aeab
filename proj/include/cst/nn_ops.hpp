// SPDX-License-Identifier: Apache-2.0
#pragma once

// Neural-network ops over channels-last feature maps [H, W, C].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cst/ops.hpp"

namespace cst {

namespace detail {

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace detail

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.ndim()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
    const auto s = detail::split_axis(x.shape(), axis);
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            T peak = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < s.extent; ++k) peak = std::max(peak, x[base + k * s.inner]);
            T total = 0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                const T e = std::exp(x[base + k * s.inner] - peak);
                out[base + k * s.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
        }
    return detail::make_result<T>("softmax", x.shape(), std::move(out), {x}, [s](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& y = self.data;
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.extent * s.inner + i;
                T dot = 0;
                for (std::size_t k = 0; k < s.extent; ++k) dot += y[base + k * s.inner] * self.grad[base + k * s.inner];
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const std::size_t at = base + k * s.inner;
                    g[at] += y[at] * (self.grad[at] - dot);
                }
            }
    });
}

/// log(sum(exp(x))) over the last axis; result drops that axis.
template <class T>
Tensor<T> logsumexp_last(const Tensor<T>& x) {
    if (x.ndim() < 2) throw DimensionError("logsumexp_last: need rank >= 2, got " + shape_str(x.shape()));
    const std::size_t inner = x.shape().back();
    const std::size_t outer = x.numel() / inner;
    std::vector<T> out(outer);
    for (std::size_t o = 0; o < outer; ++o) {
        T peak = -std::numeric_limits<T>::infinity();
        for (std::size_t k = 0; k < inner; ++k) peak = std::max(peak, x[o * inner + k]);
        T total = 0;
        for (std::size_t k = 0; k < inner; ++k) total += std::exp(x[o * inner + k] - peak);
        out[o] = peak + std::log(total);
    }
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    return detail::make_result<T>("logsumexp_last", std::move(shape), std::move(out), {x}, [inner](Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i / inner] * std::exp(p->data[i] - self.data[i / inner]);
    });
}

/// Normalizes each position over the last (channel) axis, then applies gamma/beta of length C.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::size_t c = x.shape().back();
    if (gamma.numel() != c || beta.numel() != c)
        throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                             " for input " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / c;
    std::vector<T> out(x.numel());
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.data().data() + r * c;
        T mu = 0;
        for (std::size_t k = 0; k < c; ++k) mu += row[k];
        mu /= static_cast<T>(c);
        T var = 0;
        for (std::size_t k = 0; k < c; ++k) var += (row[k] - mu) * (row[k] - mu);
        var /= static_cast<T>(c);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t k = 0; k < c; ++k) {
            xhat[r * c + k] = (row[k] - mu) * inv_std[r];
            out[r * c + k] = xhat[r * c + k] * gamma[k] + beta[k];
        }
    }
    return detail::make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            const auto& G = self.grad;
            if (detail::wants_grad(pg)) {
                auto& gg = pg->grad_buffer();
                for (std::size_t i = 0; i < G.size(); ++i) gg[i % c] += G[i] * xhat[i];
            }
            if (detail::wants_grad(pb)) {
                auto& gb = pb->grad_buffer();
                for (std::size_t i = 0; i < G.size(); ++i) gb[i % c] += G[i];
            }
            if (detail::wants_grad(px)) {
                auto& gx = px->grad_buffer();
                const auto& gamma_v = pg->data;
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dy = 0, mean_dy_xhat = 0;
                    for (std::size_t k = 0; k < c; ++k) {
                        const T dy = G[r * c + k] * gamma_v[k];
                        mean_dy += dy;
                        mean_dy_xhat += dy * xhat[r * c + k];
                    }
                    mean_dy /= static_cast<T>(c);
                    mean_dy_xhat /= static_cast<T>(c);
                    for (std::size_t k = 0; k < c; ++k) {
                        const T dy = G[r * c + k] * gamma_v[k];
                        gx[r * c + k] += inv_std[r] * (dy - mean_dy - xhat[r * c + k] * mean_dy_xhat);
                    }
                }
            }
        });
}

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
    std::size_t groups = 1;
};

/// x: [H, W, Cin], weight: [KH, KW, Cin/groups, Cout], bias: [Cout] or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions opt = {}) {
    if (x.ndim() != 3 || weight.ndim() != 4)
        throw DimensionError("conv2d: expected [H,W,C] input and [KH,KW,Cin/g,Cout] weight, got " +
                             shape_str(x.shape()) + " and " + shape_str(weight.shape()));
    const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const std::size_t KH = weight.dim(0), KW = weight.dim(1), cout = weight.dim(3);
    const std::size_t g = opt.groups;
    if (g == 0 || cin % g != 0 || cout % g != 0)
        throw DimensionError("conv2d: groups " + std::to_string(g) + " must divide channels " + std::to_string(cin) +
                             "->" + std::to_string(cout));
    const std::size_t cin_g = cin / g, cout_g = cout / g;
    if (weight.dim(2) != cin_g)
        throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " does not match input " +
                             shape_str(x.shape()) + " with groups " + std::to_string(g));
    if (bias.defined() && bias.numel() != cout)
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) + " outputs");
    const std::size_t span_h = opt.dilation * (KH - 1) + 1, span_w = opt.dilation * (KW - 1) + 1;
    if (H + 2 * opt.padding < span_h || W + 2 * opt.padding < span_w || opt.stride == 0)
        throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
    const std::size_t OH = (H + 2 * opt.padding - span_h) / opt.stride + 1;
    const std::size_t OW = (W + 2 * opt.padding - span_w) / opt.stride + 1;

    // visits every (output site, kernel tap) pair that lands inside the input
    auto for_each_tap = [=](auto&& body) {
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ky = 0; ky < KH; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * opt.stride + ky * opt.dilation) -
                                static_cast<std::ptrdiff_t>(opt.padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t ox = 0; ox < OW; ++ox)
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * opt.stride + kx * opt.dilation) -
                                        static_cast<std::ptrdiff_t>(opt.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        body((oy * OW + ox) * cout, (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin,
                             (ky * KW + kx) * cin_g * cout);
                    }
            }
    };

    std::vector<T> out(OH * OW * cout, T(0));
    const T* X = x.data().data();
    const T* Wt = weight.data().data();
    for_each_tap([&](std::size_t o, std::size_t i, std::size_t w) {
        for (std::size_t grp = 0; grp < g; ++grp)
            for (std::size_t ci = 0; ci < cin_g; ++ci) {
                const T xv = X[i + grp * cin_g + ci];
                const T* wrow = Wt + w + ci * cout + grp * cout_g;
                T* orow = out.data() + o + grp * cout_g;
                for (std::size_t co = 0; co < cout_g; ++co) orow[co] += xv * wrow[co];
            }
    });
    if (bias.defined())
        for (std::size_t p = 0; p < OH * OW; ++p)
            for (std::size_t co = 0; co < cout; ++co) out[p * cout + co] += bias[co];

    return detail::make_result<T>(
        "conv2d", Shape{OH, OW, cout}, std::move(out), {x, weight, bias},
        [=](Node<T>& self) {
            auto& px = self.parents[0];
            auto& pw = self.parents[1];
            auto& pb = self.parents[2];
            const bool want_x = detail::wants_grad(px), want_w = detail::wants_grad(pw);
            T* gx = want_x ? px->grad_buffer().data() : nullptr;
            T* gw = want_w ? pw->grad_buffer().data() : nullptr;
            const T* G = self.grad.data();
            const T* Xv = px->data.data();
            const T* Wv = pw->data.data();
            if (want_x || want_w)
                for_each_tap([&](std::size_t o, std::size_t i, std::size_t w) {
                    for (std::size_t grp = 0; grp < g; ++grp)
                        for (std::size_t ci = 0; ci < cin_g; ++ci) {
                            const std::size_t xi = i + grp * cin_g + ci;
                            const std::size_t wi = w + ci * cout + grp * cout_g;
                            const T* grow = G + o + grp * cout_g;
                            if (want_x) {
                                T acc = 0;
                                for (std::size_t co = 0; co < cout_g; ++co) acc += Wv[wi + co] * grow[co];
                                gx[xi] += acc;
                            }
                            if (want_w) {
                                const T xv = Xv[xi];
                                for (std::size_t co = 0; co < cout_g; ++co) gw[wi + co] += xv * grow[co];
                            }
                        }
                });
            if (detail::wants_grad(pb)) {
                auto& gb = pb->grad_buffer();
                for (std::size_t p = 0; p < OH * OW; ++p)
                    for (std::size_t co = 0; co < cout; ++co) gb[co] += G[p * cout + co];
            }
        });
}

/// Transposed convolution. x: [H, W, Cin], weight: [KH, KW, Cin, Cout].
/// Output size (H-1)*stride - 2*padding + KH.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                           std::size_t padding = 0) {
    if (x.ndim() != 3 || weight.ndim() != 4 || weight.dim(2) != x.dim(2))
        throw DimensionError("conv_transpose2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const std::size_t KH = weight.dim(0), KW = weight.dim(1), cout = weight.dim(3);
    if (bias.defined() && bias.numel() != cout)
        throw DimensionError("conv_transpose2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) +
                             " outputs");
    if (stride == 0 || (H - 1) * stride + KH < 2 * padding + 1 || (W - 1) * stride + KW < 2 * padding + 1)
        throw DimensionError("conv_transpose2d: empty output for " + shape_str(x.shape()));
    const std::size_t OH = (H - 1) * stride + KH - 2 * padding;
    const std::size_t OW = (W - 1) * stride + KW - 2 * padding;

    auto for_each_tap = [=](auto&& body) {
        for (std::size_t iy = 0; iy < H; ++iy)
            for (std::size_t ky = 0; ky < KH; ++ky) {
                const auto oy = static_cast<std::ptrdiff_t>(iy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(OH)) continue;
                for (std::size_t ix = 0; ix < W; ++ix)
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const auto ox =
                            static_cast<std::ptrdiff_t>(ix * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                        if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(OW)) continue;
                        body((static_cast<std::size_t>(oy) * OW + static_cast<std::size_t>(ox)) * cout,
                             (iy * W + ix) * cin, (ky * KW + kx) * cin * cout);
                    }
            }
    };

    std::vector<T> out(OH * OW * cout, T(0));
    const T* X = x.data().data();
    const T* Wt = weight.data().data();
    for_each_tap([&](std::size_t o, std::size_t i, std::size_t w) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T xv = X[i + ci];
            const T* wrow = Wt + w + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) out[o + co] += xv * wrow[co];
        }
    });
    if (bias.defined())
        for (std::size_t p = 0; p < OH * OW; ++p)
            for (std::size_t co = 0; co < cout; ++co) out[p * cout + co] += bias[co];

    return detail::make_result<T>(
        "conv_transpose2d", Shape{OH, OW, cout}, std::move(out), {x, weight, bias}, [=](Node<T>& self) {
            auto& px = self.parents[0];
            auto& pw = self.parents[1];
            auto& pb = self.parents[2];
            const bool want_x = detail::wants_grad(px), want_w = detail::wants_grad(pw);
            T* gx = want_x ? px->grad_buffer().data() : nullptr;
            T* gw = want_w ? pw->grad_buffer().data() : nullptr;
            const T* G = self.grad.data();
            const T* Xv = px->data.data();
            const T* Wv = pw->data.data();
            if (want_x || want_w)
                for_each_tap([&](std::size_t o, std::size_t i, std::size_t w) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const std::size_t wi = w + ci * cout;
                        if (want_x) {
                            T acc = 0;
                            for (std::size_t co = 0; co < cout; ++co) acc += Wv[wi + co] * G[o + co];
                            gx[i + ci] += acc;
                        }
                        if (want_w) {
                            const T xv = Xv[i + ci];
                            for (std::size_t co = 0; co < cout; ++co) gw[wi + co] += xv * G[o + co];
                        }
                    }
                });
            if (detail::wants_grad(pb)) {
                auto& gb = pb->grad_buffer();
                for (std::size_t p = 0; p < OH * OW; ++p)
                    for (std::size_t co = 0; co < cout; ++co) gb[co] += G[p * cout + co];
            }
        });
}

/// Non-overlapping k x k mean pooling of [H, W, C]; H and W must be multiples of k.
template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k) {
    if (x.ndim() != 3 || k == 0 || x.dim(0) % k != 0 || x.dim(1) % k != 0)
        throw DimensionError("avg_pool2d: window " + std::to_string(k) + " does not tile " + shape_str(x.shape()));
    const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    const std::size_t OH = H / k, OW = W / k;
    const T norm = T(1) / static_cast<T>(k * k);
    std::vector<T> out(OH * OW * C, T(0));
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xw = 0; xw < W; ++xw)
            for (std::size_t c = 0; c < C; ++c) out[((y / k) * OW + xw / k) * C + c] += x[(y * W + xw) * C + c] * norm;
    return detail::make_result<T>("avg_pool2d", Shape{OH, OW, C}, std::move(out), {x}, [=](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xw = 0; xw < W; ++xw)
                for (std::size_t c = 0; c < C; ++c) g[(y * W + xw) * C + c] += self.grad[((y / k) * OW + xw / k) * C + c] * norm;
    });
}

}  // namespace cst
