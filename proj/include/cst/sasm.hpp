// SPDX-License-Identifier: Apache-2.0
#pragma once

// Spectra-aware screening: the sparsity estimator, its supervision target and loss,
// top-k patch selection and per-stage pooling of the selection grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cst/array.hpp"
#include "cst/layers.hpp"

namespace cst::sasm {

/// Per-patch 0/1 grid. Cell (r, c) governs the patch_size x patch_size block at rows
/// r*patch_size.. and cols c*patch_size.. of the feature map it is applied to.
struct BinaryPatchMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch_size = 0;
    std::vector<std::uint8_t> grid;

    bool selected(std::size_t r, std::size_t c) const { return grid[r * cols + c] != 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(grid.begin(), grid.end(), 1)); }
    bool operator==(const BinaryPatchMask&) const = default;

    static BinaryPatchMask all(std::size_t rows, std::size_t cols, std::size_t patch, bool on) {
        return {rows, cols, patch, std::vector<std::uint8_t>(rows * cols, on ? 1 : 0)};
    }
};

struct EstimatorConfig {
    std::size_t in_channels = 28;
    std::size_t channels = 28;
    std::vector<std::size_t> aspp_rates{1, 2, 4};
};

/// U-shaped estimator: embed -> 2 encoder stages (C -> 2C -> 4C, stride 2 each) -> ASPP
/// -> 2 decoder stages with additive skips -> 1x1 head producing C feature channels + 1 mask channel.
template <class T>
struct EstimatorParams {
    struct Encoder {
        Conv<T> expand_in, widen, down;
    };
    struct Decoder {
        Deconv<T> up;
        Conv<T> mix_in, spatial, mix_out;
    };

    Conv<T> embed;
    Encoder encoder[2];
    std::vector<Conv<T>> aspp_branches;
    Conv<T> aspp_fuse;
    Decoder decoder[2];
    Conv<T> head;

    static EstimatorParams create(ParamStore<T>& store, const std::string& prefix, const EstimatorConfig& cfg,
                                  Rng& rng) {
        if (cfg.aspp_rates.empty()) throw ConfigError("estimator: ASPP needs at least one dilation rate");
        EstimatorParams p;
        const std::size_t c = cfg.channels;
        p.embed = make_conv<T>(store, prefix + ".embed", 1, cfg.in_channels, c, rng);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t cin = c << s, cout = cin * 2;
            const std::string name = prefix + ".enc" + std::to_string(s + 1);
            p.encoder[s].expand_in = make_conv<T>(store, name + ".pw1", 1, cin, cin, rng);
            p.encoder[s].widen = make_conv<T>(store, name + ".pw2", 1, cin, cout, rng);
            p.encoder[s].down = make_depthwise<T>(store, name + ".dw", cout, rng, 3, 2);
        }
        const std::size_t deep = 4 * c;
        for (std::size_t rate : cfg.aspp_rates)
            p.aspp_branches.push_back(
                make_depthwise<T>(store, prefix + ".aspp.rate" + std::to_string(rate), deep, rng, 3, 1, rate));
        p.aspp_fuse = make_conv<T>(store, prefix + ".aspp.fuse", 1, deep * cfg.aspp_rates.size(), deep, rng);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t cin = deep >> s, cout = cin / 2;
            const std::string name = prefix + ".dec" + std::to_string(s + 1);
            p.decoder[s].up = make_deconv<T>(store, name + ".up", 2, cin, cout, rng);
            p.decoder[s].mix_in = make_conv<T>(store, name + ".pw1", 1, cout, cout, rng);
            p.decoder[s].spatial = make_depthwise<T>(store, name + ".dw", cout, rng);
            p.decoder[s].mix_out = make_conv<T>(store, name + ".pw2", 1, cout, cout, rng);
        }
        p.head = make_conv<T>(store, prefix + ".head", 1, c, c + 1, rng);
        return p;
    }

    static std::size_t param_count(const EstimatorConfig& cfg) {
        const std::size_t c = cfg.channels, deep = 4 * c;
        auto conv1 = [](std::size_t i, std::size_t o) { return i * o + o; };
        auto dw = [](std::size_t ch) { return 9 * ch + ch; };
        std::size_t n = conv1(cfg.in_channels, c);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t cin = c << s;
            n += conv1(cin, cin) + conv1(cin, 2 * cin) + dw(2 * cin);
        }
        n += cfg.aspp_rates.size() * dw(deep) + conv1(deep * cfg.aspp_rates.size(), deep);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t cin = deep >> s, cout = cin / 2;
            n += 4 * cin * cout + cout + conv1(cout, cout) + dw(cout) + conv1(cout, cout);
        }
        n += conv1(c, c + 1);
        return n;
    }
};

template <class T>
struct EstimatorOutput {
    Tensor<T> features;  // X_0, [H, W, C]
    Tensor<T> mask;      // M_s, [H, W], nonnegative
};

template <class T>
EstimatorOutput<T> estimator_forward(const Tensor<T>& x, const EstimatorConfig& cfg, const EstimatorParams<T>& p) {
    if (x.ndim() != 3 || x.dim(2) != cfg.in_channels)
        throw DimensionError("estimator_forward: expected [H,W," + std::to_string(cfg.in_channels) + "], got " +
                             shape_str(x.shape()));
    if (x.dim(0) % 4 != 0 || x.dim(1) % 4 != 0)
        throw DimensionError("estimator_forward: spatial dims must be divisible by 4, got " + shape_str(x.shape()));
    Tensor<T> shallow = p.embed(x);
    Tensor<T> skips[2];
    Tensor<T> h = shallow;
    for (std::size_t s = 0; s < 2; ++s) {
        skips[s] = h;
        h = p.encoder[s].down(p.encoder[s].widen(gelu(p.encoder[s].expand_in(h))));
    }
    std::vector<Tensor<T>> branches;
    for (const auto& branch : p.aspp_branches) branches.push_back(gelu(branch(h)));
    h = p.aspp_fuse(concat(branches, 2));
    for (std::size_t s = 0; s < 2; ++s) {
        const auto& d = p.decoder[s];
        h = add(d.up(h), skips[1 - s]);
        h = d.mix_out(d.spatial(gelu(d.mix_in(h))));
    }
    Tensor<T> out = p.head(h);
    const std::size_t c = cfg.channels;
    return {slice_last(out, 0, c), reshape(relu(slice_last(out, c, 1)), Shape{x.dim(0), x.dim(1)})};
}

/// Band-averaged absolute reconstruction error, the sparsity-loss target.
inline Image2 reference_mask(const HsiCube& x_rec, const HsiCube& x_gt) {
    if (!x_rec.same_shape(x_gt))
        throw DimensionError("reference_mask: " + x_rec.shape_string() + " vs " + x_gt.shape_string());
    Image2 out(x_rec.height, x_rec.width);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) {
            double acc = 0.0;
            for (std::size_t n = 0; n < x_rec.bands; ++n) acc += std::abs(x_rec(y, x, n) - x_gt(y, x, n));
            out(y, x) = acc / static_cast<double>(x_rec.bands);
        }
    return out;
}

/// Tensor form; the result is detached so no gradient flows back into x_rec.
template <class T>
Tensor<T> reference_mask(const Tensor<T>& x_rec, const Tensor<T>& x_gt) {
    if (x_rec.shape() != x_gt.shape() || x_rec.ndim() != 3)
        throw DimensionError("reference_mask: " + shape_str(x_rec.shape()) + " vs " + shape_str(x_gt.shape()));
    const std::size_t n = x_rec.dim(2);
    std::vector<T> out(x_rec.numel() / n, T(0));
    for (std::size_t i = 0; i < x_rec.numel(); ++i) out[i / n] += std::abs(x_rec[i] - x_gt[i]);
    for (auto& v : out) v /= static_cast<T>(n);
    return Tensor<T>(Shape{x_rec.dim(0), x_rec.dim(1)}, std::move(out));
}

/// Mean over pixels of the squared mask difference.
template <class T>
Tensor<T> sparsity_loss(const Tensor<T>& m_pred, const Tensor<T>& m_ref) {
    return mse(m_pred, m_ref);
}

template <class T>
struct LossTerms {
    Tensor<T> total;
    Tensor<T> reconstruction;
    Tensor<T> sparsity;
};

/// reconstruction MSE + weight * sparsity MSE.
template <class T>
LossTerms<T> total_loss(const Tensor<T>& x_rec, const Tensor<T>& x_gt, const Tensor<T>& m_pred,
                        const Tensor<T>& m_ref, double weight) {
    LossTerms<T> terms;
    terms.reconstruction = mse(x_rec, x_gt);
    terms.sparsity = sparsity_loss(m_pred, m_ref.detach());
    terms.total = add(terms.reconstruction, scale(terms.sparsity, static_cast<T>(weight)));
    return terms;
}

/// Number of patches kept at sparsity ratio sigma out of `patches`.
inline std::size_t selected_count(std::size_t patches, double sigma) {
    // the epsilon absorbs representation error in (1 - sigma), e.g. 0.7 * 100 = 69.999...
    return static_cast<std::size_t>(std::floor((1.0 - sigma) * static_cast<double>(patches) + 1e-9));
}

/// Average-pools the mask per patch and keeps the k highest patches.
/// Equal pooled values prefer the smaller row-major patch index.
inline BinaryPatchMask select_patches(const Image2& mask, std::size_t patch_size, double sigma) {
    if (patch_size == 0 || mask.height % patch_size != 0 || mask.width % patch_size != 0)
        throw DimensionError("select_patches: patch size " + std::to_string(patch_size) + " does not tile " +
                             shape_str({mask.height, mask.width}));
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw ConfigError("select_patches: sparsity ratio must lie in [0, 1]");
    const std::size_t rows = mask.height / patch_size, cols = mask.width / patch_size;
    std::vector<double> pooled(rows * cols, 0.0);
    for (std::size_t y = 0; y < mask.height; ++y)
        for (std::size_t x = 0; x < mask.width; ++x) pooled[(y / patch_size) * cols + x / patch_size] += mask(y, x);
    for (auto& v : pooled) v /= static_cast<double>(patch_size * patch_size);

    std::vector<std::size_t> order(pooled.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] > pooled[b]; });
    const std::size_t k = selected_count(pooled.size(), sigma);
    BinaryPatchMask out = BinaryPatchMask::all(rows, cols, patch_size, false);
    for (std::size_t i = 0; i < k; ++i) out.grid[order[i]] = 1;
    return out;
}

/// Downsamples the selection grid for encoder stage `stage` (1-based) by 2^(stage-1);
/// a pooled cell is kept when at least half its children were kept.
inline BinaryPatchMask pool_mask_for_stage(const BinaryPatchMask& mask, std::size_t stage) {
    if (stage == 0) throw ConfigError("pool_mask_for_stage: stages are 1-based");
    const std::size_t f = std::size_t{1} << (stage - 1);
    if (mask.rows % f != 0 || mask.cols % f != 0)
        throw DimensionError("pool_mask_for_stage: grid " + shape_str({mask.rows, mask.cols}) +
                             " not divisible by " + std::to_string(f));
    BinaryPatchMask out = BinaryPatchMask::all(mask.rows / f, mask.cols / f, mask.patch_size, false);
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) {
            std::size_t on = 0;
            for (std::size_t dr = 0; dr < f; ++dr)
                for (std::size_t dc = 0; dc < f; ++dc) on += mask.selected(r * f + dr, c * f + dc);
            out.grid[r * out.cols + c] = (2 * on >= f * f) ? 1 : 0;
        }
    return out;
}

}  // namespace cst::sasm
