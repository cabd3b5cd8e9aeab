// SPDX-License-Identifier: Apache-2.0
#pragma once

// Coarse-to-fine sparse Transformer: shift-back initialization, sparsity estimator,
// three-stage encoder/bottleneck/decoder of hashing-attention blocks, residual head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cst/cassi.hpp"
#include "cst/sah_msa.hpp"
#include "cst/sasm.hpp"

namespace cst::model {

struct CstConfig {
    std::array<std::size_t, 3> blocks{2, 2, 2};
    std::size_t channels = 28;
    std::size_t bands = 28;
    std::size_t patch_size = 16;
    std::size_t bucket_size = 64;
    std::size_t rounds = 2;
    std::size_t head_dim = 28;
    std::size_t shift_step = 2;
    double sparsity = 0.5;
    double loss_weight = 2.0;
    double hash_r = 1.0;
    attn::RoundWeighting weighting = attn::RoundWeighting::AttentionMass;
    bool resample_hashes = false;
    std::vector<std::size_t> aspp_rates{1, 2, 4};

    bool operator==(const CstConfig&) const = default;

    /// "cst-s", "cst-m", "cst-l", "cst-l*" (cst-l with sparsity 0) or "desk" (32x32x4 toy scale).
    static CstConfig preset(std::string_view name) {
        CstConfig cfg;
        if (name == "cst-s") {
            cfg.blocks = {1, 1, 2};
        } else if (name == "cst-m") {
            cfg.blocks = {2, 2, 2};
        } else if (name == "cst-l") {
            cfg.blocks = {2, 4, 6};
        } else if (name == "cst-l*") {
            cfg.blocks = {2, 4, 6};
            cfg.sparsity = 0.0;
        } else if (name == "desk") {
            cfg.blocks = {1, 1, 1};
            cfg.channels = 4;
            cfg.bands = 4;
            cfg.patch_size = 8;
            cfg.bucket_size = 16;
            cfg.head_dim = 4;
        } else {
            throw ConfigError("unknown model preset '" + std::string(name) + "'");
        }
        return cfg;
    }

    sasm::EstimatorConfig estimator() const { return {bands, channels, aspp_rates}; }

    void validate() const {
        if (channels == 0 || bands == 0 || patch_size == 0 || bucket_size == 0 || rounds == 0)
            throw ConfigError("config: channels, bands, patch_size, bucket_size and rounds must be positive");
        if ((patch_size * patch_size) % bucket_size != 0)
            throw ConfigError("config: bucket_size " + std::to_string(bucket_size) + " must divide patch_size^2 = " +
                              std::to_string(patch_size * patch_size));
        if (head_dim == 0 || channels % head_dim != 0)
            throw ConfigError("config: head_dim " + std::to_string(head_dim) + " must divide channels " +
                              std::to_string(channels));
        if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw ConfigError("config: sparsity must lie in [0, 1]");
        if (!(loss_weight >= 0.0)) throw ConfigError("config: loss_weight must be nonnegative");
        if (!(hash_r > 0.0)) throw ConfigError("config: hash_r must be positive");
        if (aspp_rates.empty()) throw ConfigError("config: aspp_rates must not be empty");
    }

    /// Spatial sizes must tile into patches at the quarter-resolution bottleneck.
    void validate_geometry(std::size_t height, std::size_t width) const {
        const std::size_t unit = 4 * patch_size;
        if (height == 0 || width == 0 || height % unit != 0 || width % unit != 0)
            throw ConfigError("geometry: height and width must be multiples of 4 * patch_size = " +
                              std::to_string(unit) + ", got " + std::to_string(height) + "x" + std::to_string(width));
    }
};

/// Pre-norm block: x + MSA(LN(x)), then + FFN(LN(.)).
template <class T>
struct SahabParams {
    LayerNorm<T> norm_attn;
    attn::AttentionParams<T> attention;
    attn::HashParams hash;
    LayerNorm<T> norm_ffn;
    Conv<T> ffn_in;
    Conv<T> ffn_spatial;
    Conv<T> ffn_out;

    static SahabParams create(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                              const CstConfig& cfg, Rng& init_rng, Rng& hash_rng) {
        SahabParams p;
        p.norm_attn = make_layer_norm<T>(store, prefix + ".norm1", channels);
        p.attention = attn::AttentionParams<T>::create(store, prefix + ".msa", channels, cfg.head_dim, init_rng);
        p.hash = attn::HashParams::draw(channels, cfg.rounds, cfg.hash_r, hash_rng);
        p.norm_ffn = make_layer_norm<T>(store, prefix + ".norm2", channels);
        p.ffn_in = make_conv<T>(store, prefix + ".ffn.pw1", 1, channels, 4 * channels, init_rng);
        p.ffn_spatial = make_depthwise<T>(store, prefix + ".ffn.dw", 4 * channels, init_rng);
        p.ffn_out = make_conv<T>(store, prefix + ".ffn.pw2", 1, 4 * channels, channels, init_rng);
        return p;
    }

    static std::size_t param_count(std::size_t c) {
        return 2 * (2 * c) + attn::AttentionParams<T>::param_count(c) + (c * 4 * c + 4 * c) + (9 * 4 * c + 4 * c) +
               (4 * c * c + c);
    }
};

template <class T>
Tensor<T> sahab_forward(const Tensor<T>& x, const sasm::BinaryPatchMask& mask, const SahabParams<T>& p,
                        const attn::SahMsaOptions& opt, attn::Routing* routing = nullptr) {
    Tensor<T> y = add(x, attn::sah_msa_forward(p.norm_attn(x), mask, p.attention, p.hash, opt, routing));
    Tensor<T> ffn = p.ffn_out(gelu(p.ffn_spatial(gelu(p.ffn_in(p.norm_ffn(y))))));
    return add(y, ffn);
}

template <class T>
struct CstOutput {
    Tensor<T> reconstruction;  // X' = X + R, [H, W, bands]
    Tensor<T> sparsity_mask;   // M_s, [H, W]
    Tensor<T> initial;         // X, [H, W, bands]
    sasm::BinaryPatchMask selection;  // stage-1 M_d
};

template <class T>
class CstModel {
public:
    CstModel(const CstConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
        cfg_.validate();
        Rng init(seed, streams::kInit);
        Rng hash(seed, streams::kHash);
        const std::size_t c = cfg_.channels, n = cfg_.bands;

        input_proj_ = make_conv<T>(store_, "input_proj", 1, 2 * n, n, init);
        // start as the identity on the shift-back channels, ignoring the mask channels
        input_proj_.zero_init();
        for (std::size_t k = 0; k < n; ++k) input_proj_.weight.mutable_data()[k * n + k] = T(1);

        estimator_ = sasm::EstimatorParams<T>::create(store_, "estimator", cfg_.estimator(), init);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t width = c << s;
            for (std::size_t b = 0; b < cfg_.blocks[s]; ++b)
                encoder_[s].push_back(SahabParams<T>::create(
                    store_, "encoder" + std::to_string(s + 1) + ".block" + std::to_string(b), width, cfg_, init, hash));
            down_[s] = make_conv<T>(store_, "encoder" + std::to_string(s + 1) + ".down", 4, width, 2 * width, init,
                                    Conv2dOptions{2, 1, 1, 1}, false);
        }
        for (std::size_t b = 0; b < cfg_.blocks[2]; ++b)
            bottleneck_.push_back(
                SahabParams<T>::create(store_, "bottleneck.block" + std::to_string(b), 4 * c, cfg_, init, hash));
        for (std::size_t s = 0; s < 2; ++s) {
            // s = 0 restores stage 2, s = 1 restores stage 1
            const std::size_t stage = 1 - s;
            const std::size_t width = c << stage;
            up_[s] = make_deconv<T>(store_, "decoder" + std::to_string(stage + 1) + ".up", 2, 2 * width, width, init);
            for (std::size_t b = 0; b < cfg_.blocks[stage]; ++b)
                decoder_[s].push_back(SahabParams<T>::create(
                    store_, "decoder" + std::to_string(stage + 1) + ".block" + std::to_string(b), width, cfg_, init,
                    hash));
        }
        output_proj_ = make_conv<T>(store_, "output_proj", 3, c, n, init, Conv2dOptions{1, 1, 1, 1});
        output_proj_.zero_init();
    }

    const CstConfig& config() const { return cfg_; }
    CstConfig& mutable_config() { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    /// Every block's hash parameters, in forward order.
    std::vector<attn::HashParams*> hash_params() {
        std::vector<attn::HashParams*> out;
        auto collect = [&](std::vector<SahabParams<T>>& blocks) {
            for (auto& b : blocks) out.push_back(&b.hash);
        };
        collect(encoder_[0]);
        collect(encoder_[1]);
        collect(bottleneck_);
        collect(decoder_[0]);
        collect(decoder_[1]);
        return out;
    }

    /// Redraws every block's hash projections (used when per-step resampling is enabled).
    void resample_hashes(Rng& rng) {
        for (auto* hp : hash_params()) *hp = attn::HashParams::draw(hp->rounds.front().a.size(), cfg_.rounds, cfg_.hash_r, rng);
    }

    SahabParams<T>& block(std::string_view where, std::size_t index) {
        if (where == "encoder1") return encoder_[0].at(index);
        if (where == "encoder2") return encoder_[1].at(index);
        if (where == "bottleneck") return bottleneck_.at(index);
        if (where == "decoder2") return decoder_[0].at(index);
        if (where == "decoder1") return decoder_[1].at(index);
        throw ConfigError("CstModel::block: unknown stage '" + std::string(where) + "'");
    }

    Conv<T>& output_projection() { return output_proj_; }
    Conv<T>& input_projection() { return input_proj_; }

    /// shifted: shift-back cube [H, W, bands]; mask3d: replicated coded aperture [H, W, bands].
    CstOutput<T> forward(const Tensor<T>& shifted, const Tensor<T>& mask3d, attn::Routing* routing = nullptr) const {
        if (shifted.ndim() != 3 || shifted.dim(2) != cfg_.bands || shifted.shape() != mask3d.shape())
            throw DimensionError("cst_forward: shift-back " + shape_str(shifted.shape()) + " and mask " +
                                 shape_str(mask3d.shape()) + " for " + std::to_string(cfg_.bands) + " bands");
        const std::size_t H = shifted.dim(0), W = shifted.dim(1);
        cfg_.validate_geometry(H, W);
        if (routing) routing->rewind();

        CstOutput<T> out;
        out.initial = input_proj_(concat<T>({shifted, mask3d}, 2));
        auto est = sasm::estimator_forward(out.initial, cfg_.estimator(), estimator_);
        out.sparsity_mask = est.mask;

        if (routing && routing->mode == attn::Routing::Mode::Replay && routing->patch_mask) {
            out.selection = *routing->patch_mask;
        } else {
            out.selection = sasm::select_patches(to_image(est.mask), cfg_.patch_size, cfg_.sparsity);
            if (routing && routing->mode == attn::Routing::Mode::Record) routing->patch_mask = out.selection;
        }
        const sasm::BinaryPatchMask stage_mask[3] = {out.selection, sasm::pool_mask_for_stage(out.selection, 2),
                                                     sasm::pool_mask_for_stage(out.selection, 3)};
        const attn::SahMsaOptions opt{cfg_.bucket_size, cfg_.weighting};

        Tensor<T> h = est.features;
        Tensor<T> skips[2];
        for (std::size_t s = 0; s < 2; ++s) {
            for (const auto& b : encoder_[s]) h = sahab_forward(h, stage_mask[s], b, opt, routing);
            skips[s] = h;
            h = down_[s](h);
        }
        for (const auto& b : bottleneck_) h = sahab_forward(h, stage_mask[2], b, opt, routing);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t stage = 1 - s;
            h = add(up_[s](h), skips[stage]);
            for (const auto& b : decoder_[s]) h = sahab_forward(h, stage_mask[stage], b, opt, routing);
        }
        out.reconstruction = add(out.initial, output_proj_(h));
        return out;
    }

    /// Full pipeline from a sensor measurement and the physical mask.
    CstOutput<T> forward(const optics::Measurement& y, const optics::CodedAperture& mask,
                         attn::Routing* routing = nullptr) const {
        if (y.bands != cfg_.bands || y.shift_step != cfg_.shift_step)
            throw DimensionError("cst_forward: measurement recorded with " + std::to_string(y.bands) + " bands, step " +
                                 std::to_string(y.shift_step) + "; model expects " + std::to_string(cfg_.bands) +
                                 ", " + std::to_string(cfg_.shift_step));
        const HsiCube shifted = optics::shift_back(y, cfg_.shift_step, cfg_.bands, mask.pattern.width);
        return forward(to_tensor<T>(shifted), to_tensor<T>(mask.replicate(cfg_.bands)), routing);
    }

private:
    CstConfig cfg_;
    std::uint64_t seed_;
    ParamStore<T> store_;
    Conv<T> input_proj_;
    sasm::EstimatorParams<T> estimator_;
    std::vector<SahabParams<T>> encoder_[2];
    Conv<T> down_[2];
    std::vector<SahabParams<T>> bottleneck_;
    Deconv<T> up_[2];
    std::vector<SahabParams<T>> decoder_[2];
    Conv<T> output_proj_;
};

template <class T>
CstOutput<T> cst_forward(const optics::Measurement& y, const optics::CodedAperture& mask, const CstModel<T>& model,
                         attn::Routing* routing = nullptr) {
    return model.forward(y, mask, routing);
}

/// Learnable scalar count derived from layer shapes alone.
inline std::size_t count_params(const CstConfig& cfg) {
    const std::size_t c = cfg.channels, n = cfg.bands;
    auto sahab = [](std::size_t w) { return SahabParams<double>::param_count(w); };
    std::size_t total = 2 * n * n + n;
    total += sasm::EstimatorParams<double>::param_count(cfg.estimator());
    for (std::size_t s = 0; s < 2; ++s) {
        const std::size_t w = c << s;
        total += cfg.blocks[s] * sahab(w) + 16 * w * 2 * w;       // blocks + conv4x4 down (no bias)
        total += 4 * 2 * w * w + w + cfg.blocks[s] * sahab(w);    // deconv2x2 up + decoder blocks
    }
    total += cfg.blocks[2] * sahab(4 * c);
    total += 9 * c * n + n;
    return total;
}

// ---------------------------------------------------------------------------------------
// FLOPs: 2 x multiply-accumulates of convolutions, matrix products and attention products.
// Elementwise work (norms, activations, softmax) is not counted.

inline double conv_flops(std::size_t out_h, std::size_t out_w, std::size_t kernel, std::size_t cin, std::size_t cout,
                         std::size_t groups = 1) {
    return 2.0 * static_cast<double>(out_h * out_w) * static_cast<double>(kernel * kernel) *
           static_cast<double>(cin / groups) * static_cast<double>(cout);
}

/// FLOPs of one hashing-attention block's attention branch over `patches` selected patches.
inline double attention_flops(const CstConfig& cfg, std::size_t channels, std::size_t patches) {
    const double n = static_cast<double>(cfg.patch_size * cfg.patch_size);
    const double c = static_cast<double>(channels), m = static_cast<double>(cfg.bucket_size);
    const double r = static_cast<double>(cfg.rounds);
    const double per_patch = r * (n * c /*hash*/ + 3.0 * n * c * c /*q,k,v*/ + 2.0 * n * m * c /*scores, mix*/) +
                             n * c * c /*output projection*/;
    return 2.0 * per_patch * static_cast<double>(patches);
}

struct FlopReport {
    double total = 0.0;
    double attention = 0.0;
    std::array<double, 3> attention_per_stage{};
};

/// selected[i] = number of selected patches at stage i+1.
inline FlopReport count_flops(const CstConfig& cfg, std::size_t height, std::size_t width,
                              const std::array<std::size_t, 3>& selected) {
    const std::size_t c = cfg.channels, n = cfg.bands;
    FlopReport rep;
    double dense = conv_flops(height, width, 1, 2 * n, n);  // input projection
    // estimator
    {
        const std::size_t k = cfg.aspp_rates.size();
        dense += conv_flops(height, width, 1, n, c);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t h = height >> s, w = width >> s, cin = c << s;
            dense += conv_flops(h, w, 1, cin, cin) + conv_flops(h, w, 1, cin, 2 * cin) +
                     conv_flops(h / 2, w / 2, 3, 2 * cin, 2 * cin, 2 * cin);
        }
        const std::size_t hq = height / 4, wq = width / 4, deep = 4 * c;
        dense += static_cast<double>(k) * conv_flops(hq, wq, 3, deep, deep, deep) + conv_flops(hq, wq, 1, k * deep, deep);
        for (std::size_t s = 0; s < 2; ++s) {
            const std::size_t cin = deep >> s, cout = cin / 2;
            const std::size_t h = hq << (s + 1), w = wq << (s + 1);
            dense += conv_flops(h / 2, w / 2, 2, cin, cout) + conv_flops(h, w, 1, cout, cout) +
                     conv_flops(h, w, 3, cout, cout, cout) + conv_flops(h, w, 1, cout, cout);
        }
        dense += conv_flops(height, width, 1, c, c + 1);
    }
    auto ffn = [](std::size_t h, std::size_t w, std::size_t ch) {
        return conv_flops(h, w, 1, ch, 4 * ch) + conv_flops(h, w, 3, 4 * ch, 4 * ch, 4 * ch) +
               conv_flops(h, w, 1, 4 * ch, ch);
    };
    for (std::size_t stage = 0; stage < 3; ++stage) {
        const std::size_t h = height >> stage, w = width >> stage, ch = c << stage;
        // encoder + decoder share stages 1 and 2; stage 3 is the bottleneck
        const std::size_t block_count = stage < 2 ? 2 * cfg.blocks[stage] : cfg.blocks[2];
        dense += static_cast<double>(block_count) * ffn(h, w, ch);
        rep.attention_per_stage[stage] = static_cast<double>(block_count) * attention_flops(cfg, ch, selected[stage]);
        rep.attention += rep.attention_per_stage[stage];
        if (stage < 2) {
            dense += conv_flops(h / 2, w / 2, 4, ch, 2 * ch);  // downsample
            dense += conv_flops(h / 2, w / 2, 2, 2 * ch, ch);  // upsample (input-resolution taps)
        }
    }
    dense += conv_flops(height, width, 3, c, n);  // residual head
    rep.total = dense + rep.attention;
    return rep;
}

/// Per-stage selected-patch counts assuming each stage keeps the same fraction as stage 1.
inline std::array<std::size_t, 3> nominal_selection(const CstConfig& cfg, std::size_t height, std::size_t width) {
    std::array<std::size_t, 3> out{};
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t grid = (height >> s) / cfg.patch_size * ((width >> s) / cfg.patch_size);
        out[s] = sasm::selected_count(grid, cfg.sparsity);
    }
    return out;
}

}  // namespace cst::model
