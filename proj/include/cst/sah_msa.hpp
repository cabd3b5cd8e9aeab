// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hash-bucketed multi-head self-attention.
//
// Tokens of a patch are hashed with a random projection h(x) = floor((a.x + b) / r),
// stably sorted by code, and cut into contiguous buckets of m tokens. Attention runs
// only inside a bucket. Several independent hash rounds are blended per (query, head)
// with weights proportional to the query's attention mass in each round.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cst/layers.hpp"
#include "cst/sasm.hpp"

namespace cst::attn {

struct HashRound {
    std::vector<double> a;
    double b = 0.0;
};

struct HashParams {
    double r = 1.0;
    std::vector<HashRound> rounds;

    /// a ~ N(0, I_C), b ~ U(0, r), one draw per round.
    static HashParams draw(std::size_t channels, std::size_t round_count, double r, Rng& rng) {
        if (!(r > 0.0)) throw ConfigError("HashParams: r must be positive");
        HashParams hp;
        hp.r = r;
        for (std::size_t i = 0; i < round_count; ++i) {
            HashRound round;
            round.a.resize(channels);
            for (auto& v : round.a) v = rng.normal();
            round.b = rng.uniform(0.0, r);
            hp.rounds.push_back(std::move(round));
        }
        return hp;
    }
};

/// Hash code of every row of a [N, C] token block (rows given as a flat row-major span).
template <class T>
std::vector<std::int64_t> hash_codes(std::span<const T> rows, std::size_t channels, const HashRound& round, double r) {
    if (round.a.size() != channels)
        throw DimensionError("hash_codes: projection of length " + std::to_string(round.a.size()) + " for " +
                             std::to_string(channels) + " channels");
    const std::size_t n = rows.size() / channels;
    std::vector<std::int64_t> codes(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = round.b;
        for (std::size_t c = 0; c < channels; ++c) {
            const double v = static_cast<double>(rows[i * channels + c]);
            if (!std::isfinite(v)) throw NumericError("hash_codes: non-finite token " + std::to_string(i));
            dot += round.a[c] * v;
        }
        codes[i] = static_cast<std::int64_t>(std::floor(dot / r));
    }
    return codes;
}

template <class T>
std::vector<std::int64_t> hash_codes(const Tensor<T>& tokens, const HashRound& round, double r) {
    if (tokens.ndim() != 2) throw DimensionError("hash_codes: expected [N,C], got " + shape_str(tokens.shape()));
    return hash_codes<T>(tokens.data(), tokens.dim(1), round, r);
}

/// order[p] is the token at sorted position p; bucket i holds positions [i*m, (i+1)*m).
struct BucketAssignment {
    std::vector<std::size_t> order;
    std::size_t bucket_size = 0;

    std::size_t bucket_count() const { return bucket_size == 0 ? 0 : order.size() / bucket_size; }

    std::vector<std::size_t> bucket(std::size_t i) const {
        return {order.begin() + static_cast<std::ptrdiff_t>(i * bucket_size),
                order.begin() + static_cast<std::ptrdiff_t>((i + 1) * bucket_size)};
    }

    /// bucket index of every token
    std::vector<std::size_t> bucket_of() const {
        std::vector<std::size_t> out(order.size());
        for (std::size_t p = 0; p < order.size(); ++p) out[order[p]] = p / bucket_size;
        return out;
    }
};

/// Stable sort by (code, original index), then contiguous buckets of m.
inline BucketAssignment bucketize(const std::vector<std::int64_t>& codes, std::size_t m) {
    if (m == 0 || codes.size() % m != 0)
        throw ConfigError("bucketize: " + std::to_string(codes.size()) + " tokens cannot form buckets of " +
                          std::to_string(m));
    BucketAssignment ba;
    ba.bucket_size = m;
    ba.order.resize(codes.size());
    std::iota(ba.order.begin(), ba.order.end(), 0);
    std::stable_sort(ba.order.begin(), ba.order.end(),
                     [&](std::size_t a, std::size_t b) { return codes[a] < codes[b]; });
    return ba;
}

/// Per-head projections stacked into [C, C] matrices: rows [n*d, (n+1)*d) of query/key/value
/// hold head n's U_n, V_n, W'_n; columns [n*d, (n+1)*d) of output hold W_n.
template <class T>
struct AttentionParams {
    std::size_t heads = 1;
    std::size_t head_dim = 0;
    Tensor<T> query;
    Tensor<T> key;
    Tensor<T> value;
    Tensor<T> output;

    std::size_t channels() const { return heads * head_dim; }

    static AttentionParams create(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                                  std::size_t head_dim, Rng& rng) {
        if (head_dim == 0 || channels % head_dim != 0)
            throw ConfigError("AttentionParams: head dim " + std::to_string(head_dim) + " must divide " +
                              std::to_string(channels));
        AttentionParams p;
        p.heads = channels / head_dim;
        p.head_dim = head_dim;
        p.query = store.add(prefix + ".query", fan_in_uniform<T>(Shape{channels, channels}, channels, rng));
        p.key = store.add(prefix + ".key", fan_in_uniform<T>(Shape{channels, channels}, channels, rng));
        p.value = store.add(prefix + ".value", fan_in_uniform<T>(Shape{channels, channels}, channels, rng));
        p.output = store.add(prefix + ".output", fan_in_uniform<T>(Shape{channels, channels}, channels, rng));
        return p;
    }

    static std::size_t param_count(std::size_t channels) { return 4 * channels * channels; }
};

/// How the per-round weights are scored.
enum class RoundWeighting {
    /// Sum of normalized attention over the round's bucket (each round sums to one).
    AttentionMass,
    /// Sum of exponentiated raw logits over the round's bucket.
    LogitMass,
};

// ---------------------------------------------------------------------------------------
// Block-diagonal attention kernels. Rows are grouped in consecutive blocks of `block`;
// row i only interacts with rows of its own block.

/// scores[i, h, j] = scale * <Q[i, head h], K[block_start(i) + j, head h]>, shape [L, heads, block].
template <class T>
Tensor<T> block_scores(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads, std::size_t block, T scale) {
    if (q.shape() != k.shape() || q.ndim() != 2 || heads == 0 || q.dim(1) % heads != 0 || block == 0 ||
        q.dim(0) % block != 0)
        throw DimensionError("block_scores: bad geometry q=" + shape_str(q.shape()) + " k=" + shape_str(k.shape()));
    const std::size_t L = q.dim(0), C = q.dim(1), d = C / heads;
    std::vector<T> out(L * heads * block);
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t base = (i / block) * block;
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < block; ++j) {
                T acc = 0;
                for (std::size_t t = 0; t < d; ++t) acc += q[i * C + h * d + t] * k[(base + j) * C + h * d + t];
                out[(i * heads + h) * block + j] = acc * scale;
            }
    }
    return detail::make_result<T>(
        "block_scores", Shape{L, heads, block}, std::move(out), {q, k}, [=](Node<T>& self) {
            auto& pq = self.parents[0];
            auto& pk = self.parents[1];
            T* gq = detail::wants_grad(pq) ? pq->grad_buffer().data() : nullptr;
            T* gk = detail::wants_grad(pk) ? pk->grad_buffer().data() : nullptr;
            for (std::size_t i = 0; i < L; ++i) {
                const std::size_t base = (i / block) * block;
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t j = 0; j < block; ++j) {
                        const T g = self.grad[(i * heads + h) * block + j] * scale;
                        for (std::size_t t = 0; t < d; ++t) {
                            const std::size_t qi = i * C + h * d + t, ki = (base + j) * C + h * d + t;
                            if (gq) gq[qi] += g * pk->data[ki];
                            if (gk) gk[ki] += g * pq->data[qi];
                        }
                    }
            }
        });
}

/// out[i, head h] = sum_j probs[i, h, j] * V[block_start(i) + j, head h], shape [L, C].
template <class T>
Tensor<T> block_mix(const Tensor<T>& probs, const Tensor<T>& v) {
    if (probs.ndim() != 3 || v.ndim() != 2 || probs.dim(0) != v.dim(0) || v.dim(1) % probs.dim(1) != 0 ||
        v.dim(0) % probs.dim(2) != 0)
        throw DimensionError("block_mix: probs " + shape_str(probs.shape()) + " vs values " + shape_str(v.shape()));
    const std::size_t L = v.dim(0), C = v.dim(1), heads = probs.dim(1), block = probs.dim(2), d = C / heads;
    std::vector<T> out(L * C, T(0));
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t base = (i / block) * block;
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < block; ++j) {
                const T p = probs[(i * heads + h) * block + j];
                for (std::size_t t = 0; t < d; ++t) out[i * C + h * d + t] += p * v[(base + j) * C + h * d + t];
            }
    }
    return detail::make_result<T>("block_mix", Shape{L, C}, std::move(out), {probs, v}, [=](Node<T>& self) {
        auto& pp = self.parents[0];
        auto& pv = self.parents[1];
        T* gp = detail::wants_grad(pp) ? pp->grad_buffer().data() : nullptr;
        T* gv = detail::wants_grad(pv) ? pv->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t base = (i / block) * block;
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t j = 0; j < block; ++j) {
                    const std::size_t pi = (i * heads + h) * block + j;
                    T acc = 0;
                    for (std::size_t t = 0; t < d; ++t) {
                        const T g = self.grad[i * C + h * d + t];
                        const std::size_t vi = (base + j) * C + h * d + t;
                        acc += g * pv->data[vi];
                        if (gv) gv[vi] += pp->data[pi] * g;
                    }
                    if (gp) gp[pi] += acc;
                }
        }
    });
}

/// out[i, head h] = x[i, head h] * w[i, h]; x: [L, C], w: [L, heads].
template <class T>
Tensor<T> head_scale(const Tensor<T>& x, const Tensor<T>& w) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(0) != w.dim(0) || w.dim(1) == 0 || x.dim(1) % w.dim(1) != 0)
        throw DimensionError("head_scale: x " + shape_str(x.shape()) + " vs weights " + shape_str(w.shape()));
    const std::size_t L = x.dim(0), C = x.dim(1), heads = w.dim(1), d = C / heads;
    std::vector<T> out(L * C);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t c = 0; c < C; ++c) out[i * C + c] = x[i * C + c] * w[i * heads + c / d];
    return detail::make_result<T>("head_scale", Shape{L, C}, std::move(out), {x, w}, [=](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        T* gx = detail::wants_grad(px) ? px->grad_buffer().data() : nullptr;
        T* gw = detail::wants_grad(pw) ? pw->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t c = 0; c < C; ++c) {
                const T g = self.grad[i * C + c];
                if (gx) gx[i * C + c] += g * pw->data[i * heads + c / d];
                if (gw) gw[i * heads + c / d] += g * px->data[i * C + c];
            }
    });
}

// ---------------------------------------------------------------------------------------

/// One hash round: head outputs (concatenated, before the output projection) and each
/// query's attention mass, both in original token order.
template <class T>
struct RoundResult {
    Tensor<T> heads;  // [L, C]
    Tensor<T> mass;   // [L, heads]
    Tensor<T> log_mass;  // log of summed exp(logits), [L, heads]
};

template <class T>
RoundResult<T> attend_round(const Tensor<T>& tokens, const BucketAssignment& ba, const AttentionParams<T>& ap) {
    if (tokens.ndim() != 2 || tokens.dim(1) != ap.channels())
        throw DimensionError("bucket_attention: tokens " + shape_str(tokens.shape()) + " for " +
                             std::to_string(ap.channels()) + " channels");
    if (ba.order.size() != tokens.dim(0) || ba.bucket_size == 0 || ba.order.size() % ba.bucket_size != 0)
        throw DimensionError("bucket_attention: assignment over " + std::to_string(ba.order.size()) +
                             " tokens for " + shape_str(tokens.shape()));
    const std::size_t L = tokens.dim(0);
    const Tensor<T> sorted = gather_rows(tokens, ba.order);
    const Tensor<T> q = matmul_nt(sorted, ap.query);
    const Tensor<T> k = matmul_nt(sorted, ap.key);
    const Tensor<T> v = matmul_nt(sorted, ap.value);
    const T scale = T(1) / std::sqrt(static_cast<T>(ap.head_dim));
    const Tensor<T> logits = block_scores(q, k, ap.heads, ba.bucket_size, scale);
    const Tensor<T> probs = softmax(logits, 2);
    RoundResult<T> r;
    r.heads = scatter_rows(block_mix(probs, v), ba.order, L);
    r.mass = scatter_rows(sum_last(probs), ba.order, L);
    r.log_mass = scatter_rows(logsumexp_last(logits), ba.order, L);
    return r;
}

/// Single-round bucket attention over [N, C] tokens.
template <class T>
RoundResult<T> bucket_attention(const Tensor<T>& tokens, const BucketAssignment& ba, const AttentionParams<T>& ap) {
    return attend_round(tokens, ba, ap);
}

/// Blends rounds with w_r = mass_r / sum_rho mass_rho per (query, head), then applies the
/// output projection. All assignments must range over the same rows.
template <class T>
Tensor<T> blend_rounds(const std::vector<RoundResult<T>>& rounds, const AttentionParams<T>& ap,
                       RoundWeighting weighting) {
    if (rounds.empty()) throw ConfigError("multi_round_attention: need at least one round");
    std::vector<Tensor<T>> mass;
    if (weighting == RoundWeighting::AttentionMass) {
        for (const auto& r : rounds) mass.push_back(r.mass);
    } else {
        // exp(log_mass - c) with a per-(query, head) constant c = max over rounds, for range safety
        std::vector<T> peak(rounds.front().log_mass.numel(), -std::numeric_limits<T>::infinity());
        for (const auto& r : rounds)
            for (std::size_t i = 0; i < peak.size(); ++i) peak[i] = std::max(peak[i], r.log_mass[i]);
        const Tensor<T> shift(rounds.front().log_mass.shape(), std::move(peak));
        for (const auto& r : rounds) mass.push_back(exp(sub(r.log_mass, shift)));
    }
    Tensor<T> total = mass.front();
    for (std::size_t i = 1; i < mass.size(); ++i) total = add(total, mass[i]);
    for (const T v : total.data())
        if (!(v > T(0))) throw NumericError("multi_round_attention: zero round-weight denominator");
    Tensor<T> blended;
    for (std::size_t i = 0; i < rounds.size(); ++i) {
        Tensor<T> term = head_scale(rounds[i].heads, div(mass[i], total));
        blended = blended.defined() ? add(blended, term) : term;
    }
    return matmul_nt(blended, ap.output);
}

/// [N, C] tokens of one patch -> [N, C] attention output.
template <class T>
Tensor<T> multi_round_attention(const Tensor<T>& tokens, const std::vector<BucketAssignment>& rounds,
                                const AttentionParams<T>& ap,
                                RoundWeighting weighting = RoundWeighting::AttentionMass) {
    std::vector<RoundResult<T>> results;
    for (const auto& ba : rounds) results.push_back(attend_round(tokens, ba, ap));
    return blend_rounds(results, ap, weighting);
}

/// Frozen or recorded routing decisions (patch selection and bucket orders), so that a
/// forward pass can be replayed with identical discrete choices.
struct Routing {
    enum class Mode { Compute, Record, Replay };
    Mode mode = Mode::Compute;
    std::optional<sasm::BinaryPatchMask> patch_mask;
    /// One entry per SAH-MSA call in forward order, each holding one assignment per round.
    std::vector<std::vector<BucketAssignment>> calls;
    std::size_t cursor = 0;

    void rewind() { cursor = 0; }
};

/// Row indices (into the flattened [H*W, C] map) of every selected patch, patch-major,
/// row-major inside each patch.
inline std::vector<std::size_t> selected_rows(const sasm::BinaryPatchMask& mask, std::size_t width) {
    const std::size_t p = mask.patch_size;
    std::vector<std::size_t> rows;
    rows.reserve(mask.count() * p * p);
    for (std::size_t r = 0; r < mask.rows; ++r)
        for (std::size_t c = 0; c < mask.cols; ++c) {
            if (!mask.selected(r, c)) continue;
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x) rows.push_back((r * p + y) * width + c * p + x);
        }
    return rows;
}

struct SahMsaOptions {
    std::size_t bucket_size = 64;
    RoundWeighting weighting = RoundWeighting::AttentionMass;
};

/// Attention branch over the selected patches of a [H, W, C] map; unselected positions
/// receive zero so the surrounding residual passes them through.
template <class T>
Tensor<T> sah_msa_forward(const Tensor<T>& feature, const sasm::BinaryPatchMask& mask, const AttentionParams<T>& ap,
                          const HashParams& hash, const SahMsaOptions& opt, Routing* routing = nullptr) {
    if (feature.ndim() != 3 || feature.dim(2) != ap.channels())
        throw DimensionError("sah_msa_forward: feature " + shape_str(feature.shape()) + " for " +
                             std::to_string(ap.channels()) + " channels");
    const std::size_t H = feature.dim(0), W = feature.dim(1), C = feature.dim(2), p = mask.patch_size;
    if (p == 0 || mask.rows * p != H || mask.cols * p != W)
        throw DimensionError("sah_msa_forward: mask grid " + shape_str({mask.rows, mask.cols}) + " x patch " +
                             std::to_string(p) + " does not cover feature " + shape_str(feature.shape()));
    const std::size_t tokens_per_patch = p * p;
    if (opt.bucket_size == 0 || tokens_per_patch % opt.bucket_size != 0)
        throw ConfigError("sah_msa_forward: " + std::to_string(tokens_per_patch) +
                          " tokens per patch cannot form buckets of " + std::to_string(opt.bucket_size));

    const std::vector<std::size_t> rows = selected_rows(mask, W);
    const std::size_t L = rows.size();
    std::vector<BucketAssignment> assignments;
    const bool replay = routing && routing->mode == Routing::Mode::Replay;
    if (replay) {
        if (routing->cursor >= routing->calls.size())
            throw ConfigError("sah_msa_forward: routing replay has no entry for call " +
                              std::to_string(routing->cursor));
        assignments = routing->calls[routing->cursor++];
        for (const auto& ba : assignments)
            if (ba.order.size() != L)
                throw DimensionError("sah_msa_forward: replayed assignment covers " + std::to_string(ba.order.size()) +
                                     " rows, selection has " + std::to_string(L));
    }
    if (L == 0) {
        if (routing && routing->mode == Routing::Mode::Record) routing->calls.emplace_back();
        return Tensor<T>::zeros(feature.shape());
    }

    const Tensor<T> flat = reshape(feature, Shape{H * W, C});
    const Tensor<T> tokens = gather_rows(flat, rows);
    if (!replay) {
        for (const auto& round : hash.rounds) {
            BucketAssignment global;
            global.bucket_size = opt.bucket_size;
            global.order.reserve(L);
            for (std::size_t start = 0; start < L; start += tokens_per_patch) {
                const auto codes = hash_codes<T>(tokens.data().subspan(start * C, tokens_per_patch * C), C, round, hash.r);
                const BucketAssignment local = bucketize(codes, opt.bucket_size);
                for (std::size_t idx : local.order) global.order.push_back(start + idx);
            }
            assignments.push_back(std::move(global));
        }
        if (routing && routing->mode == Routing::Mode::Record) routing->calls.push_back(assignments);
    }

    const Tensor<T> out = multi_round_attention(tokens, assignments, ap, opt.weighting);
    return reshape(scatter_rows(out, rows, H * W), Shape{H, W, C});
}

}  // namespace cst::attn
