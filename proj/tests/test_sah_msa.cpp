// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "cst/grad_check.hpp"
#include "cst/sah_msa.hpp"

using namespace cst;
using namespace cst::attn;
using T64 = Tensor<double>;

namespace {

T64 random(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed, streams::kTest);
    return T64::uniform(std::move(shape), rng, lo, hi);
}

struct Attn {
    ParamStore<double> store;
    AttentionParams<double> ap;
    Attn(std::size_t channels, std::size_t head_dim, std::uint64_t seed) {
        Rng rng(seed, streams::kInit);
        ap = AttentionParams<double>::create(store, "msa", channels, head_dim, rng);
    }
};

// Dense attention restricted to each bucket, straight from the per-head definitions.
// Returns heads [N, C] (before the output projection) and mass [N, heads].
std::pair<std::vector<double>, std::vector<double>> bucket_oracle(const T64& x, const BucketAssignment& ba,
                                                                  const AttentionParams<double>& ap) {
    const std::size_t N = x.dim(0), C = x.dim(1), d = ap.head_dim, H = ap.heads;
    auto proj = [&](const T64& w, std::size_t tok, std::size_t row) {
        double s = 0;
        for (std::size_t c = 0; c < C; ++c) s += w.at({row, c}) * x.at({tok, c});
        return s;
    };
    const auto bucket_of = ba.bucket_of();
    std::vector<double> heads(N * C, 0.0), mass(N * H, 0.0);
    for (std::size_t q = 0; q < N; ++q)
        for (std::size_t h = 0; h < H; ++h) {
            std::vector<std::size_t> keys;
            for (std::size_t k = 0; k < N; ++k)
                if (bucket_of[k] == bucket_of[q]) keys.push_back(k);
            std::vector<double> logit;
            for (std::size_t k : keys) {
                double s = 0;
                for (std::size_t t = 0; t < d; ++t) s += proj(ap.query, q, h * d + t) * proj(ap.key, k, h * d + t);
                logit.push_back(s / std::sqrt(static_cast<double>(d)));
            }
            const double mx = *std::max_element(logit.begin(), logit.end());
            double z = 0;
            for (double l : logit) z += std::exp(l - mx);
            for (std::size_t j = 0; j < keys.size(); ++j) {
                const double a = std::exp(logit[j] - mx) / z;
                mass[q * H + h] += a;
                for (std::size_t t = 0; t < d; ++t) heads[q * C + h * d + t] += a * proj(ap.value, keys[j], h * d + t);
            }
        }
    return {heads, mass};
}

std::vector<double> project_output(const std::vector<double>& heads, const T64& wout, std::size_t C) {
    std::vector<double> out(heads.size(), 0.0);
    for (std::size_t i = 0; i < heads.size() / C; ++i)
        for (std::size_t o = 0; o < C; ++o)
            for (std::size_t c = 0; c < C; ++c) out[i * C + o] += wout.at({o, c}) * heads[i * C + c];
    return out;
}

BucketAssignment random_assignment(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<std::int64_t> codes(n);
    for (auto& c : codes) c = static_cast<std::int64_t>(rng.next_u64() % 5) - 2;
    return bucketize(codes, m);
}

}  // namespace

TEST(HashCodes, HandValues) {
    const HashRound zero{{0.0, 0.0}, 0.7};
    const T64 x = random({5, 2}, 1, -10, 10);
    for (auto c : hash_codes(x, zero, 1.0)) EXPECT_EQ(c, 0);
    const HashRound r{{1.0, 0.0}, 0.3};
    EXPECT_EQ(hash_codes(T64(Shape{1, 2}, std::vector<double>{1.7, 9.9}), r, 1.0)[0], 2);
    // floor toward minus infinity
    EXPECT_EQ(hash_codes(T64(Shape{1, 2}, std::vector<double>{-0.8, 0.0}), r, 1.0)[0], -1);
}

TEST(HashCodes, TranslationShiftsCodesByOne) {
    // dyadic values keep every product exact: a.delta = r
    const HashRound round{{2.0, -1.0, 0.5}, 0.25};
    const double r = 0.5;
    Rng rng(2, streams::kTest);
    std::vector<double> xs(30), shifted(30);
    for (std::size_t i = 0; i < 30; ++i) xs[i] = static_cast<double>(static_cast<int>(rng.next_u64() % 256) - 128) / 64.0;
    const std::vector<double> delta{0.25, 0.0, 0.0};
    for (std::size_t i = 0; i < 30; ++i) shifted[i] = xs[i] + delta[i % 3];
    const auto a = hash_codes(T64(Shape{10, 3}, xs), round, r), b = hash_codes(T64(Shape{10, 3}, shifted), round, r);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(b[i], a[i] + 1);
}

TEST(HashCodes, RejectsNonFinite) {
    const HashRound round{{1.0}, 0.0};
    EXPECT_THROW((void)hash_codes(T64(Shape{2, 1}, std::vector<double>{0.0, NAN}), round, 1.0), NumericError);
    EXPECT_THROW((void)hash_codes(T64(Shape{2, 2}), round, 1.0), DimensionError);
}

TEST(Bucketize, ContractCases) {
    std::vector<std::int64_t> codes(256);
    Rng rng(3, streams::kTest);
    for (auto& c : codes) c = static_cast<std::int64_t>(rng.next_u64() % 9);
    const auto ba = bucketize(codes, 64);
    EXPECT_EQ(ba.bucket_count(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(ba.bucket(i).size(), 64u);

    const auto same = bucketize(std::vector<std::int64_t>(8, 3), 2);
    for (std::size_t p = 0; p < 8; ++p) EXPECT_EQ(same.order[p], p);

    std::vector<std::int64_t> ramp(8);
    std::iota(ramp.rbegin(), ramp.rend(), 0);  // 7, 6, ..., 0
    const auto rev = bucketize(ramp, 4);
    EXPECT_EQ(rev.bucket(0), (std::vector<std::size_t>{7, 6, 5, 4}));
    EXPECT_EQ(rev.bucket(1), (std::vector<std::size_t>{3, 2, 1, 0}));

    EXPECT_THROW((void)bucketize(std::vector<std::int64_t>(10, 0), 4), ConfigError);
}

TEST(Bucketize, InvariantsOnRandomSets) {
    Rng rng(4, streams::kTest);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::int64_t> codes(256);
        const std::uint64_t spread = 1 + rng.next_u64() % 40;
        for (auto& c : codes) c = static_cast<std::int64_t>(rng.next_u64() % spread) - 5;
        const auto ba = bucketize(codes, 64);
        std::vector<int> seen(256, 0);
        for (auto i : ba.order) ++seen[i];
        for (int s : seen) ASSERT_EQ(s, 1);
        for (std::size_t p = 1; p < 256; ++p) {
            const auto a = ba.order[p - 1], b = ba.order[p];
            ASSERT_LE(codes[a], codes[b]);
            if (codes[a] == codes[b]) {
                ASSERT_LT(a, b);
            }
        }
    }
}

TEST(BucketAttention, MatchesMaskedDenseOracle) {
    Rng rng(5, streams::kTest);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t heads = 1 + trial % 3, d = 2, C = heads * d;
        Attn a(C, d, 100 + trial);
        const T64 x = random({8, C}, 200 + trial, -2, 2);
        const auto ba = random_assignment(8, trial % 2 ? 4 : 2, rng);
        const auto r = bucket_attention(x, ba, a.ap);
        const auto [heads_ref, mass_ref] = bucket_oracle(x, ba, a.ap);
        for (std::size_t i = 0; i < heads_ref.size(); ++i) EXPECT_NEAR(r.heads[i], heads_ref[i], 1e-10);
        for (std::size_t i = 0; i < mass_ref.size(); ++i) EXPECT_NEAR(r.mass[i], 1.0, 1e-12);
    }
}

TEST(BucketAttention, SingletonBucketsAndZeroLogits) {
    Attn a(4, 2, 6);
    const T64 x = random({6, 4}, 7);
    const auto singles = bucketize(std::vector<std::int64_t>(6, 0), 1);
    const auto r = bucket_attention(x, singles, a.ap);
    const T64 wv = matmul_nt(x, a.ap.value);
    for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(r.heads[i], wv[i], 1e-14);

    for (auto& v : a.ap.query.mutable_data()) v = 0;
    for (auto& v : a.ap.key.mutable_data()) v = 0;
    const auto pairs = bucketize(std::vector<std::int64_t>{1, 0, 1, 0, 2, 2}, 2);
    const auto u = bucket_attention(x, pairs, a.ap);
    const auto bucket_of = pairs.bucket_of();
    for (std::size_t q = 0; q < 6; ++q)
        for (std::size_t c = 0; c < 4; ++c) {
            double mean = 0;
            for (std::size_t k = 0; k < 6; ++k)
                if (bucket_of[k] == bucket_of[q]) mean += wv.at({k, c}) / 2;
            EXPECT_NEAR(u.heads.at({q, c}), mean, 1e-14);
        }
}

TEST(BucketAttention, Locality) {
    Attn a(4, 2, 8);
    Rng rng(9, streams::kTest);
    const T64 x = random({16, 4}, 10);
    const auto ba = random_assignment(16, 4, rng);
    const auto base = bucket_attention(x, ba, a.ap);
    const auto bucket_of = ba.bucket_of();
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<double> zeroed = x.values();
        for (std::size_t t = 0; t < 16; ++t)
            if (bucket_of[t] == j)
                for (std::size_t c = 0; c < 4; ++c) zeroed[t * 4 + c] = 0.0;
        const auto r = bucket_attention(T64(Shape{16, 4}, zeroed), ba, a.ap);
        for (std::size_t t = 0; t < 16; ++t)
            if (bucket_of[t] != j) {
                for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r.heads.at({t, c}), base.heads.at({t, c}));
            }
    }
}

TEST(MultiRound, SingleRoundIsProjectedBucketAttention) {
    Attn a(4, 2, 11);
    Rng rng(12, streams::kTest);
    const T64 x = random({8, 4}, 13);
    const auto ba = random_assignment(8, 4, rng);
    const T64 y = multi_round_attention(x, {ba}, a.ap);
    const auto [heads, mass] = bucket_oracle(x, ba, a.ap);
    const auto ref = project_output(heads, a.ap.output, 4);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
}

TEST(MultiRound, WeightsSumToOneAndDuplicateRoundsCollapse) {
    Attn a(6, 3, 14);
    Rng rng(15, streams::kTest);
    const T64 x = random({16, 6}, 16);
    const auto b1 = random_assignment(16, 4, rng), b2 = random_assignment(16, 4, rng), b3 = random_assignment(16, 4, rng);
    // literal weighting: each round's mass is one, so w = 1/R and the output is the plain round average
    const T64 y = multi_round_attention(x, {b1, b2, b3}, a.ap);
    const auto h1 = bucket_oracle(x, b1, a.ap).first, h2 = bucket_oracle(x, b2, a.ap).first,
               h3 = bucket_oracle(x, b3, a.ap).first;
    std::vector<double> avg(h1.size());
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = (h1[i] + h2[i] + h3[i]) / 3;
    const auto ref = project_output(avg, a.ap.output, 6);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);

    for (auto weighting : {RoundWeighting::AttentionMass, RoundWeighting::LogitMass}) {
        const T64 once = multi_round_attention(x, {b1}, a.ap, weighting);
        const T64 twice = multi_round_attention(x, {b1, b1}, a.ap, weighting);
        for (std::size_t i = 0; i < once.numel(); ++i) EXPECT_NEAR(twice[i], once[i], 1e-12);
    }
}

TEST(MultiRound, LogitMassWeightsMatchOracle) {
    Attn a(4, 2, 17);
    Rng rng(18, streams::kTest);
    const T64 x = random({8, 4}, 19, -2, 2);
    const auto b1 = random_assignment(8, 2, rng), b2 = random_assignment(8, 4, rng);
    const T64 y = multi_round_attention(x, {b1, b2}, a.ap, RoundWeighting::LogitMass);
    // w_r proportional to sum_k exp(logit) inside the query's round-r bucket
    auto logit_mass = [&](const BucketAssignment& ba) {
        const auto bo = ba.bucket_of();
        std::vector<double> out(8 * 2, 0.0);
        const T64 q = matmul_nt(x, a.ap.query), k = matmul_nt(x, a.ap.key);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t j = 0; j < 8; ++j) {
                    if (bo[j] != bo[i]) continue;
                    double s = 0;
                    for (std::size_t t = 0; t < 2; ++t) s += q.at({i, h * 2 + t}) * k.at({j, h * 2 + t});
                    out[i * 2 + h] += std::exp(s / std::sqrt(2.0));
                }
        return out;
    };
    const auto m1 = logit_mass(b1), m2 = logit_mass(b2);
    const auto h1 = bucket_oracle(x, b1, a.ap).first, h2 = bucket_oracle(x, b2, a.ap).first;
    std::vector<double> blend(32);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t c = 0; c < 4; ++c) {
            const std::size_t h = c / 2;
            const double w1 = m1[i * 2 + h] / (m1[i * 2 + h] + m2[i * 2 + h]);
            blend[i * 4 + c] = w1 * h1[i * 4 + c] + (1 - w1) * h2[i * 4 + c];
        }
    const auto ref = project_output(blend, a.ap.output, 4);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
}

TEST(SahMsa, MaskGating) {
    Attn a(4, 2, 20);
    Rng hr(21, streams::kHash);
    const HashParams hp = HashParams::draw(4, 2, 1.0, hr);
    const SahMsaOptions opt{4, RoundWeighting::AttentionMass};
    const T64 f = random({8, 8, 4}, 22);

    const T64 none = sah_msa_forward(f, sasm::BinaryPatchMask::all(2, 2, 4, false), a.ap, hp, opt);
    for (double v : none.data()) EXPECT_EQ(v, 0.0);

    // one patch covering everything equals multi_round_attention on that patch
    const T64 small = random({4, 4, 4}, 23);
    const T64 whole = sah_msa_forward(small, sasm::BinaryPatchMask::all(1, 1, 4, true), a.ap, hp, opt);
    const T64 tokens = reshape(small, {16, 4});
    std::vector<BucketAssignment> rounds;
    for (const auto& r : hp.rounds) rounds.push_back(bucketize(hash_codes(tokens, r, hp.r), 4));
    const T64 direct = multi_round_attention(tokens, rounds, a.ap);
    for (std::size_t i = 0; i < direct.numel(); ++i) EXPECT_EQ(whole[i], direct[i]);

    // checkerboard: each selected window matches a per-window computation, others stay zero
    sasm::BinaryPatchMask board = sasm::BinaryPatchMask::all(2, 2, 4, false);
    board.grid = {1, 0, 0, 1};
    const T64 y = sah_msa_forward(f, board, a.ap, hp, opt);
    for (std::size_t pr = 0; pr < 2; ++pr)
        for (std::size_t pc = 0; pc < 2; ++pc) {
            std::vector<double> win;
            for (std::size_t yy = 0; yy < 4; ++yy)
                for (std::size_t xx = 0; xx < 4; ++xx)
                    for (std::size_t c = 0; c < 4; ++c) win.push_back(f.at({pr * 4 + yy, pc * 4 + xx, c}));
            const T64 wt(Shape{16, 4}, win);
            std::vector<BucketAssignment> wr;
            for (const auto& r : hp.rounds) wr.push_back(bucketize(hash_codes(wt, r, hp.r), 4));
            const T64 expect = multi_round_attention(wt, wr, a.ap);
            for (std::size_t yy = 0; yy < 4; ++yy)
                for (std::size_t xx = 0; xx < 4; ++xx)
                    for (std::size_t c = 0; c < 4; ++c) {
                        const double got = y.at({pr * 4 + yy, pc * 4 + xx, c});
                        if (board.selected(pr, pc))
                            EXPECT_NEAR(got, expect.at({yy * 4 + xx, c}), 1e-14);
                        else
                            EXPECT_EQ(got, 0.0);
                    }
        }
    EXPECT_THROW((void)sah_msa_forward(f, sasm::BinaryPatchMask::all(3, 2, 4, true), a.ap, hp, opt), DimensionError);
    EXPECT_THROW((void)sah_msa_forward(f, board, a.ap, hp, SahMsaOptions{5}), ConfigError);
}

TEST(SahMsa, GradCheckWithFrozenBuckets) {
    for (auto weighting : {RoundWeighting::AttentionMass, RoundWeighting::LogitMass}) {
        Attn a(4, 2, 24);
        Rng hr(25, streams::kHash);
        const HashParams hp = HashParams::draw(4, 2, 1.0, hr);
        const SahMsaOptions opt{4, weighting};
        T64 f = random({8, 8, 4}, 26);
        sasm::BinaryPatchMask board = sasm::BinaryPatchMask::all(2, 2, 4, false);
        board.grid = {1, 1, 0, 1};
        Routing routing;
        routing.mode = Routing::Mode::Record;
        (void)sah_msa_forward(f, board, a.ap, hp, opt, &routing);
        routing.mode = Routing::Mode::Replay;
        const T64 w = random({8, 8, 4}, 27);
        std::vector<T64> inputs{f};
        for (const auto& t : a.store.tensors()) inputs.push_back(t);
        const double err = grad_check<double>(
            [&] {
                routing.rewind();
                return sum(mul(sah_msa_forward(f, board, a.ap, hp, opt, &routing), w));
            },
            inputs);
        EXPECT_LT(err, 1e-4);
    }
}

TEST(Lsh, CollisionProbabilityFallsWithDistance) {
    // 1000 random pairs at distances spread over [0, 4); 64 independent hashes per pair
    const std::size_t C = 8, pairs = 1000, draws = 64, bins = 4;
    Rng rng(28, streams::kTest);
    std::vector<double> hit(bins, 0.0), count(bins, 0.0);
    for (std::size_t p = 0; p < pairs; ++p) {
        const double dist = 4.0 * static_cast<double>(p) / pairs;
        std::vector<double> x(C), dir(C);
        double norm = 0;
        for (std::size_t c = 0; c < C; ++c) {
            x[c] = rng.normal();
            dir[c] = rng.normal();
            norm += dir[c] * dir[c];
        }
        std::vector<double> rows(2 * C);
        for (std::size_t c = 0; c < C; ++c) {
            rows[c] = x[c];
            rows[C + c] = x[c] + dist * dir[c] / std::sqrt(norm);
        }
        const HashParams hp = HashParams::draw(C, draws, 1.0, rng);
        double same = 0;
        for (const auto& round : hp.rounds) {
            const auto codes = hash_codes<double>(std::span<const double>(rows), C, round, 1.0);
            same += codes[0] == codes[1];
        }
        const std::size_t bin = p * bins / pairs;
        hit[bin] += same / draws;
        count[bin] += 1;
    }
    for (std::size_t b = 1; b < bins; ++b) EXPECT_LE(hit[b] / count[b], hit[b - 1] / count[b - 1]) << b;
    EXPECT_GT(hit[0] / count[0], hit[bins - 1] / count[bins - 1] + 0.2);
}

TEST(HashParams, DrawIsSeededAndRanged) {
    Rng a(29, streams::kHash), b(29, streams::kHash);
    const auto p = HashParams::draw(5, 3, 0.5, a), q = HashParams::draw(5, 3, 0.5, b);
    ASSERT_EQ(p.rounds.size(), 3u);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(p.rounds[r].a, q.rounds[r].a);
        EXPECT_GE(p.rounds[r].b, 0.0);
        EXPECT_LT(p.rounds[r].b, 0.5);
    }
    Rng c(1, streams::kHash);
    EXPECT_THROW((void)HashParams::draw(5, 1, 0.0, c), ConfigError);
}
