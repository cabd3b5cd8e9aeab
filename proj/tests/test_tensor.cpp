// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cst/nn_ops.hpp"
#include "cst/ops.hpp"

using namespace cst;
using T64 = Tensor<double>;

namespace {

T64 random(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed, streams::kTest);
    return T64::uniform(std::move(shape), rng, lo, hi);
}

// Direct definition of a grouped, dilated, strided, zero-padded convolution on [H,W,C].
std::vector<double> conv_oracle(const T64& x, const T64& w, const T64& b, Conv2dOptions o) {
    const long H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const long KH = w.dim(0), KW = w.dim(1), cout = w.dim(3);
    const long cin_g = cin / o.groups, cout_g = cout / o.groups;
    const long s = o.stride, p = o.padding, d = o.dilation;
    const long OH = (H + 2 * p - d * (KH - 1) - 1) / s + 1, OW = (W + 2 * p - d * (KW - 1) - 1) / s + 1;
    std::vector<double> out(OH * OW * cout);
    for (long oy = 0; oy < OH; ++oy)
        for (long ox = 0; ox < OW; ++ox)
            for (long co = 0; co < cout; ++co) {
                double acc = b.defined() ? b[co] : 0.0;
                const long grp = co / cout_g;
                for (long ky = 0; ky < KH; ++ky)
                    for (long kx = 0; kx < KW; ++kx)
                        for (long ci = 0; ci < cin_g; ++ci) {
                            const long iy = oy * s + ky * d - p, ix = ox * s + kx * d - p;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += x.at({std::size_t(iy), std::size_t(ix), std::size_t(grp * cin_g + ci)}) *
                                   w.at({std::size_t(ky), std::size_t(kx), std::size_t(ci), std::size_t(co)});
                        }
                out[(oy * OW + ox) * cout + co] = acc;
            }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

TEST(Ops, MatmulIdentity) {
    const T64 eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
    const T64 a = random({2, 2}, 1);
    const T64 y = matmul(eye, a);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], a[i]);
}

TEST(Ops, MatmulMatchesLoop) {
    const T64 a = random({3, 5}, 2), b = random({5, 4}, 3);
    const T64 y = matmul(a, b);
    const T64 yt = matmul_nt(a, permute(b, {1, 0}));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 5; ++k) acc += a.at({i, k}) * b.at({k, j});
            EXPECT_NEAR(y.at({i, j}), acc, 1e-14);
            EXPECT_NEAR(yt.at({i, j}), acc, 1e-14);
        }
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
    const T64 a = T64::zeros({2, 3}), b = T64::zeros({3, 2});
    try {
        (void)add(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
    }
    EXPECT_THROW((void)matmul(a, a), DimensionError);
}

TEST(Ops, NonFiniteOutputNamesOp) {
    const T64 x(Shape{1}, std::vector<double>{1000.0});
    try {
        (void)exp(x);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
    }
    EXPECT_THROW((void)div(T64::ones({2}), T64::zeros({2})), NumericError);
}

TEST(Ops, SoftmaxUniformOnZeros) {
    const T64 y = softmax(T64::zeros({3}), 0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Ops, SoftmaxRowStochasticAnyAxis) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const T64 x = random({3, 4, 5}, seed, -20.0, 20.0);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            const T64 y = softmax(x, axis);
            const T64 moved = axis == 2 ? y : permute(y, axis == 0 ? std::vector<std::size_t>{1, 2, 0}
                                                                   : std::vector<std::size_t>{0, 2, 1});
            const std::size_t len = x.dim(axis);
            for (std::size_t r = 0; r < moved.numel() / len; ++r) {
                double s = 0;
                for (std::size_t k = 0; k < len; ++k) {
                    EXPECT_GE(moved[r * len + k], 0.0);
                    s += moved[r * len + k];
                }
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
    }
}

TEST(Ops, LogsumexpMatchesDirect) {
    const T64 x = random({4, 6}, 5, -3, 3);
    const T64 y = logsumexp_last(x);
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < 6; ++k) s += std::exp(x.at({r, k}));
        EXPECT_NEAR(y[r], std::log(s), 1e-13);
    }
}

TEST(Ops, GeluUsesExactErf) {
    const T64 x(Shape{5}, std::vector<double>{-3, -0.5, 0, 0.7, 2.5});
    const T64 y = gelu(x);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], 0.5 * x[i] * (1 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
}

TEST(Ops, LayerNormPerSite) {
    const T64 x = random({2, 3, 8}, 6, -2, 2);
    const T64 g = random({8}, 7), b = random({8}, 8);
    const T64 y = layer_norm(x, g, b);
    for (std::size_t s = 0; s < 6; ++s) {
        double mu = 0, var = 0;
        for (std::size_t c = 0; c < 8; ++c) mu += x[s * 8 + c] / 8;
        for (std::size_t c = 0; c < 8; ++c) var += (x[s * 8 + c] - mu) * (x[s * 8 + c] - mu) / 8;
        for (std::size_t c = 0; c < 8; ++c)
            EXPECT_NEAR(y[s * 8 + c], (x[s * 8 + c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c], 1e-13);
    }
}

TEST(Ops, Conv2dOnRampWithKnownKernel) {
    std::vector<double> ramp(25);
    std::iota(ramp.begin(), ramp.end(), 0.0);
    const T64 x(Shape{5, 5, 1}, ramp);
    // Laplacian-style kernel: the interior of a linear ramp maps to zero
    const T64 k(Shape{3, 3, 1, 1}, std::vector<double>{0, 1, 0, 1, -4, 1, 0, 1, 0});
    const T64 y = conv2d(x, k, T64{});
    ASSERT_EQ(y.shape(), (Shape{3, 3, 1}));
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], 0.0);
    const T64 yp = conv2d(x, k, T64{}, {.padding = 1});
    // corner (0,0): 1 + 5 - 4*0 = 6
    EXPECT_EQ(yp.at({0, 0, 0}), 6.0);
    // edge (0,2): 1 + 3 + 7 - 4*2 = 3
    EXPECT_EQ(yp.at({0, 2, 0}), 3.0);
}

TEST(Ops, Conv2dMatchesLoopOracle) {
    struct Case {
        Shape x, w;
        Conv2dOptions o;
    };
    const std::vector<Case> cases = {
        {{7, 6, 3}, {3, 3, 3, 4}, {}},
        {{8, 8, 4}, {4, 4, 4, 2}, {.stride = 2, .padding = 1}},
        {{9, 7, 6}, {3, 3, 1, 6}, {.padding = 2, .dilation = 2, .groups = 6}},
        {{6, 6, 4}, {3, 3, 2, 6}, {.stride = 2, .padding = 1, .groups = 2}},
        {{5, 5, 2}, {1, 1, 2, 3}, {}},
    };
    std::uint64_t seed = 10;
    for (const auto& c : cases) {
        const T64 x = random(c.x, seed++), w = random(c.w, seed++), b = random({c.w[3]}, seed++);
        const T64 y = conv2d(x, w, b, c.o);
        const auto ref = conv_oracle(x, w, b, c.o);
        ASSERT_EQ(y.numel(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-13);
    }
}

TEST(Ops, Conv2dGroupsMustDivide) {
    EXPECT_THROW((void)conv2d(T64::zeros({4, 4, 3}), T64::zeros({3, 3, 1, 3}), T64{}, {.groups = 2}), DimensionError);
}

TEST(Ops, ConvTransposeIsAdjointOfConv) {
    // <convT(x; W), y> == <x, conv(y; W^T)> with W^T swapping in/out channel axes
    for (std::size_t stride : {1u, 2u}) {
        const std::size_t K = stride == 2 ? 2 : 3, cin = 3, cout = 2, H = 4, W = 5;
        const T64 x = random({H, W, cin}, 40 + stride);
        const T64 w = random({K, K, cin, cout}, 50 + stride);
        const T64 up = conv_transpose2d(x, w, T64{}, stride);
        const T64 y = random(up.shape(), 60 + stride);
        const T64 wt = permute(w, {0, 1, 3, 2});
        const T64 down = conv2d(y, wt, T64{}, {.stride = stride});
        ASSERT_EQ(down.shape(), x.shape());
        EXPECT_NEAR(dot(up.data(), y.data()), dot(x.data(), down.data()), 1e-12);
    }
}

TEST(Ops, ConvTransposeOutputSize) {
    const T64 y = conv_transpose2d(T64::ones({4, 4, 2}), T64::ones({2, 2, 2, 3}), T64{}, 2);
    EXPECT_EQ(y.shape(), (Shape{8, 8, 3}));
    // non-overlapping stride-2 taps: each output sees exactly one input pixel, 2 channels
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 2.0);
}

TEST(Ops, AvgPoolMatchesLoop) {
    const T64 x = random({6, 4, 3}, 70);
    const T64 y = avg_pool2d(x, 2);
    for (std::size_t oy = 0; oy < 3; ++oy)
        for (std::size_t ox = 0; ox < 2; ++ox)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) s += x.at({2 * oy + dy, 2 * ox + dx, c});
                EXPECT_NEAR(y.at({oy, ox, c}), s / 4, 1e-15);
            }
    EXPECT_THROW((void)avg_pool2d(x, 4), DimensionError);
}

TEST(Ops, PermuteReshapeConcatSlice) {
    const T64 x = random({2, 3, 4}, 80);
    const T64 p = permute(x, {2, 0, 1});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.at({k, i, j}), x.at({i, j, k}));
    EXPECT_EQ(reshape(x, {6, 4}).values(), x.values());
    EXPECT_THROW((void)reshape(x, {5, 5}), DimensionError);
    const T64 y = random({2, 3, 2}, 81);
    const T64 c = concat<double>({x, y}, 2);
    ASSERT_EQ(c.shape(), (Shape{2, 3, 6}));
    for (std::size_t s = 0; s < 6; ++s) {
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(c[s * 6 + k], x[s * 4 + k]);
        for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(c[s * 6 + 4 + k], y[s * 2 + k]);
    }
    const T64 tail = slice_last(c, 4, 2);
    EXPECT_EQ(tail.values(), y.values());
}

TEST(Ops, GatherScatterInversePermutation) {
    Rng rng(3, streams::kTest);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.next_u64() % 40;
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.next_u64() % i]);
        const T64 x = random({n, 3}, 100 + trial);
        const T64 back = gather_rows(scatter_rows(x, perm, n), perm);
        EXPECT_EQ(back.values(), x.values());
        const T64 fwd = scatter_rows(gather_rows(x, perm), perm, n);
        EXPECT_EQ(fwd.values(), x.values());
    }
}

TEST(Backward, SumGivesOnes) {
    T64 x = random({3, 2}, 1);
    x.set_requires_grad();
    backward(sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
    T64 x(Shape{2}, std::vector<double>{1, 2});
    x.set_requires_grad();
    backward(sum(mul(x, x)));
    EXPECT_EQ(x.grad()[0], 2.0);
    EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, DiamondVisitsEachNodeOnce) {
    T64 x = random({4}, 2);
    x.set_requires_grad();
    const T64 a = square(x);
    const T64 b = add(a, a);
    const T64 c = mul(b, a);
    const T64 s = sum(c);
    // s, c, b, a, x
    EXPECT_EQ(backward(s), 5u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], 8 * std::pow(x[i], 3), 1e-12);
}

TEST(Backward, Errors) {
    T64 x = random({3}, 3);
    x.set_requires_grad();
    EXPECT_THROW(backward(square(x)), GraphError);           // non-scalar
    EXPECT_THROW(backward(sum(x.detach())), GraphError);     // detached
    const T64 loss = sum(square(x));
    backward(loss);
    EXPECT_THROW(backward(loss), GraphError);                // consumed
}

TEST(Backward, NoGradGuardRecordsNothing) {
    T64 x = random({3}, 4);
    x.set_requires_grad();
    T64 y;
    {
        NoGradGuard guard;
        y = sum(square(x));
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(grad_enabled());
}

TEST(Determinism, SeededTensorsAndOpsAreBitIdentical) {
    auto run = [] {
        Rng rng(42, streams::kInit);
        const T64 a = T64::randn({4, 5}, rng), w = T64::randn({3, 3, 5, 2}, rng);
        return conv2d(gelu(reshape(a, {2, 2, 5})), w, T64{}, {.padding = 1}).values();
    };
    EXPECT_EQ(run(), run());
}
