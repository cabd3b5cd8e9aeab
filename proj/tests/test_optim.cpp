// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "cst/ops.hpp"
#include "cst/optim.hpp"
#include "cst/rng.hpp"

using namespace cst;
using T64 = Tensor<double>;

TEST(Adam, ZeroGradientLeavesParams) {
    T64 p(Shape{3}, std::vector<double>{1, -2, 3});
    p.set_requires_grad();
    std::vector<T64> params{p};
    OptimizerState<double> st(params, 0.1);
    backward(sum(scale(p, 0.0)));
    adam_step(st, params, 0.1);
    EXPECT_EQ(p.values(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLr) {
    // m = 0.1 g, v = 0.001 g^2; bias-corrected m_hat / sqrt(v_hat) = 1 for g = 1
    T64 p(Shape{2}, std::vector<double>{0.5, -0.5});
    p.set_requires_grad();
    std::vector<T64> params{p};
    OptimizerState<double> st(params, 0.1);
    backward(sum(p));
    adam_step(st, params, 0.1);
    const double expected = 0.1 * 1.0 / (1.0 + 1e-8);
    EXPECT_NEAR(p[0], 0.5 - expected, 1e-12);
    EXPECT_NEAR(p[1], -0.5 - expected, 1e-12);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, TwoStepsMatchRecurrence) {
    T64 p(Shape{1}, std::vector<double>{2.0});
    p.set_requires_grad();
    std::vector<T64> params{p};
    OptimizerState<double> st(params, 0.05);
    double m = 0, v = 0, x = 2.0;
    for (int t = 1; t <= 2; ++t) {
        p.zero_grad();
        backward(sum(square(p)));
        const double g = 2 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        adam_step(st, params, 0.05);
        EXPECT_NEAR(p[0], x, 1e-12);
    }
}

TEST(Adam, DescendsConvexQuadratic) {
    T64 p(Shape{4}, std::vector<double>{1, -1, 2, 0.5});
    p.set_requires_grad();
    std::vector<T64> params{p};
    OptimizerState<double> st(params, 0.01);
    auto value = [&] {
        NoGradGuard g;
        return sum(square(p)).item();
    };
    const double before = value();
    for (int i = 0; i < 2; ++i) {
        p.zero_grad();
        backward(sum(square(p)));
        adam_step(st, params, 0.01);
    }
    EXPECT_LT(value(), before);
}

TEST(Adam, NonFiniteGradientRejectedWithoutUpdate) {
    T64 p(Shape{2}, std::vector<double>{1, 2});
    p.set_requires_grad();
    std::vector<T64> params{p};
    OptimizerState<double> st(params, 0.1);
    backward(sum(p));
    p.node()->grad[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(adam_step(st, params, 0.1), NumericError);
    EXPECT_EQ(p.values(), (std::vector<double>{1, 2}));
    EXPECT_EQ(st.step, 0u);
}

TEST(CosineLr, Endpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 4e-4), 4e-4);
    EXPECT_NEAR(cosine_lr(100, 100, 4e-4), 0.0, 1e-20);
    EXPECT_NEAR(cosine_lr(50, 100, 4e-4), 2e-4, 1e-18);
    EXPECT_THROW(cosine_lr(0, 0, 1.0), ConfigError);
    EXPECT_THROW(cosine_lr(5, 4, 1.0), ConfigError);
}

TEST(CosineLr, MonotoneNonIncreasing) {
    double prev = cosine_lr(0, 37, 1.0);
    for (std::size_t s = 1; s <= 37; ++s) {
        const double cur = cosine_lr(s, 37, 1.0);
        EXPECT_LE(cur, prev);
        prev = cur;
    }
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
    Rng a(7, streams::kInit), b(7, streams::kInit), c(7, streams::kHash);
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        EXPECT_EQ(va, b.next_u64());
        EXPECT_NE(va, c.next_u64());
    }
}

TEST(Rng, NormalMoments) {
    Rng r(1, streams::kTest);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, PoissonMeanSmallAndLarge) {
    for (double mean : {0.0, 3.5, 40.0, 1500.0}) {
        Rng r(2, streams::kTest);
        double s = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) s += static_cast<double>(r.poisson(mean));
        EXPECT_NEAR(s / n, mean, 4 * std::sqrt(std::max(mean, 1e-9) / n) + 1e-12) << mean;
    }
}
