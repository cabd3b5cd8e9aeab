// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "cst/tensor.hpp"

namespace cst {

struct GradCheckOptions {
    double eps = 1e-5;
    /// Upper bound on probed coordinates per tensor (0 = all). Probes are evenly strided.
    std::size_t max_coords = 0;
};

/// Compares backward() against central differences for every input of a scalar function
/// that closes over `inputs`. Returns max |analytic - numeric| / max(1, |analytic|).
template <class T>
double grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs, GradCheckOptions opt = {}) {
    if (!(opt.eps >= 1e-6 && opt.eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    {
        Tensor<T> loss = f();
        backward(loss);
    }
    std::vector<std::vector<T>> analytic;
    for (auto& in : inputs) {
        analytic.emplace_back(in.grad().begin(), in.grad().end());
        if (analytic.back().empty()) analytic.back().assign(in.numel(), T(0));
        in.zero_grad();
    }

    NoGradGuard no_grad;
    auto eval = [&]() {
        const Tensor<T> y = f();
        if (y.numel() != 1) throw GraphError("grad_check: function must return a scalar");
        return static_cast<double>(y.item());
    };
    const double base_a = eval();
    const double base_b = eval();
    if (base_a != base_b) throw DeterminismError("grad_check: function is not deterministic across probe calls");

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto values = inputs[t].mutable_data();
        const std::size_t n = values.size();
        const std::size_t stride = (opt.max_coords == 0 || n <= opt.max_coords) ? 1 : (n + opt.max_coords - 1) / opt.max_coords;
        for (std::size_t i = 0; i < n; i += stride) {
            const T saved = values[i];
            values[i] = static_cast<T>(saved + opt.eps);
            const double up = eval();
            values[i] = static_cast<T>(saved - opt.eps);
            const double down = eval();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * opt.eps);
            const double a = static_cast<double>(analytic[t][i]);
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
        }
    }
    return worst;
}

/// Single-input convenience form.
template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps = 1e-5) {
    Tensor<T> probe = x.clone();
    return grad_check<T>([&]() { return f(probe); }, {probe}, GradCheckOptions{eps, 0});
}

}  // namespace cst
