// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "cst/tensor.hpp"

namespace cst {

/// Adam moment buffers for a fixed, ordered parameter list.
template <class T>
struct OptimizerState {
    double base_lr = 4e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;

    OptimizerState() = default;

    OptimizerState(const std::vector<Tensor<T>>& params, double lr) : base_lr(lr) {
        for (const auto& p : params) {
            first_moment.emplace_back(p.numel(), T(0));
            second_moment.emplace_back(p.numel(), T(0));
        }
    }
};

/// One bias-corrected Adam update using each parameter's accumulated gradient
/// (a parameter without a gradient is treated as having a zero gradient).
/// Throws NumericError without touching anything if a gradient is non-finite.
template <class T>
void adam_step(OptimizerState<T>& state, std::vector<Tensor<T>>& params, double lr) {
    if (params.size() != state.first_moment.size())
        throw DimensionError("adam_step: optimizer tracks " + std::to_string(state.first_moment.size()) +
                             " parameters, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].size() != params[i].numel())
            throw DimensionError("adam_step: moment buffer size mismatch for parameter " + std::to_string(i) + " " +
                                 shape_str(params[i].shape()));
        for (T g : params[i].grad())
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(state.beta1, t);
    const double correct2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].mutable_data();
        const auto grad = params[i].grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
            const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * g;
            const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double update = lr * (mk / correct1) / (std::sqrt(vk / correct2) + state.eps);
            values[k] = static_cast<T>(values[k] - update);
        }
    }
}

/// Cosine annealing from base_lr at step 0 down to 0 at total_steps.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
    if (total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
    if (step > total_steps)
        throw ConfigError("cosine_lr: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
    const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * (1.0 + std::cos(phase)) / 2.0;
}

}  // namespace cst
