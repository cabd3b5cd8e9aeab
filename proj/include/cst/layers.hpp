// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cst/nn_ops.hpp"

namespace cst {

/// Ordered, named collection of trainable tensors. Registration order is the
/// checkpoint order and the optimizer order.
template <class T>
class ParamStore {
public:
    Tensor<T> add(std::string name, Tensor<T> value) {
        for (const auto& [existing, _] : entries_)
            if (existing == name) throw ConfigError("ParamStore: duplicate parameter name '" + name + "'");
        value.set_requires_grad(true);
        entries_.emplace_back(std::move(name), value);
        return value;
    }

    const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.second);
        return out;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.second.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor<T>::uniform(std::move(shape), rng, -bound, bound);
}

template <class T>
struct Conv {
    Tensor<T> weight;
    Tensor<T> bias;
    Conv2dOptions options;

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }

    void zero_init() {
        for (auto& v : weight.mutable_data()) v = T(0);
        if (bias.defined())
            for (auto& v : bias.mutable_data()) v = T(0);
    }
};

template <class T>
Conv<T> make_conv(ParamStore<T>& store, const std::string& name, std::size_t kernel, std::size_t cin,
                  std::size_t cout, Rng& rng, Conv2dOptions opt = {}, bool with_bias = true) {
    if (opt.groups == 0 || cin % opt.groups != 0 || cout % opt.groups != 0)
        throw ConfigError("make_conv(" + name + "): groups must divide channel counts");
    const std::size_t cin_g = cin / opt.groups;
    Conv<T> conv;
    conv.options = opt;
    conv.weight = store.add(name + ".weight",
                            fan_in_uniform<T>(Shape{kernel, kernel, cin_g, cout}, kernel * kernel * cin_g, rng));
    if (with_bias) conv.bias = store.add(name + ".bias", Tensor<T>::zeros(Shape{cout}));
    return conv;
}

/// "Same"-padded depthwise k x k convolution.
template <class T>
Conv<T> make_depthwise(ParamStore<T>& store, const std::string& name, std::size_t channels, Rng& rng,
                       std::size_t kernel = 3, std::size_t stride = 1, std::size_t dilation = 1) {
    return make_conv<T>(store, name, kernel, channels, channels, rng,
                        Conv2dOptions{stride, dilation * (kernel - 1) / 2, dilation, channels});
}

template <class T>
struct Deconv {
    Tensor<T> weight;
    Tensor<T> bias;
    std::size_t stride = 2;

    Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose2d(x, weight, bias, stride, 0); }
};

template <class T>
Deconv<T> make_deconv(ParamStore<T>& store, const std::string& name, std::size_t kernel, std::size_t cin,
                      std::size_t cout, Rng& rng, std::size_t stride = 2) {
    Deconv<T> d;
    d.stride = stride;
    d.weight = store.add(name + ".weight", fan_in_uniform<T>(Shape{kernel, kernel, cin, cout}, cin, rng));
    d.bias = store.add(name + ".bias", Tensor<T>::zeros(Shape{cout}));
    return d;
}

template <class T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, T(1e-5)); }
};

template <class T>
LayerNorm<T> make_layer_norm(ParamStore<T>& store, const std::string& name, std::size_t channels) {
    return {store.add(name + ".gamma", Tensor<T>::ones(Shape{channels})),
            store.add(name + ".beta", Tensor<T>::zeros(Shape{channels}))};
}

}  // namespace cst
