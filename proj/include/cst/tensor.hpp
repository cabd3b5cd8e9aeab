// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cst/errors.hpp"
#include "cst/rng.hpp"

namespace cst {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

namespace detail {
inline thread_local bool grad_recording = true;
}  // namespace detail

/// Whether new ops currently record backward closures.
inline bool grad_enabled() { return detail::grad_recording; }

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
    ~NoGradGuard() { detail::grad_recording = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool consumed = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty() && !consumed; }

    /// Gradient buffer, zero-allocated on first touch.
    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Dense row-major array with optional reverse-mode gradient tracking.
/// Copies share storage; use clone() for an independent buffer.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
        node_->data.assign(numel_of(shape), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
        if (numel_of(shape) != values.size())
            throw DimensionError("Tensor: shape " + shape_str(shape) + " holds " +
                                 std::to_string(numel_of(shape)) + " values, got " +
                                 std::to_string(values.size()));
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.node_->data) v = static_cast<T>(stddev * rng.normal());
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.node_->data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Mutable access for initialization and in-place parameter updates; never use on recorded intermediates.
    std::span<T> mutable_data() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    std::span<const T> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        if (!node_->parents.empty() && !on)
            throw GraphError("set_requires_grad(false) on a non-leaf tensor; use detach()");
        node_->requires_grad = on;
        return *this;
    }

    T item() const {
        if (numel() != 1) throw DimensionError("item(): tensor has shape " + shape_str(shape()));
        return node_->data[0];
    }

    T operator[](std::size_t flat) const { return node_->data[flat]; }

    T at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }

    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != ndim())
            throw DimensionError("at(): rank " + std::to_string(index.size()) + " index into shape " +
                                 shape_str(shape()));
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t i : index) {
            if (i >= node_->shape[axis]) throw DimensionError("at(): index out of range for " + shape_str(shape()));
            flat = flat * node_->shape[axis] + i;
            ++axis;
        }
        return flat;
    }

    /// Same values, no history, no gradient.
    Tensor detach() const { return Tensor(node_->shape, node_->data); }
    Tensor clone() const { return detach(); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }
    std::string_view op_name() const { return node_->op; }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
void require_finite(std::string_view op, const std::vector<T>& values) {
    for (const T& v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite output in op '") + std::string(op) + "'");
    }
}

/// Builds an op result, attaching the backward closure only when some input needs a gradient.
template <class T, class Backward>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs, Backward&& backward) {
    require_finite(op, values);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
    }
    if (needs) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.defined() ? in.node() : nullptr);
        node->backward_fn = std::forward<Backward>(backward);
    }
    return Tensor<T>(std::move(node));
}

/// Variadic-input flavour of make_result for ops like concat.
template <class T, class Backward>
Tensor<T> make_result_n(std::string_view op, Shape shape, std::vector<T> values,
                        const std::vector<Tensor<T>>& inputs, Backward&& backward) {
    require_finite(op, values);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::forward<Backward>(backward);
    }
    return Tensor<T>(std::move(node));
}

template <class T>
bool wants_grad(const std::shared_ptr<Node<T>>& parent) {
    return parent && parent->requires_grad;
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar loss into every reachable leaf.
/// Returns the number of graph nodes visited; each is visited once.
template <class T>
std::size_t backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw GraphError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    const auto& root = loss.node();
    if (root->consumed) throw GraphError("backward: graph already consumed; re-run the forward pass");
    if (!root->requires_grad) throw GraphError("backward: loss is detached from any tensor requiring grad");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
            continue;
        }
        if (node->consumed) throw GraphError("backward: graph already consumed; re-run the forward pass");
        order.push_back(node);
        stack.pop_back();
    }

    root->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    for (Node<T>* node : order) {
        if (node->parents.empty()) continue;
        node->consumed = true;
        node->backward_fn = nullptr;
        node->parents.clear();
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
    return order.size();
}

}  // namespace cst
