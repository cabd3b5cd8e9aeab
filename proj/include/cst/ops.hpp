// SPDX-License-Identifier: Apache-2.0
#pragma once

// Elementwise, reduction, linear-algebra and layout ops with exact analytic gradients.
// No implicit broadcasting: binary ops require identical shapes, scalars go through
// scale()/add_scalar().

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "cst/tensor.hpp"

namespace cst {

namespace detail {

template <class T>
void require_same_shape(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

/// Unary elementwise op given value and derivative functors (derivative sees x and y).
template <class T, class F, class D>
Tensor<T> unary(std::string_view op, const Tensor<T>& x, F f, D df) {
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result<T>(op, x.shape(), std::move(out), {x}, [df](Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p->data[i], self.data[i]);
    });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        for (auto& p : self.parents) {
            if (!detail::wants_grad(p)) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        if (detail::wants_grad(self.parents[0])) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (detail::wants_grad(self.parents[1])) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (detail::wants_grad(pa)) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
        }
        if (detail::wants_grad(pb)) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
        }
    });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("div", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
    return detail::make_result<T>("div", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (detail::wants_grad(pa)) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb->data[i];
        }
        if (detail::wants_grad(pb)) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / pb->data[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return detail::unary<T>(
        "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
    return detail::unary<T>(
        "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, T(-1));
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary<T>(
        "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary<T>(
        "abs", x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary<T>(
        "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary<T>(
        "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    return detail::unary<T>(
        "gelu", x,
        [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
        [](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
            const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
            return cdf + v * pdf;
        });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    return detail::make_result<T>("sum", Shape{1}, std::vector<T>{acc}, {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean squared error over every element.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    return mean(square(sub(a, b)));
}

/// Sums over the last axis; the result drops that axis.
template <class T>
Tensor<T> sum_last(const Tensor<T>& x) {
    if (x.ndim() < 2) throw DimensionError("sum_last: need rank >= 2, got " + shape_str(x.shape()));
    const std::size_t inner = x.shape().back();
    const std::size_t outer = x.numel() / inner;
    std::vector<T> out(outer, T(0));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) out[o] += x[o * inner + i];
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    return detail::make_result<T>("sum_last", std::move(shape), std::move(out), {x}, [inner](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / inner];
    });
}

/// (m x k) . (k x n)
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
        }
    return detail::make_result<T>("matmul", Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const auto& G = self.grad;
        if (detail::wants_grad(pa)) {
            auto& ga = pa->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * pb->data[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (detail::wants_grad(pb)) {
            auto& gb = pb->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = pa->data[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                }
        }
    });
}

/// (m x k) . (n x k)^T, the layout of a linear layer with weight [out, in].
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<T> out(m * n);
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
            out[i * n + j] = acc;
        }
    return detail::make_result<T>("matmul_nt", Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const auto& G = self.grad;
        if (detail::wants_grad(pa)) {
            auto& ga = pa->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const T gv = G[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * pb->data[j * k + p];
                }
        }
        if (detail::wants_grad(pb)) {
            auto& gb = pb->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const T gv = G[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gv * pa->data[i * k + p];
                }
        }
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    return detail::make_result<T>("reshape", std::move(shape), x.values(), {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

}  // namespace detail

/// out.shape[i] = x.shape[axes[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t rank = x.ndim();
    if (axes.size() != rank) throw DimensionError("permute: axes rank mismatch for " + shape_str(x.shape()));
    std::vector<bool> used(rank, false);
    for (std::size_t a : axes) {
        if (a >= rank || used[a]) throw DimensionError("permute: axes are not a permutation");
        used[a] = true;
    }
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
    const auto in_strides = detail::strides_of(x.shape());
    // source offset for every output element
    std::vector<std::size_t> source(x.numel());
    std::vector<std::size_t> index(rank, 0);
    for (std::size_t flat = 0; flat < source.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < rank; ++i) off += index[i] * in_strides[axes[i]];
        source[flat] = off;
        for (std::size_t i = rank; i-- > 0;) {
            if (++index[i] < out_shape[i]) break;
            index[i] = 0;
        }
    }
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[source[i]];
    return detail::make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                                  [source = std::move(source)](Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += self.grad[i];
                                  });
}

/// Concatenates along `axis`; all other dims must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != first.size()) throw DimensionError("concat: rank mismatch");
        probe[axis] = first[axis];
        if (probe != first)
            throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
        out_shape[axis] += p.dim(axis);
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<T> out(numel_of(out_shape));
    std::vector<std::size_t> starts;
    std::size_t start = 0;
    for (const auto& p : parts) {
        starts.push_back(start);
        const std::size_t row = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + o * row, row, out.begin() + o * out_row + start);
        start += row;
    }
    return detail::make_result_n<T>("concat", std::move(out_shape), std::move(out), parts,
                                    [outer, out_row, starts](Node<T>& self) {
                                        for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                            auto& p = self.parents[k];
                                            if (!detail::wants_grad(p)) continue;
                                            auto& g = p->grad_buffer();
                                            const std::size_t row = g.size() / outer;
                                            for (std::size_t o = 0; o < outer; ++o)
                                                for (std::size_t i = 0; i < row; ++i)
                                                    g[o * row + i] += self.grad[o * out_row + starts[k] + i];
                                        }
                                    });
}

/// Slice [start, start + count) of the last axis.
template <class T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t start, std::size_t count) {
    const std::size_t width = x.shape().back();
    if (start + count > width)
        throw DimensionError("slice_last: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                             ") outside " + shape_str(x.shape()));
    const std::size_t outer = x.numel() / width;
    Shape shape = x.shape();
    shape.back() = count;
    std::vector<T> out(outer * count);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < count; ++i) out[o * count + i] = x[o * width + start + i];
    return detail::make_result<T>("slice_last", std::move(shape), std::move(out), {x},
                                  [outer, width, start, count](Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < count; ++i)
                                              g[o * width + start + i] += self.grad[o * count + i];
                                  });
}

namespace detail {

template <class T>
std::size_t row_width(const Tensor<T>& x, std::string_view op) {
    if (x.ndim() < 1) throw DimensionError(std::string(op) + ": rank-0 input");
    return x.dim(0) == 0 ? 0 : x.numel() / x.dim(0);
}

}  // namespace detail

/// out[i] = x[index[i]] along axis 0.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index) {
    const std::size_t row = detail::row_width(x, "gather_rows");
    for (std::size_t i : index)
        if (i >= x.dim(0)) throw DimensionError("gather_rows: index " + std::to_string(i) + " out of range for " +
                                                shape_str(x.shape()));
    Shape shape = x.shape();
    shape[0] = index.size();
    std::vector<T> out(index.size() * row);
    for (std::size_t i = 0; i < index.size(); ++i)
        std::copy_n(x.data().begin() + index[i] * row, row, out.begin() + i * row);
    return detail::make_result<T>("gather_rows", std::move(shape), std::move(out), {x},
                                  [index, row](Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      for (std::size_t i = 0; i < index.size(); ++i)
                                          for (std::size_t c = 0; c < row; ++c)
                                              g[index[i] * row + c] += self.grad[i * row + c];
                                  });
}

/// out has `rows` rows, zero except out[index[i]] += x[i]. Inverse of gather_rows for permutations.
template <class T>
Tensor<T> scatter_rows(const Tensor<T>& x, const std::vector<std::size_t>& index, std::size_t rows) {
    const std::size_t row = detail::row_width(x, "scatter_rows");
    if (index.size() != x.dim(0))
        throw DimensionError("scatter_rows: " + std::to_string(index.size()) + " indices for " +
                             shape_str(x.shape()));
    for (std::size_t i : index)
        if (i >= rows) throw DimensionError("scatter_rows: index " + std::to_string(i) + " >= " + std::to_string(rows));
    Shape shape = x.shape();
    shape[0] = rows;
    std::vector<T> out(rows * row, T(0));
    for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t c = 0; c < row; ++c) out[index[i] * row + c] += x[i * row + c];
    return detail::make_result<T>("scatter_rows", std::move(shape), std::move(out), {x},
                                  [index, row](Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      for (std::size_t i = 0; i < index.size(); ++i)
                                          for (std::size_t c = 0; c < row; ++c)
                                              g[i * row + c] += self.grad[index[i] * row + c];
                                  });
}

}  // namespace cst
