// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cst/errors.hpp"
#include "cst/tensor.hpp"

namespace cst {

/// Row-major 2D real image.
struct Image2 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    Image2() = default;
    Image2(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

    double& operator()(std::size_t y, std::size_t x) { return values[y * width + x]; }
    double operator()(std::size_t y, std::size_t x) const { return values[y * width + x]; }

    bool operator==(const Image2&) const = default;
};

/// Spectral cube stored [height][width][band], bands last.
struct HsiCube {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    std::vector<double> values;

    HsiCube() = default;
    HsiCube(std::size_t h, std::size_t w, std::size_t n, double fill = 0.0)
        : height(h), width(w), bands(n), values(h * w * n, fill) {}

    double& operator()(std::size_t y, std::size_t x, std::size_t n) { return values[(y * width + x) * bands + n]; }
    double operator()(std::size_t y, std::size_t x, std::size_t n) const { return values[(y * width + x) * bands + n]; }

    Image2 band(std::size_t n) const {
        Image2 out(height, width);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) out(y, x) = (*this)(y, x, n);
        return out;
    }

    bool same_shape(const HsiCube& o) const { return height == o.height && width == o.width && bands == o.bands; }
    bool operator==(const HsiCube&) const = default;

    std::string shape_string() const {
        return shape_str({height, width, bands});
    }
};

template <class T>
Tensor<T> to_tensor(const HsiCube& cube) {
    return Tensor<T>(Shape{cube.height, cube.width, cube.bands},
                     std::vector<T>(cube.values.begin(), cube.values.end()));
}

template <class T>
Tensor<T> to_tensor(const Image2& image) {
    return Tensor<T>(Shape{image.height, image.width}, std::vector<T>(image.values.begin(), image.values.end()));
}

template <class T>
HsiCube to_cube(const Tensor<T>& t) {
    if (t.ndim() != 3) throw DimensionError("to_cube: expected [H,W,N], got " + shape_str(t.shape()));
    HsiCube cube(t.dim(0), t.dim(1), t.dim(2));
    std::copy(t.data().begin(), t.data().end(), cube.values.begin());
    return cube;
}

template <class T>
Image2 to_image(const Tensor<T>& t) {
    if (t.ndim() != 2 && !(t.ndim() == 3 && t.dim(2) == 1))
        throw DimensionError("to_image: expected [H,W], got " + shape_str(t.shape()));
    Image2 image(t.dim(0), t.dim(1));
    std::copy(t.data().begin(), t.data().end(), image.values.begin());
    return image;
}

}  // namespace cst
