// SPDX-License-Identifier: Apache-2.0
#pragma once

// Coded-aperture snapshot spectral imaging forward model.
//
// Band n (0-based) is displaced by shift_step * n columns; band 0 is the undisplaced
// reference. A cube of width W therefore lands on a sensor of width W + d * (N - 1).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "cst/array.hpp"
#include "cst/rng.hpp"

namespace cst::optics {

/// Physical mask; replicate() yields the per-band copy fed to the network.
struct CodedAperture {
    Image2 pattern;

    static CodedAperture bernoulli(std::size_t height, std::size_t width, std::uint64_t seed, double p = 0.5) {
        Rng rng(seed, streams::kMask);
        CodedAperture mask{Image2(height, width)};
        for (auto& v : mask.pattern.values) v = rng.bernoulli(p) ? 1.0 : 0.0;
        return mask;
    }

    HsiCube replicate(std::size_t bands) const {
        HsiCube out(pattern.height, pattern.width, bands);
        for (std::size_t y = 0; y < pattern.height; ++y)
            for (std::size_t x = 0; x < pattern.width; ++x)
                for (std::size_t n = 0; n < bands; ++n) out(y, x, n) = pattern(y, x);
        return out;
    }
};

struct Measurement {
    Image2 image;
    std::size_t shift_step = 0;
    std::size_t bands = 0;

    /// Width of the scene this measurement was taken from.
    std::size_t scene_width() const { return image.width - shift_step * (bands - 1); }
};

struct NoiseSpec {
    enum class Kind { None, Shot11 };
    Kind kind = Kind::None;
    std::uint64_t seed = 0;
    /// Additive Gaussian read noise (std-dev in measurement units); off by default.
    double read_sigma = 0.0;
};

inline std::size_t sensor_width(std::size_t width, std::size_t shift_step, std::size_t bands) {
    return width + shift_step * (bands == 0 ? 0 : bands - 1);
}

inline HsiCube modulate(const HsiCube& cube, const CodedAperture& mask) {
    if (mask.pattern.height != cube.height || mask.pattern.width != cube.width)
        throw DimensionError("modulate: mask " + shape_str({mask.pattern.height, mask.pattern.width}) +
                             " vs cube " + cube.shape_string());
    HsiCube out = cube;
    for (std::size_t y = 0; y < cube.height; ++y)
        for (std::size_t x = 0; x < cube.width; ++x)
            for (std::size_t n = 0; n < cube.bands; ++n) out(y, x, n) *= mask.pattern(y, x);
    return out;
}

/// Shears band n by shift_step * n columns into a zero-filled wider cube.
inline HsiCube disperse(const HsiCube& cube, std::size_t shift_step) {
    HsiCube out(cube.height, sensor_width(cube.width, shift_step, cube.bands), cube.bands);
    for (std::size_t y = 0; y < cube.height; ++y)
        for (std::size_t x = 0; x < cube.width; ++x)
            for (std::size_t n = 0; n < cube.bands; ++n) out(y, x + shift_step * n, n) = cube(y, x, n);
    return out;
}

/// Band sum of the sheared cube plus an optional additive noise field.
inline Image2 integrate(const HsiCube& sheared, const std::optional<Image2>& noise = std::nullopt) {
    Image2 out(sheared.height, sheared.width);
    if (noise && (noise->height != out.height || noise->width != out.width))
        throw DimensionError("integrate: noise " + shape_str({noise->height, noise->width}) + " vs sensor " +
                             shape_str({out.height, out.width}));
    for (std::size_t y = 0; y < sheared.height; ++y)
        for (std::size_t x = 0; x < sheared.width; ++x) {
            double acc = 0.0;
            for (std::size_t n = 0; n < sheared.bands; ++n) acc += sheared(y, x, n);
            out(y, x) = acc + (noise ? (*noise)(y, x) : 0.0);
        }
    return out;
}

/// Scales so the peak maps to 2^11 - 1 photons, draws Poisson counts, scales back.
inline Measurement shot_noise_11bit(const Measurement& y, std::uint64_t seed) {
    double peak = 0.0;
    for (double v : y.image.values) {
        if (v < 0.0 || !std::isfinite(v)) throw DataError("shot_noise_11bit: measurement must be finite and nonnegative");
        peak = std::max(peak, v);
    }
    Measurement out = y;
    if (peak == 0.0) return out;
    constexpr double kLevels = 2047.0;
    Rng rng(seed, streams::kNoise);
    for (auto& v : out.image.values) v = static_cast<double>(rng.poisson(v / peak * kLevels)) * peak / kLevels;
    return out;
}

inline Measurement forward_measure(const HsiCube& cube, const CodedAperture& mask, std::size_t shift_step,
                                   const NoiseSpec& noise = {}) {
    Measurement y{integrate(disperse(modulate(cube, mask), shift_step)), shift_step, cube.bands};
    if (noise.read_sigma > 0.0) {
        Rng rng(noise.seed, streams::kNoise + 100);
        for (auto& v : y.image.values) v = std::max(0.0, v + noise.read_sigma * rng.normal());
    }
    if (noise.kind == NoiseSpec::Kind::Shot11) y = shot_noise_11bit(y, noise.seed);
    return y;
}

/// Inverse shear: band n of the result reads the sensor window starting at column shift_step * n.
inline HsiCube shift_back(const Image2& y, std::size_t shift_step, std::size_t bands) {
    const std::size_t span = shift_step * (bands == 0 ? 0 : bands - 1);
    if (bands == 0 || y.width <= span)
        throw DimensionError("shift_back: sensor width " + std::to_string(y.width) + " too small for " +
                             std::to_string(bands) + " bands at step " + std::to_string(shift_step));
    const std::size_t width = y.width - span;
    HsiCube out(y.height, width, bands);
    for (std::size_t r = 0; r < y.height; ++r)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t n = 0; n < bands; ++n) out(r, x, n) = y(r, x + shift_step * n);
    return out;
}

/// Checked form: the measurement's recorded geometry must agree with (shift_step, bands, width).
inline HsiCube shift_back(const Measurement& y, std::size_t shift_step, std::size_t bands, std::size_t width) {
    if (y.image.width != sensor_width(width, shift_step, bands))
        throw DimensionError("shift_back: sensor width " + std::to_string(y.image.width) + " != " +
                             std::to_string(width) + " + " + std::to_string(shift_step) + "*(" +
                             std::to_string(bands) + "-1)");
    return shift_back(y.image, shift_step, bands);
}

}  // namespace cst::optics
