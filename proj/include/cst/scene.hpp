// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic spectral scenes: dark background with a few smooth bright blobs, each with
// its own spectral curve. Spatially sparse by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "cst/array.hpp"
#include "cst/errors.hpp"
#include "cst/rng.hpp"

namespace cst::scene {

inline constexpr double kBackground = 0.01;

struct SparsityProfile {
    std::size_t blobs = 3;
    /// Target fraction of pixels at or above half a blob's peak.
    double coverage = 0.15;
};

struct Blob {
    double cy = 0.0;
    double cx = 0.0;
    double radius = 0.0;     // half-weight radius
    double amplitude = 0.0;  // peak reflectance at the spectral maximum
    std::vector<double> spectrum;  // per band, max == 1
};

struct Scene {
    HsiCube cube;
    std::vector<Blob> blobs;
};

/// Raised-cosine profile: 1 inside 0.6 r, 0 beyond 1.4 r, exactly 0.5 at r.
inline double blob_weight(double dist, double radius) {
    const double inner = 0.6 * radius, outer = 1.4 * radius;
    if (dist <= inner) return 1.0;
    if (dist >= outer) return 0.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * (dist - inner) / (outer - inner)));
}

inline Scene synth_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t bands,
                         const SparsityProfile& profile = {}) {
    if (bands == 0 || height == 0 || width == 0) throw ConfigError("synth_scene: empty geometry");
    if (!(profile.coverage >= 0.0 && profile.coverage < 0.6))
        throw ConfigError("synth_scene: coverage must lie in [0, 0.6)");
    Rng rng(seed, streams::kScene);
    Scene scene;
    scene.cube = HsiCube(height, width, bands);
    // faint spectral tilt on the background, never above 2 * kBackground
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t n = 0; n < bands; ++n)
                scene.cube(y, x, n) = kBackground * (1.0 + 0.5 * static_cast<double>(n) / static_cast<double>(bands));
    if (profile.blobs == 0 || profile.coverage == 0.0) return scene;

    const double area = profile.coverage * static_cast<double>(height * width) / static_cast<double>(profile.blobs);
    const double radius = std::sqrt(area / std::numbers::pi);
    const double reach = 1.4 * radius;
    if (2.0 * reach >= static_cast<double>(std::min(height, width)))
        throw ConfigError("synth_scene: blobs too large for the image; lower coverage or raise blob count");
    for (std::size_t b = 0; b < profile.blobs; ++b) {
        Blob blob;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            blob.cy = rng.uniform(reach, static_cast<double>(height) - reach);
            blob.cx = rng.uniform(reach, static_cast<double>(width) - reach);
            placed = std::all_of(scene.blobs.begin(), scene.blobs.end(), [&](const Blob& o) {
                return std::hypot(o.cy - blob.cy, o.cx - blob.cx) >= 2.0 * reach + 1.0;
            });
        }
        if (!placed) throw ConfigError("synth_scene: could not place non-overlapping blobs; lower coverage");
        blob.radius = radius;
        blob.amplitude = rng.uniform(0.6, 0.95);
        const double centre = rng.uniform(0.0, static_cast<double>(bands - 1));
        const double spread = std::max(0.5, rng.uniform(0.15, 0.4) * static_cast<double>(bands));
        blob.spectrum.resize(bands);
        for (std::size_t n = 0; n < bands; ++n) {
            const double d = (static_cast<double>(n) - centre) / spread;
            blob.spectrum[n] = 0.35 + 0.65 * std::exp(-0.5 * d * d);
        }
        const double peak = *std::max_element(blob.spectrum.begin(), blob.spectrum.end());
        for (auto& v : blob.spectrum) v /= peak;
        scene.blobs.push_back(std::move(blob));
    }
    for (const auto& blob : scene.blobs)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double w = blob_weight(std::hypot(static_cast<double>(y) + 0.5 - blob.cy,
                                                        static_cast<double>(x) + 0.5 - blob.cx),
                                             blob.radius);
                if (w == 0.0) continue;
                for (std::size_t n = 0; n < bands; ++n)
                    scene.cube(y, x, n) = std::clamp(scene.cube(y, x, n) + blob.amplitude * blob.spectrum[n] * w, 0.0, 1.0);
            }
    return scene;
}

/// Dark scene with one textured, spectrally varying quadrant: 0 top-left, 1 top-right,
/// 2 bottom-left, 3 bottom-right.
inline HsiCube quadrant_scene(std::size_t height, std::size_t width, std::size_t bands, std::uint64_t seed = 0,
                              unsigned quadrant = 0) {
    if (quadrant > 3) throw ConfigError("quadrant_scene: quadrant must be 0..3");
    Rng rng(seed, streams::kScene);
    HsiCube cube(height, width, bands, kBackground);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const std::size_t top = quadrant >= 2 ? height / 2 : 0;
    const std::size_t left = quadrant % 2 == 1 ? width / 2 : 0;
    for (std::size_t y = 0; y < height / 2; ++y)
        for (std::size_t x = 0; x < width / 2; ++x)
            for (std::size_t n = 0; n < bands; ++n) {
                const double texture = 0.5 + 0.25 * std::sin(0.9 * static_cast<double>(y) + phase) *
                                                  std::cos(0.7 * static_cast<double>(x) + 0.5 * static_cast<double>(n));
                cube(top + y, left + x, n) = std::clamp(0.2 + 0.6 * texture, 0.0, 1.0);
            }
    return cube;
}

/// True when patch (row, col) of a grid with the given patch size lies in the quadrant.
inline bool patch_in_quadrant(std::size_t row, std::size_t col, std::size_t patch_size, std::size_t height,
                              std::size_t width, unsigned quadrant) {
    const bool lower = (row * patch_size) >= height / 2;
    const bool right = (col * patch_size) >= width / 2;
    return lower == (quadrant >= 2) && right == (quadrant % 2 == 1);
}

}  // namespace cst::scene
