// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cst/array.hpp"

namespace cst::metrics {

/// Returned for identical inputs instead of +inf.
inline constexpr double kPsnrCap = 100.0;

inline double psnr_from_mse(double mse, double data_range) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

/// PSNR with the MSE taken jointly over every voxel.
inline double psnr(const HsiCube& x, const HsiCube& ref, double data_range = 1.0) {
    if (!x.same_shape(ref)) throw DimensionError("psnr: " + x.shape_string() + " vs " + ref.shape_string());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const double d = x.values[i] - ref.values[i];
        acc += d * d;
    }
    return psnr_from_mse(acc / static_cast<double>(x.values.size()), data_range);
}

/// One PSNR per band.
inline std::vector<double> psnr_per_band(const HsiCube& x, const HsiCube& ref, double data_range = 1.0) {
    if (!x.same_shape(ref)) throw DimensionError("psnr: " + x.shape_string() + " vs " + ref.shape_string());
    std::vector<double> acc(x.bands, 0.0);
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const double d = x.values[i] - ref.values[i];
        acc[i % x.bands] += d * d;
    }
    const double pixels = static_cast<double>(x.height * x.width);
    for (auto& v : acc) v = psnr_from_mse(v / pixels, data_range);
    return acc;
}

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> w(size);
    const double centre = static_cast<double>(size - 1) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - centre;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

/// Single-scale SSIM, Gaussian-weighted statistics over every fully contained window,
/// averaged over the resulting map.
inline double ssim(const Image2& x, const Image2& ref, const SsimOptions& opt = {}) {
    if (x.height != ref.height || x.width != ref.width)
        throw DimensionError("ssim: " + shape_str({x.height, x.width}) + " vs " + shape_str({ref.height, ref.width}));
    const std::size_t k = opt.window;
    if (x.height < k || x.width < k)
        throw DimensionError("ssim: image " + shape_str({x.height, x.width}) + " smaller than the " +
                             std::to_string(k) + "x" + std::to_string(k) + " window");
    const auto w = gaussian_window(k, opt.sigma);
    const std::size_t oh = x.height - k + 1, ow = x.width - k + 1;

    // separable filtering: rows first into [height][ow], then columns
    auto filter = [&](auto&& value) {
        std::vector<double> rows(x.height * ow, 0.0);
        for (std::size_t y = 0; y < x.height; ++y)
            for (std::size_t c = 0; c < ow; ++c) {
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += w[t] * value(y, c + t);
                rows[y * ow + c] = acc;
            }
        std::vector<double> out(oh * ow, 0.0);
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += w[t] * rows[(r + t) * ow + c];
                out[r * ow + c] = acc;
            }
        return out;
    };
    const auto mu_x = filter([&](std::size_t y, std::size_t c) { return x(y, c); });
    const auto mu_y = filter([&](std::size_t y, std::size_t c) { return ref(y, c); });
    const auto xx = filter([&](std::size_t y, std::size_t c) { return x(y, c) * x(y, c); });
    const auto yy = filter([&](std::size_t y, std::size_t c) { return ref(y, c) * ref(y, c); });
    const auto xy = filter([&](std::size_t y, std::size_t c) { return x(y, c) * ref(y, c); });

    const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
    const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double mx = mu_x[i], my = mu_y[i];
        const double vx = xx[i] - mx * mx, vy = yy[i] - my * my, cov = xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mu_x.size());
}

/// Mean of per-band SSIM.
inline double ssim(const HsiCube& x, const HsiCube& ref, const SsimOptions& opt = {}) {
    if (!x.same_shape(ref)) throw DimensionError("ssim: " + x.shape_string() + " vs " + ref.shape_string());
    double acc = 0.0;
    for (std::size_t n = 0; n < x.bands; ++n) acc += ssim(x.band(n), ref.band(n), opt);
    return acc / static_cast<double>(x.bands);
}

struct SceneMetrics {
    std::string scene;
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::vector<double> band_psnr_db;
};

struct MetricReport {
    std::vector<SceneMetrics> scenes;

    double mean_psnr() const {
        double acc = 0.0;
        for (const auto& s : scenes) acc += s.psnr_db;
        return scenes.empty() ? 0.0 : acc / static_cast<double>(scenes.size());
    }
    double mean_ssim() const {
        double acc = 0.0;
        for (const auto& s : scenes) acc += s.ssim;
        return scenes.empty() ? 0.0 : acc / static_cast<double>(scenes.size());
    }
};

}  // namespace cst::metrics
