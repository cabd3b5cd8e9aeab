// SPDX-License-Identifier: Apache-2.0
#pragma once

// Library form of the command-line verbs: simulate, train, eval, bench, inspect-mask.
// Each verb writes into an output directory and echoes its effective config there.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cst/cassi.hpp"
#include "cst/config.hpp"
#include "cst/io.hpp"
#include "cst/metrics.hpp"
#include "cst/model.hpp"
#include "cst/optim.hpp"
#include "cst/scene.hpp"

namespace cst::app {

namespace fs = std::filesystem;

inline constexpr char kCubeSuffix[] = ".cube.raster";
inline constexpr char kMeasurementSuffix[] = ".meas.raster";
inline constexpr char kReconSuffix[] = ".recon.raster";
inline constexpr char kMaskFile[] = "mask.raster";

struct NamedCube {
    std::string name;
    HsiCube cube;
};

/// Every "<name>.cube.raster" in `dir`, sorted by name.
inline std::vector<NamedCube> load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory '" + dir + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > std::strlen(kCubeSuffix) &&
            name.ends_with(kCubeSuffix))
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("dataset directory '" + dir + "' holds no *" + std::string(kCubeSuffix) + " files");
    std::vector<NamedCube> out;
    for (const auto& f : files) {
        std::string name = f.filename().string();
        name.resize(name.size() - std::strlen(kCubeSuffix));
        out.push_back({name, io::read_cube(f.string())});
    }
    return out;
}

/// The dataset's mask.raster (top-left window) when present, else a seeded Bernoulli(0.5) mask.
inline optics::CodedAperture dataset_mask(const std::string& dir, std::size_t height, std::size_t width,
                                          std::uint64_t mask_seed) {
    const fs::path path = fs::path(dir) / kMaskFile;
    if (dir.empty() || !fs::exists(path)) return optics::CodedAperture::bernoulli(height, width, mask_seed);
    const Image2 full = io::read_image(path.string());
    if (full.height < height || full.width < width)
        throw DataError("mask " + path.string() + " is smaller than the " + std::to_string(height) + "x" +
                        std::to_string(width) + " scene");
    optics::CodedAperture mask{Image2(height, width)};
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) mask.pattern(y, x) = full(y, x);
    return mask;
}

inline optics::NoiseSpec noise_spec(const std::string& kind, std::uint64_t seed) {
    optics::NoiseSpec spec;
    spec.kind = kind == "shot11" ? optics::NoiseSpec::Kind::Shot11 : optics::NoiseSpec::Kind::None;
    spec.seed = seed;
    return spec;
}

/// Right-angle rotation (quarter turns, counter-clockwise) then optional flips of a square cube.
inline HsiCube augment(const HsiCube& in, unsigned quarter_turns, bool flip_h, bool flip_v) {
    HsiCube cur = in;
    for (unsigned t = 0; t < quarter_turns % 4; ++t) {
        HsiCube next(cur.width, cur.height, cur.bands);
        for (std::size_t y = 0; y < cur.height; ++y)
            for (std::size_t x = 0; x < cur.width; ++x)
                for (std::size_t n = 0; n < cur.bands; ++n) next(cur.width - 1 - x, y, n) = cur(y, x, n);
        cur = std::move(next);
    }
    HsiCube out = cur;
    for (std::size_t y = 0; y < cur.height; ++y)
        for (std::size_t x = 0; x < cur.width; ++x)
            for (std::size_t n = 0; n < cur.bands; ++n)
                out(flip_v ? cur.height - 1 - y : y, flip_h ? cur.width - 1 - x : x, n) = cur(y, x, n);
    return out;
}

inline HsiCube crop(const HsiCube& in, std::size_t top, std::size_t left, std::size_t size) {
    HsiCube out(size, size, in.bands);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t n = 0; n < in.bands; ++n) out(y, x, n) = in(top + y, left + x, n);
    return out;
}

// ---------------------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    std::size_t synth_count = 0;  // > 0: synthesize this many scenes
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t bands = 0;        // 0: the config's band count
    scene::SparsityProfile profile{};
    std::string scenes_dir;       // otherwise read cubes from here
};

inline void simulate(const RunConfig& rc, const SimulateOptions& opt, const std::string& out_dir, std::ostream& log) {
    fs::create_directories(out_dir);
    std::vector<NamedCube> scenes;
    if (opt.synth_count > 0) {
        for (std::size_t i = 0; i < opt.synth_count; ++i) {
            std::ostringstream name;
            name << "scene_" << std::setw(3) << std::setfill('0') << i;
            scenes.push_back({name.str(), scene::synth_scene(rc.trainer.seed * 1000003ULL + i, opt.height, opt.width,
                                                             opt.bands ? opt.bands : rc.model.bands, opt.profile)
                                              .cube});
        }
    } else {
        if (opt.scenes_dir.empty()) throw ConfigError("simulate: pass --synth N or --scenes DIR");
        scenes = load_dataset(opt.scenes_dir);
    }
    const std::size_t H = scenes.front().cube.height, W = scenes.front().cube.width;
    for (const auto& s : scenes)
        if (s.cube.height != H || s.cube.width != W)
            throw DataError("simulate: scene '" + s.name + "' is " + s.cube.shape_string() +
                            ", all scenes must share one spatial size");
    const auto mask = dataset_mask(opt.scenes_dir, H, W, rc.trainer.mask_seed);
    io::write_image((fs::path(out_dir) / kMaskFile).string(), mask.pattern);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        const auto y = optics::forward_measure(s.cube, mask, rc.model.shift_step,
                                               noise_spec(rc.trainer.noise, rc.trainer.seed * 7919ULL + i));
        if (opt.synth_count > 0) io::write_cube((fs::path(out_dir) / (s.name + kCubeSuffix)).string(), s.cube);
        io::write_image((fs::path(out_dir) / (s.name + kMeasurementSuffix)).string(), y.image);
        log << s.name << ": scene " << s.cube.height << "x" << s.cube.width << "x" << s.cube.bands
            << " -> measurement " << y.image.height << "x" << y.image.width << " (shift step " << rc.model.shift_step
            << ")\n";
    }
    save_run_config(rc, (fs::path(out_dir) / "config.json").string());
}

// ---------------------------------------------------------------------------------------
// train

struct LossRow {
    std::size_t step = 0;
    double lr = 0.0;
    double l2 = 0.0;
    double ls = 0.0;
    double total = 0.0;
};

inline std::string loss_csv(const std::vector<LossRow>& rows) {
    std::ostringstream os;
    os << std::setprecision(17) << "step,lr,l2,ls,total\n";
    for (const auto& r : rows) os << r.step << ',' << r.lr << ',' << r.l2 << ',' << r.ls << ',' << r.total << '\n';
    return os.str();
}

inline std::size_t total_steps(const RunConfig& rc, std::size_t scene_count) {
    if (rc.trainer.steps > 0) return rc.trainer.steps;
    const std::size_t per_epoch = (scene_count + rc.trainer.batch_size - 1) / rc.trainer.batch_size;
    return std::max<std::size_t>(1, rc.trainer.epochs * per_epoch);
}

struct TrainResult {
    std::vector<LossRow> rows;
    std::string checkpoint;
};

/// Adam + cosine schedule over random (augmented) crops; writes checkpoint.ckpt, loss.csv
/// and config.json into out_dir.
template <class T>
TrainResult train(const RunConfig& rc, const std::string& dataset_dir, const std::string& out_dir, std::ostream& log) {
    const auto scenes = load_dataset(dataset_dir);
    const std::size_t crop_size = rc.trainer.crop_size;
    rc.model.validate_geometry(crop_size, crop_size);
    for (const auto& s : scenes) {
        if (s.cube.bands != rc.model.bands)
            throw DataError("train: scene '" + s.name + "' has " + std::to_string(s.cube.bands) + " bands, config expects " +
                            std::to_string(rc.model.bands));
        if (s.cube.height < crop_size || s.cube.width < crop_size)
            throw DataError("train: scene '" + s.name + "' is smaller than crop size " + std::to_string(crop_size));
    }
    fs::create_directories(out_dir);
    save_run_config(rc, (fs::path(out_dir) / "config.json").string());

    model::CstModel<T> net(rc.model, rc.trainer.seed);
    const auto mask = dataset_mask(dataset_dir, crop_size, crop_size, rc.trainer.mask_seed);
    const Tensor<T> mask3d = to_tensor<T>(mask.replicate(rc.model.bands));
    auto params = net.params().tensors();
    OptimizerState<T> opt(params, rc.trainer.lr);
    Rng rng(rc.trainer.seed, streams::kTrain);
    const std::size_t steps = total_steps(rc, scenes.size());
    const std::size_t batch = rc.trainer.batch_size;

    TrainResult result;
    for (std::size_t step = 0; step < steps; ++step) {
        if (rc.model.resample_hashes) {
            Rng hash_rng(rc.trainer.seed + step + 1, streams::kHash);
            net.resample_hashes(hash_rng);
        }
        const double lr = cosine_lr(step, steps, rc.trainer.lr);
        net.params().zero_grad();
        LossRow row{step + 1, lr, 0.0, 0.0, 0.0};
        Tensor<T> objective;
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& src = scenes[rng.next_u64() % scenes.size()].cube;
            const std::size_t top = rng.next_u64() % (src.height - crop_size + 1);
            const std::size_t left = rng.next_u64() % (src.width - crop_size + 1);
            HsiCube gt = crop(src, top, left, crop_size);
            const std::uint64_t draw = rng.next_u64();
            if (rc.trainer.augment) gt = augment(gt, static_cast<unsigned>(draw & 3u), (draw >> 2) & 1u, (draw >> 3) & 1u);
            const auto y = optics::forward_measure(gt, mask, rc.model.shift_step, noise_spec(rc.trainer.noise, rng.next_u64()));
            const Tensor<T> shifted = to_tensor<T>(optics::shift_back(y.image, rc.model.shift_step, rc.model.bands));
            const auto out = net.forward(shifted, mask3d);
            const Tensor<T> target = to_tensor<T>(gt);
            const auto terms = sasm::total_loss(out.reconstruction, target,
                                                out.sparsity_mask, sasm::reference_mask(out.reconstruction, target),
                                                rc.model.loss_weight);
            row.l2 += static_cast<double>(terms.reconstruction.item()) / static_cast<double>(batch);
            row.ls += static_cast<double>(terms.sparsity.item()) / static_cast<double>(batch);
            const Tensor<T> share = scale(terms.total, T(1) / static_cast<T>(batch));
            objective = objective.defined() ? add(objective, share) : share;
        }
        row.total = row.l2 + rc.model.loss_weight * row.ls;
        backward(objective);
        adam_step(opt, params, lr);
        result.rows.push_back(row);
        if (step == 0 || (step + 1) % 20 == 0 || step + 1 == steps)
            log << "step " << row.step << "/" << steps << "  lr " << lr << "  l2 " << row.l2 << "  ls " << row.ls
                << "  total " << row.total << '\n';
    }
    result.checkpoint = (fs::path(out_dir) / "checkpoint.ckpt").string();
    io::save_checkpoint(result.checkpoint, net, rc);
    io::write_text((fs::path(out_dir) / "loss.csv").string(), loss_csv(result.rows));
    return result;
}

// ---------------------------------------------------------------------------------------
// eval

enum class Reconstruction { Model, ShiftBack, GroundTruth };

struct EvalOptions {
    std::string checkpoint;  // empty: untrained model built from the config
    Reconstruction source = Reconstruction::Model;
    std::optional<double> sparsity;
};

template <class T>
metrics::MetricReport evaluate(const RunConfig& base, const EvalOptions& opt, const std::string& dataset_dir,
                               const std::string& out_dir, std::ostream& log) {
    std::optional<io::LoadedCheckpoint<T>> loaded;
    RunConfig rc = base;
    if (!opt.checkpoint.empty()) {
        loaded.emplace(io::load_checkpoint<T>(opt.checkpoint));
        rc = loaded->config;
    }
    if (opt.sparsity) rc.model.sparsity = *opt.sparsity;
    rc.model.validate();
    std::optional<model::CstModel<T>> fresh;
    model::CstModel<T>* net = nullptr;
    if (loaded) {
        net = &loaded->model;
        net->mutable_config().sparsity = rc.model.sparsity;
    } else {
        fresh.emplace(rc.model, rc.trainer.seed);
        net = &*fresh;
    }

    const auto scenes = load_dataset(dataset_dir);
    fs::create_directories(out_dir);
    save_run_config(rc, (fs::path(out_dir) / "config.json").string());
    metrics::MetricReport report;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        if (s.cube.bands != rc.model.bands)
            throw DataError("eval: scene '" + s.name + "' has " + std::to_string(s.cube.bands) + " bands, config expects " +
                            std::to_string(rc.model.bands));
        const auto mask = dataset_mask(dataset_dir, s.cube.height, s.cube.width, rc.trainer.mask_seed);
        const auto y = optics::forward_measure(s.cube, mask, rc.model.shift_step,
                                               noise_spec(rc.trainer.noise, rc.trainer.seed * 7919ULL + i));
        HsiCube recon;
        switch (opt.source) {
            case Reconstruction::GroundTruth: recon = s.cube; break;
            case Reconstruction::ShiftBack:
                // routed through the working precision so it matches an identity-initialized model bit for bit
                recon = to_cube(to_tensor<T>(optics::shift_back(y.image, rc.model.shift_step, rc.model.bands)));
                break;
            case Reconstruction::Model: {
                NoGradGuard no_grad;
                recon = to_cube(net->forward(y, mask).reconstruction);
                break;
            }
        }
        metrics::SceneMetrics m{s.name, metrics::psnr(recon, s.cube), metrics::ssim(recon, s.cube),
                                metrics::psnr_per_band(recon, s.cube)};
        io::write_cube((fs::path(out_dir) / (s.name + kReconSuffix)).string(), recon);
        log << s.name << ": PSNR " << m.psnr_db << " dB, SSIM " << m.ssim << '\n';
        report.scenes.push_back(std::move(m));
    }
    log << "mean: PSNR " << report.mean_psnr() << " dB, SSIM " << report.mean_ssim() << '\n';
    io::write_text((fs::path(out_dir) / "metrics.csv").string(), io::metrics_csv(report));
    io::write_text((fs::path(out_dir) / "metrics_bands.csv").string(), io::band_metrics_csv(report));
    return report;
}

// ---------------------------------------------------------------------------------------
// bench

struct BenchRow {
    double sigma = 0.0;
    std::size_t params = 0;
    double flops = 0.0;
    double attention_flops = 0.0;
    double wall_ms = 0.0;
};

struct BenchOptions {
    std::vector<double> sigmas{0.0, 0.25, 0.5, 0.75};
    std::size_t height = 0;  // 0: use crop_size
    std::size_t width = 0;
    std::size_t repeats = 1;  // 0: skip timing
};

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << std::setprecision(12) << "sigma,params,flops,attention_flops,wall_ms\n";
    for (const auto& r : rows)
        os << r.sigma << ',' << r.params << ',' << r.flops << ',' << r.attention_flops << ',' << r.wall_ms << '\n';
    return os.str();
}

template <class T>
std::vector<BenchRow> bench(const RunConfig& rc, const BenchOptions& opt, const std::string& out_dir, std::ostream& log) {
    const std::size_t H = opt.height ? opt.height : rc.trainer.crop_size;
    const std::size_t W = opt.width ? opt.width : rc.trainer.crop_size;
    rc.model.validate_geometry(H, W);
    std::vector<BenchRow> rows;
    for (double sigma : opt.sigmas) {
        model::CstConfig cfg = rc.model;
        cfg.sparsity = sigma;
        cfg.validate();
        BenchRow row;
        row.sigma = sigma;
        row.params = model::count_params(cfg);
        const auto flops = model::count_flops(cfg, H, W, model::nominal_selection(cfg, H, W));
        row.flops = flops.total;
        row.attention_flops = flops.attention;
        if (opt.repeats > 0) {
            model::CstModel<T> net(cfg, rc.trainer.seed);
            Rng rng(rc.trainer.seed, streams::kTest);
            const Tensor<T> shifted = Tensor<T>::uniform(Shape{H, W, cfg.bands}, rng, 0.0, 1.0);
            const Tensor<T> mask3d = to_tensor<T>(optics::CodedAperture::bernoulli(H, W, rc.trainer.mask_seed).replicate(cfg.bands));
            NoGradGuard no_grad;
            const auto start = std::chrono::steady_clock::now();
            for (std::size_t r = 0; r < opt.repeats; ++r) (void)net.forward(shifted, mask3d);
            row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() /
                          static_cast<double>(opt.repeats);
        }
        log << "sigma " << sigma << ": params " << row.params << ", GFLOPs " << row.flops / 1e9 << " (attention "
            << row.attention_flops / 1e9 << "), " << row.wall_ms << " ms/forward\n";
        rows.push_back(row);
    }
    fs::create_directories(out_dir);
    save_run_config(rc, (fs::path(out_dir) / "config.json").string());
    io::write_text((fs::path(out_dir) / "bench.csv").string(), bench_csv(rows));
    return rows;
}

// ---------------------------------------------------------------------------------------
// inspect-mask

struct InspectResult {
    std::size_t k = 0;
    Image2 predicted;   // M_s
    Image2 reference;   // M*_s
    sasm::BinaryPatchMask selection;
};

/// Upsamples a patch grid to pixel resolution (selected = 1).
inline Image2 expand_grid(const sasm::BinaryPatchMask& mask) {
    Image2 out(mask.rows * mask.patch_size, mask.cols * mask.patch_size);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x)
            out(y, x) = mask.selected(y / mask.patch_size, x / mask.patch_size) ? 1.0 : 0.0;
    return out;
}

template <class T>
InspectResult inspect_mask(const std::string& checkpoint, const std::string& scene_path, std::optional<double> sparsity,
                           const std::string& out_dir, std::ostream& log) {
    auto ck = io::load_checkpoint<T>(checkpoint);
    if (sparsity) ck.model.mutable_config().sparsity = *sparsity;
    const auto& cfg = ck.model.config();
    cfg.validate();
    const HsiCube gt = io::read_cube(scene_path);
    if (gt.bands != cfg.bands)
        throw DataError("inspect-mask: scene has " + std::to_string(gt.bands) + " bands, model expects " +
                        std::to_string(cfg.bands));
    const auto mask = dataset_mask(fs::path(scene_path).parent_path().string(), gt.height, gt.width,
                                   ck.config.trainer.mask_seed);
    const auto y = optics::forward_measure(gt, mask, cfg.shift_step, noise_spec(ck.config.trainer.noise, ck.config.trainer.seed));
    NoGradGuard no_grad;
    const auto out = ck.model.forward(y, mask);
    InspectResult r;
    r.predicted = to_image(out.sparsity_mask);
    r.reference = sasm::reference_mask(to_cube(out.reconstruction), gt);
    r.selection = out.selection;
    r.k = out.selection.count();
    fs::create_directories(out_dir);
    io::write_pgm((fs::path(out_dir) / "mask_pred.pgm").string(), r.predicted);
    io::write_pgm((fs::path(out_dir) / "mask_ref.pgm").string(), r.reference);
    io::write_pgm((fs::path(out_dir) / "mask_select.pgm").string(), expand_grid(r.selection));
    RunConfig echoed = ck.config;
    echoed.model.sparsity = cfg.sparsity;
    save_run_config(echoed, (fs::path(out_dir) / "config.json").string());
    log << "selected patches k=" << r.k << " of " << r.selection.rows * r.selection.cols << " (sparsity " << cfg.sparsity
        << ")\n";
    return r;
}

}  // namespace cst::app
