// SPDX-License-Identifier: Apache-2.0
// cst: simulate | train | eval | bench | inspect-mask
//
// Exit codes: 0 success, 1 internal error, 2 bad configuration, 3 bad input data.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cst/cst.hpp"

namespace {

struct Common {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    int precision = 32;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON run config");
    cmd->add_option("--preset", c.preset, "cst-s | cst-m | cst-l | cst-l* | desk");
    cmd->add_option("--seed", c.seed, "overrides the config seed");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--precision", c.precision, "32 or 64")->check(CLI::IsMember({32, 64}));
}

cst::RunConfig resolve(const Common& c) {
    cst::RunConfig rc;
    if (!c.preset.empty()) rc = cst::run_config_from_json(nlohmann::json{{"preset", c.preset}});
    if (!c.config.empty()) {
        if (!c.preset.empty()) throw cst::ConfigError("pass either --config or --preset, not both");
        rc = cst::load_run_config(c.config);
    }
    if (c.seed) rc.trainer.seed = *c.seed;
    return rc;
}

template <class F>
void with_precision(int precision, F&& f) {
    if (precision == 64) {
        f(double{});
    } else {
        f(float{});
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coded-aperture spectral snapshot reconstruction"};
    app.require_subcommand(1);

    Common sim_c, train_c, eval_c, bench_c, inspect_c;
    cst::app::SimulateOptions sim;
    auto* sim_cmd = app.add_subcommand("simulate", "synthesize or load scenes and write CASSI measurements");
    add_common(sim_cmd, sim_c);
    sim_cmd->add_option("--synth", sim.synth_count, "number of synthetic scenes");
    sim_cmd->add_option("--scenes", sim.scenes_dir, "directory of *.cube.raster scenes");
    sim_cmd->add_option("--height", sim.height);
    sim_cmd->add_option("--width", sim.width);
    sim_cmd->add_option("--bands", sim.bands, "defaults to the config's band count");
    sim_cmd->add_option("--blobs", sim.profile.blobs);
    sim_cmd->add_option("--coverage", sim.profile.coverage);
    std::optional<std::string> sim_noise;
    std::optional<std::size_t> sim_shift;
    std::optional<std::uint64_t> sim_mask_seed;
    sim_cmd->add_option("--noise", sim_noise, "none | shot11")->check(CLI::IsMember({"none", "shot11"}));
    sim_cmd->add_option("--shift-step", sim_shift, "dispersion shift in pixels per band");
    sim_cmd->add_option("--mask-seed", sim_mask_seed, "seed of the Bernoulli coded aperture");

    std::string train_data;
    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset directory");
    add_common(train_cmd, train_c);
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    std::optional<std::size_t> train_steps;
    train_cmd->add_option("--steps", train_steps, "total optimizer steps (overrides epochs)");

    std::string eval_data, baseline = "none";
    cst::app::EvalOptions eval_opt;
    std::optional<double> eval_sparsity;
    auto* eval_cmd = app.add_subcommand("eval", "reconstruct a dataset and report PSNR/SSIM");
    add_common(eval_cmd, eval_c);
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--checkpoint", eval_opt.checkpoint, "trained checkpoint (default: untrained model)");
    eval_cmd->add_option("--baseline", baseline, "none | shift-back | ground-truth")
        ->check(CLI::IsMember({"none", "shift-back", "ground-truth"}));
    eval_cmd->add_option("--sparsity", eval_sparsity, "override the patch sparsity");

    cst::app::BenchOptions bench_opt;
    auto* bench_cmd = app.add_subcommand("bench", "parameter/FLOP/latency sweep over sparsity");
    add_common(bench_cmd, bench_c);
    bench_cmd->add_option("--sigmas", bench_opt.sigmas)->delimiter(',');
    bench_cmd->add_option("--height", bench_opt.height);
    bench_cmd->add_option("--width", bench_opt.width);
    bench_cmd->add_option("--repeats", bench_opt.repeats, "timed forwards per point, 0 skips timing");

    std::string inspect_ckpt, inspect_scene;
    std::optional<double> inspect_sparsity;
    auto* inspect_cmd = app.add_subcommand("inspect-mask", "dump predicted/reference/selected masks as PGM");
    add_common(inspect_cmd, inspect_c);
    inspect_cmd->add_option("--checkpoint", inspect_ckpt)->required();
    inspect_cmd->add_option("--scene", inspect_scene, "a *.cube.raster scene")->required();
    inspect_cmd->add_option("--sparsity", inspect_sparsity);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim_cmd->parsed()) {
            auto rc = resolve(sim_c);
            if (sim_noise) rc.trainer.noise = *sim_noise;
            if (sim_shift) rc.model.shift_step = *sim_shift;
            if (sim_mask_seed) rc.trainer.mask_seed = *sim_mask_seed;
            cst::app::simulate(rc, sim, sim_c.out, std::cout);
        } else if (train_cmd->parsed()) {
            auto rc = resolve(train_c);
            if (train_steps) rc.trainer.steps = *train_steps;
            with_precision(train_c.precision, [&](auto tag) {
                cst::app::train<decltype(tag)>(rc, train_data, train_c.out, std::cout);
            });
        } else if (eval_cmd->parsed()) {
            eval_opt.sparsity = eval_sparsity;
            eval_opt.source = baseline == "shift-back"     ? cst::app::Reconstruction::ShiftBack
                              : baseline == "ground-truth" ? cst::app::Reconstruction::GroundTruth
                                                           : cst::app::Reconstruction::Model;
            const auto rc = resolve(eval_c);
            with_precision(eval_c.precision, [&](auto tag) {
                cst::app::evaluate<decltype(tag)>(rc, eval_opt, eval_data, eval_c.out, std::cout);
            });
        } else if (bench_cmd->parsed()) {
            const auto rc = resolve(bench_c);
            with_precision(bench_c.precision, [&](auto tag) {
                cst::app::bench<decltype(tag)>(rc, bench_opt, bench_c.out, std::cout);
            });
        } else if (inspect_cmd->parsed()) {
            with_precision(inspect_c.precision, [&](auto tag) {
                cst::app::inspect_mask<decltype(tag)>(inspect_ckpt, inspect_scene, inspect_sparsity, inspect_c.out,
                                                      std::cout);
            });
        }
    } catch (const cst::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const cst::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const cst::DimensionError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
