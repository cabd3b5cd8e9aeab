// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "cst/model.hpp"

namespace cst {

struct TrainerConfig {
    std::size_t epochs = 500;
    /// When nonzero, overrides epochs as the total optimizer step count.
    std::size_t steps = 0;
    std::size_t batch_size = 5;
    double lr = 4e-4;
    std::uint64_t seed = 0;
    std::size_t crop_size = 256;
    bool augment = true;
    std::string noise = "none";  // "none" | "shot11"
    std::uint64_t mask_seed = 1;

    bool operator==(const TrainerConfig&) const = default;
};

struct RunConfig {
    model::CstConfig model;
    TrainerConfig trainer;

    bool operator==(const RunConfig&) const = default;

    /// Toy-scale preset: 32x32 crops, 4 bands, C=4, M=8, m=16, 200 steps.
    static RunConfig desk() {
        RunConfig rc;
        rc.model = model::CstConfig::preset("desk");
        rc.trainer.steps = 200;
        rc.trainer.batch_size = 4;
        rc.trainer.crop_size = 32;
        rc.trainer.lr = 4e-3;
        return rc;
    }
};

namespace detail {

inline std::string weighting_name(attn::RoundWeighting w) {
    return w == attn::RoundWeighting::AttentionMass ? "attention_mass" : "logit_mass";
}

inline attn::RoundWeighting parse_weighting(const std::string& s) {
    if (s == "attention_mass") return attn::RoundWeighting::AttentionMass;
    if (s == "logit_mass") return attn::RoundWeighting::LogitMass;
    throw ConfigError("round_weighting must be 'attention_mass' or 'logit_mass', got '" + s + "'");
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& rc) {
    const auto& m = rc.model;
    const auto& t = rc.trainer;
    nlohmann::ordered_json j;
    j["blocks"] = {m.blocks[0], m.blocks[1], m.blocks[2]};
    j["channels"] = m.channels;
    j["bands"] = m.bands;
    j["patch_size"] = m.patch_size;
    j["bucket_size"] = m.bucket_size;
    j["rounds"] = m.rounds;
    j["head_dim"] = m.head_dim;
    j["shift_step"] = m.shift_step;
    j["sparsity"] = m.sparsity;
    j["loss_weight"] = m.loss_weight;
    j["hash_r"] = m.hash_r;
    j["round_weighting"] = detail::weighting_name(m.weighting);
    j["resample_hashes"] = m.resample_hashes;
    j["aspp_rates"] = m.aspp_rates;
    j["epochs"] = t.epochs;
    j["steps"] = t.steps;
    j["batch_size"] = t.batch_size;
    j["lr"] = t.lr;
    j["seed"] = t.seed;
    j["crop_size"] = t.crop_size;
    j["augment"] = t.augment;
    j["noise"] = t.noise;
    j["mask_seed"] = t.mask_seed;
    return j;
}

/// Parses a config object. "preset" (a model preset name or "desk") is applied first and
/// the remaining keys override it; unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    RunConfig rc;
    if (j.contains("preset")) {
        const std::string preset = j.at("preset").get<std::string>();
        if (preset == "desk") {
            rc = RunConfig::desk();
        } else {
            rc.model = model::CstConfig::preset(preset);
        }
    }
    auto& m = rc.model;
    auto& t = rc.trainer;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "preset") continue;
            else if (key == "blocks") {
                const auto b = v.get<std::vector<std::size_t>>();
                if (b.size() != 3) throw ConfigError("config: blocks needs exactly three entries");
                m.blocks = {b[0], b[1], b[2]};
            } else if (key == "channels") m.channels = v.get<std::size_t>();
            else if (key == "bands") m.bands = v.get<std::size_t>();
            else if (key == "patch_size") m.patch_size = v.get<std::size_t>();
            else if (key == "bucket_size") m.bucket_size = v.get<std::size_t>();
            else if (key == "rounds") m.rounds = v.get<std::size_t>();
            else if (key == "head_dim") m.head_dim = v.get<std::size_t>();
            else if (key == "shift_step") m.shift_step = v.get<std::size_t>();
            else if (key == "sparsity") m.sparsity = v.get<double>();
            else if (key == "loss_weight") m.loss_weight = v.get<double>();
            else if (key == "hash_r") m.hash_r = v.get<double>();
            else if (key == "round_weighting") m.weighting = detail::parse_weighting(v.get<std::string>());
            else if (key == "resample_hashes") m.resample_hashes = v.get<bool>();
            else if (key == "aspp_rates") m.aspp_rates = v.get<std::vector<std::size_t>>();
            else if (key == "epochs") t.epochs = v.get<std::size_t>();
            else if (key == "steps") t.steps = v.get<std::size_t>();
            else if (key == "batch_size") t.batch_size = v.get<std::size_t>();
            else if (key == "lr") t.lr = v.get<double>();
            else if (key == "seed") t.seed = v.get<std::uint64_t>();
            else if (key == "crop_size") t.crop_size = v.get<std::size_t>();
            else if (key == "augment") t.augment = v.get<bool>();
            else if (key == "noise") t.noise = v.get<std::string>();
            else if (key == "mask_seed") t.mask_seed = v.get<std::uint64_t>();
            else throw ConfigError("config: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    m.validate();
    if (t.batch_size == 0) throw ConfigError("config: batch_size must be positive");
    if (t.noise != "none" && t.noise != "shot11") throw ConfigError("config: noise must be 'none' or 'shot11'");
    if (!(t.lr > 0.0)) throw ConfigError("config: lr must be positive");
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

inline void save_run_config(const RunConfig& rc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("config: cannot write '" + path + "'");
    out << to_json(rc).dump(2) << '\n';
}

}  // namespace cst
