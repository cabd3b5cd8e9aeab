// SPDX-License-Identifier: Apache-2.0
#pragma once

// On-disk formats. See docs/formats.md.
//
//   raster      one JSON text line {"dims":[...],"dtype":"f32","order":"row-major","bands_last":true}
//               followed by product(dims) little-endian float32 values
//   checkpoint  "CSTCKPT1\n", one JSON text line (config, parameter names/shapes, hash
//               projections), then every parameter as little-endian float32 in header order
//   CSV / PGM   metric tables, bucket dumps and 8-bit "P5" grayscale images

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cst/config.hpp"
#include "cst/metrics.hpp"

namespace cst::io {

namespace detail {

inline void write_f32_le(std::ostream& out, const std::vector<float>& values) {
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<float> read_f32_le(std::istream& in, std::size_t count, const std::string& what) {
    std::vector<char> bytes(count * 4);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size())
        throw DataError(what + ": payload truncated (expected " + std::to_string(count) + " float32 values)");
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
        values[i] = std::bit_cast<float>(bits);
    }
    return values;
}

inline void require_eof(std::istream& in, const std::string& what) {
    if (in.peek() != std::char_traits<char>::eof()) throw DataError(what + ": trailing bytes after payload");
}

}  // namespace detail

struct Raster {
    std::vector<std::size_t> dims;
    std::vector<float> values;
};

inline void write_raster(const std::string& path, const Raster& r) {
    if (numel_of(r.dims) != r.values.size())
        throw DimensionError("write_raster: dims " + shape_str(r.dims) + " hold " + std::to_string(numel_of(r.dims)) +
                             " values, got " + std::to_string(r.values.size()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_raster: cannot open '" + path + "'");
    nlohmann::ordered_json header;
    header["dims"] = r.dims;
    header["dtype"] = "f32";
    header["order"] = "row-major";
    header["bands_last"] = true;
    out << header.dump() << '\n';
    detail::write_f32_le(out, r.values);
    if (!out) throw DataError("write_raster: write failed for '" + path + "'");
}

inline Raster read_raster(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_raster: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("read_raster: '" + path + "' has no header line");
    Raster r;
    try {
        const auto header = nlohmann::json::parse(line);
        if (header.at("dtype") != "f32" || header.at("order") != "row-major" || header.at("bands_last") != true)
            throw DataError("read_raster: '" + path + "' has an unsupported layout");
        r.dims = header.at("dims").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("read_raster: bad header in '" + path + "': " + e.what());
    }
    if (r.dims.empty()) throw DataError("read_raster: '" + path + "' has no dims");
    r.values = detail::read_f32_le(in, numel_of(r.dims), "read_raster '" + path + "'");
    detail::require_eof(in, "read_raster '" + path + "'");
    return r;
}

inline void write_cube(const std::string& path, const HsiCube& cube) {
    write_raster(path, {{cube.height, cube.width, cube.bands}, std::vector<float>(cube.values.begin(), cube.values.end())});
}

inline void write_image(const std::string& path, const Image2& image) {
    write_raster(path, {{image.height, image.width}, std::vector<float>(image.values.begin(), image.values.end())});
}

inline HsiCube read_cube(const std::string& path) {
    Raster r = read_raster(path);
    if (r.dims.size() != 3) throw DataError("read_cube: '" + path + "' has dims " + shape_str(r.dims));
    HsiCube cube(r.dims[0], r.dims[1], r.dims[2]);
    std::copy(r.values.begin(), r.values.end(), cube.values.begin());
    return cube;
}

inline Image2 read_image(const std::string& path) {
    Raster r = read_raster(path);
    if (r.dims.size() != 2) throw DataError("read_image: '" + path + "' has dims " + shape_str(r.dims));
    Image2 image(r.dims[0], r.dims[1]);
    std::copy(r.values.begin(), r.values.end(), image.values.begin());
    return image;
}

/// Max-normalized 8-bit binary PGM; negative values clamp to 0, an all-zero image stays black.
inline void write_pgm(const std::string& path, const Image2& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_pgm: cannot open '" + path + "'");
    double peak = 0.0;
    for (double v : image.values) peak = std::max(peak, v);
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<char> bytes(image.values.size(), 0);
    if (peak > 0.0)
        for (std::size_t i = 0; i < bytes.size(); ++i)
            bytes[i] = static_cast<char>(static_cast<unsigned char>(
                std::lround(std::clamp(image.values[i] / peak, 0.0, 1.0) * 255.0)));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Columns scene,psnr_db,ssim; a final "mean" row holds the arithmetic means.
inline std::string metrics_csv(const metrics::MetricReport& report) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "scene,psnr_db,ssim\n";
    for (const auto& s : report.scenes) os << s.scene << ',' << s.psnr_db << ',' << s.ssim << '\n';
    os << "mean," << report.mean_psnr() << ',' << report.mean_ssim() << '\n';
    return os.str();
}

/// Long form: scene,band,psnr_db.
inline std::string band_metrics_csv(const metrics::MetricReport& report) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "scene,band,psnr_db\n";
    for (const auto& s : report.scenes)
        for (std::size_t b = 0; b < s.band_psnr_db.size(); ++b) os << s.scene << ',' << b << ',' << s.band_psnr_db[b] << '\n';
    return os.str();
}

/// Columns call,round,position,token,bucket for every recorded SAH-MSA call.
inline std::string buckets_csv(const attn::Routing& routing) {
    std::ostringstream os;
    os << "call,round,position,token,bucket\n";
    for (std::size_t c = 0; c < routing.calls.size(); ++c)
        for (std::size_t r = 0; r < routing.calls[c].size(); ++r) {
            const auto& ba = routing.calls[c][r];
            for (std::size_t p = 0; p < ba.order.size(); ++p)
                os << c << ',' << r << ',' << p << ',' << ba.order[p] << ',' << p / ba.bucket_size << '\n';
        }
    return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
}

inline constexpr char kCheckpointMagic[] = "CSTCKPT1";

template <class T>
void save_checkpoint(const std::string& path, model::CstModel<T>& net, const RunConfig& rc) {
    nlohmann::ordered_json header;
    header["config"] = to_json(rc);
    header["model_seed"] = net.seed();
    nlohmann::ordered_json params = nlohmann::ordered_json::array();
    std::size_t total = 0;
    for (const auto& [name, t] : net.params().entries()) {
        params.push_back({{"name", name}, {"shape", t.shape()}});
        total += t.numel();
    }
    header["params"] = params;
    nlohmann::ordered_json hashes = nlohmann::ordered_json::array();
    for (const auto* hp : net.hash_params()) {
        nlohmann::ordered_json rounds = nlohmann::ordered_json::array();
        for (const auto& r : hp->rounds) rounds.push_back({{"a", r.a}, {"b", r.b}});
        hashes.push_back({{"r", hp->r}, {"rounds", rounds}});
    }
    header["hash"] = hashes;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open '" + path + "'");
    out << kCheckpointMagic << '\n' << header.dump() << '\n';
    std::vector<float> payload;
    payload.reserve(total);
    for (const auto& [name, t] : net.params().entries())
        for (T v : t.data()) payload.push_back(static_cast<float>(v));
    detail::write_f32_le(out, payload);
    if (!out) throw DataError("save_checkpoint: write failed for '" + path + "'");
}

template <class T>
struct LoadedCheckpoint {
    RunConfig config;
    model::CstModel<T> model;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
    std::string magic, line;
    if (!std::getline(in, magic) || magic != kCheckpointMagic)
        throw DataError("load_checkpoint: '" + path + "' is not a CSTCKPT1 checkpoint");
    if (!std::getline(in, line)) throw DataError("load_checkpoint: '" + path + "' has no header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_checkpoint: bad header in '" + path + "': " + e.what());
    }
    RunConfig rc = run_config_from_json(header.at("config"));
    LoadedCheckpoint<T> ck{rc, model::CstModel<T>(rc.model, header.at("model_seed").get<std::uint64_t>())};
    const auto& entries = ck.model.params().entries();
    const auto& listed = header.at("params");
    if (listed.size() != entries.size())
        throw DataError("load_checkpoint: checkpoint lists " + std::to_string(listed.size()) +
                        " parameters, model has " + std::to_string(entries.size()));
    std::size_t total = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (listed[i].at("name").get<std::string>() != entries[i].first ||
            listed[i].at("shape").get<Shape>() != entries[i].second.shape())
            throw DataError("load_checkpoint: parameter " + std::to_string(i) + " ('" + entries[i].first +
                            "') does not match the checkpoint layout");
        total += entries[i].second.numel();
    }
    const auto payload = detail::read_f32_le(in, total, "load_checkpoint '" + path + "'");
    detail::require_eof(in, "load_checkpoint '" + path + "'");
    std::size_t at = 0;
    for (const auto& [name, t] : entries) {
        Tensor<T> dst = t;
        for (auto& v : dst.mutable_data()) v = static_cast<T>(payload[at++]);
    }
    auto hps = ck.model.hash_params();
    const auto& hashes = header.at("hash");
    if (hashes.size() != hps.size()) throw DataError("load_checkpoint: hash parameter count mismatch");
    for (std::size_t i = 0; i < hps.size(); ++i) {
        hps[i]->r = hashes[i].at("r").get<double>();
        hps[i]->rounds.clear();
        for (const auto& r : hashes[i].at("rounds"))
            hps[i]->rounds.push_back({r.at("a").get<std::vector<double>>(), r.at("b").get<double>()});
    }
    return ck;
}

}  // namespace cst::io
