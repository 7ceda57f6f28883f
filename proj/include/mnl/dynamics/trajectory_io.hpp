#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"

namespace mnl::dynamics {

/// Trajectory container: `<stem>.json` header plus `<stem>.bin` payload of little-endian
/// float32 frames in row-major [T, C, H, W] order.
struct TrajectoryFiles {
    std::filesystem::path header;
    std::filesystem::path payload;

    static TrajectoryFiles from_stem(const std::filesystem::path& stem) {
        auto h = stem;
        auto p = stem;
        h += ".json";
        p += ".bin";
        return {h, p};
    }
};

namespace detail {

inline void put_f32_le(std::vector<char>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline float get_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

inline nlohmann::json trajectory_header(const Trajectory& traj, const std::string& payload_name) {
    traj.validate();
    const auto& f0 = traj.frames.front();
    nlohmann::json h;
    h["format"] = "mnl-trajectory";
    h["version"] = 1;
    h["dtype"] = "f32";
    h["endianness"] = "little";
    h["shape"] = {traj.frames.size(), f0.channels, f0.height, f0.width};
    h["dt_physical"] = traj.dt_physical;
    h["subsample"] = traj.subsample;
    h["seed"] = traj.seed;
    h["system_tag"] = traj.system_tag;
    h["system_config"] = traj.system_config;
    h["grid_spacing"] = f0.grid_spacing;
    h["payload"] = payload_name;
    if (!traj.normalization.empty()) {
        h["normalization"] = traj.normalization;
    } else {
        h["normalization"] = nullptr;
    }
    return h;
}

inline void write_trajectory(const Trajectory& traj, const std::filesystem::path& stem) {
    const auto files = TrajectoryFiles::from_stem(stem);
    const auto header = trajectory_header(traj, files.payload.filename().string());
    std::vector<char> bytes;
    bytes.reserve(traj.frames.size() * traj.frames.front().size() * 4);
    for (const auto& f : traj.frames) {
        for (double v : f.values) detail::put_f32_le(bytes, static_cast<float>(v));
    }
    if (!files.header.parent_path().empty()) std::filesystem::create_directories(files.header.parent_path());
    std::ofstream hs(files.header, std::ios::binary | std::ios::trunc);
    std::ofstream ps(files.payload, std::ios::binary | std::ios::trunc);
    if (!hs || !ps) throw ConfigurationError("write_trajectory: cannot open " + stem.string() + " for writing");
    hs << header.dump(2) << '\n';
    ps.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!hs || !ps) throw ConfigurationError("write_trajectory: write failed for " + stem.string());
}

/// `path` may be the stem or the header file itself.
inline Trajectory read_trajectory(std::filesystem::path path) {
    if (path.extension() == ".json") path.replace_extension();
    const auto files = TrajectoryFiles::from_stem(path);
    std::ifstream hs(files.header);
    if (!hs) throw ConfigurationError("read_trajectory: cannot open " + files.header.string());
    nlohmann::json h;
    try {
        hs >> h;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError("read_trajectory: malformed header " + files.header.string() + ": " + e.what());
    }
    if (h.value("dtype", "") != "f32" || h.value("endianness", "") != "little") {
        throw ConfigurationError("read_trajectory: unsupported dtype/endianness");
    }
    const auto shape = h.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 4) throw ConfigurationError("read_trajectory: shape must be [T, C, H, W]");
    const std::size_t T = shape[0], C = shape[1], H = shape[2], W = shape[3];
    const auto payload = files.header.parent_path() / h.value("payload", files.payload.filename().string());
    std::ifstream ps(payload, std::ios::binary);
    if (!ps) throw ConfigurationError("read_trajectory: cannot open payload " + payload.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(ps)), std::istreambuf_iterator<char>());
    const std::size_t frame = C * H * W;
    if (bytes.size() != T * frame * 4) throw ConfigurationError("read_trajectory: payload size mismatch");

    Trajectory traj;
    traj.dt_physical = h.at("dt_physical").get<double>();
    traj.subsample = h.at("subsample").get<std::int64_t>();
    traj.seed = h.at("seed").get<std::uint64_t>();
    traj.system_tag = h.at("system_tag").get<std::string>();
    traj.system_config = h.value("system_config", nlohmann::json::object());
    if (h.contains("normalization") && !h["normalization"].is_null()) {
        traj.normalization = h["normalization"].get<Normalization>();
    }
    const double spacing = h.value("grid_spacing", 2.0 * std::numbers::pi / static_cast<double>(W));
    traj.frames.reserve(T);
    const char* p = bytes.data();
    for (std::size_t t = 0; t < T; ++t) {
        GridField f(C, H, W);
        f.grid_spacing = spacing;
        for (std::size_t k = 0; k < frame; ++k, p += 4) f.values[k] = detail::get_f32_le(p);
        traj.frames.push_back(std::move(f));
    }
    return traj;
}

}  // namespace mnl::dynamics
