#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnl/error.hpp"

namespace mnl {

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Snapshot of a system on a 2π-periodic square grid, stored channel-major
/// then row-major: values[(c * height + i) * width + j], i indexing y, j indexing x.
/// Finite-dimensional states (the linear-Gaussian reference) embed as C = d, H = W = 1.
struct GridField {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    double grid_spacing = 2.0 * std::numbers::pi;
    std::vector<double> values = std::vector<double>(1, 0.0);

    GridField() = default;

    GridField(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w),
          grid_spacing(2.0 * std::numbers::pi / static_cast<double>(w)),
          values(c * h * w, fill) {
        if (c == 0 || !is_power_of_two(h) || !is_power_of_two(w)) {
            throw ArgumentError("GridField: channels must be positive and H, W powers of two");
        }
    }

    static GridField from_vector(std::span<const double> state) {
        GridField f(state.size(), 1, 1);
        f.values.assign(state.begin(), state.end());
        return f;
    }

    std::size_t size() const noexcept { return values.size(); }
    std::size_t plane() const noexcept { return height * width; }

    double& at(std::size_t c, std::size_t i, std::size_t j) { return values[(c * height + i) * width + j]; }
    double at(std::size_t c, std::size_t i, std::size_t j) const { return values[(c * height + i) * width + j]; }

    std::span<double> channel(std::size_t c) { return {values.data() + c * plane(), plane()}; }
    std::span<const double> channel(std::size_t c) const { return {values.data() + c * plane(), plane()}; }

    bool same_shape(const GridField& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }

    bool all_finite() const noexcept {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

/// Per-channel affine map to zero mean / unit variance.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> std;

    bool empty() const noexcept { return mean.empty(); }

    static Normalization identity(std::size_t channels) {
        return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
    }

    GridField apply(const GridField& f) const {
        check(f);
        GridField out = f;
        for (std::size_t c = 0; c < f.channels; ++c) {
            for (double& v : out.channel(c)) v = (v - mean[c]) / std[c];
        }
        return out;
    }

    GridField invert(const GridField& f) const {
        check(f);
        GridField out = f;
        for (std::size_t c = 0; c < f.channels; ++c) {
            for (double& v : out.channel(c)) v = v * std[c] + mean[c];
        }
        return out;
    }

    bool operator==(const Normalization&) const = default;

private:
    void check(const GridField& f) const {
        if (mean.size() != f.channels || std.size() != f.channels) {
            throw ArgumentError("Normalization: channel count mismatch");
        }
    }
};

inline void to_json(nlohmann::json& j, const Normalization& n) { j = {{"mean", n.mean}, {"std", n.std}}; }
inline void from_json(const nlohmann::json& j, Normalization& n) {
    j.at("mean").get_to(n.mean);
    j.at("std").get_to(n.std);
}

struct Trajectory {
    std::vector<GridField> frames;
    double dt_physical = 1.0;
    std::int64_t subsample = 1;
    std::uint64_t seed = 0;
    std::string system_tag;
    nlohmann::json system_config = nlohmann::json::object();
    Normalization normalization;

    std::size_t size() const noexcept { return frames.size(); }
    const GridField& operator[](std::size_t t) const { return frames[t]; }

    double time_of(std::size_t t) const noexcept { return static_cast<double>(t) * dt_physical; }

    /// Throws ArgumentError unless the trajectory is non-empty with a constant frame shape.
    void validate() const {
        if (frames.empty()) throw ArgumentError("Trajectory: must contain at least one frame");
        for (const auto& f : frames) {
            if (!f.same_shape(frames.front())) throw ArgumentError("Trajectory: frame shapes differ");
        }
    }
};

/// Per-channel mean and standard deviation over all frames of all trajectories.
inline Normalization fit_normalization(std::span<const Trajectory> trajectories) {
    if (trajectories.empty() || trajectories.front().frames.empty()) {
        throw ArgumentError("fit_normalization: no frames");
    }
    const std::size_t channels = trajectories.front().frames.front().channels;
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    std::vector<double> count(channels, 0.0);
    for (const auto& traj : trajectories) {
        for (const auto& f : traj.frames) {
            for (std::size_t c = 0; c < channels; ++c) {
                for (double v : f.channel(c)) {
                    sum[c] += v;
                    sq[c] += v * v;
                    count[c] += 1.0;
                }
            }
        }
    }
    Normalization n;
    for (std::size_t c = 0; c < channels; ++c) {
        const double m = sum[c] / count[c];
        const double var = std::max(sq[c] / count[c] - m * m, 0.0);
        n.mean.push_back(m);
        n.std.push_back(var > 0.0 ? std::sqrt(var) : 1.0);
    }
    return n;
}

}  // namespace mnl
