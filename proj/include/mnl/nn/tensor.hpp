#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"

namespace mnl::nn {

/// (C, H, W) of a single frame.
struct FrameShape {
    std::int64_t channels = 1;
    std::int64_t height = 1;
    std::int64_t width = 1;

    std::int64_t numel() const noexcept { return channels * height * width; }
    std::vector<std::int64_t> sizes(std::int64_t batch) const { return {batch, channels, height, width}; }
    bool operator==(const FrameShape&) const = default;

    static FrameShape of(const GridField& f) {
        return {static_cast<std::int64_t>(f.channels), static_cast<std::int64_t>(f.height),
                static_cast<std::int64_t>(f.width)};
    }
};

inline void to_json(nlohmann::json& j, const FrameShape& s) { j = {s.channels, s.height, s.width}; }
inline void from_json(const nlohmann::json& j, FrameShape& s) {
    if (!j.is_array() || j.size() != 3) throw ConfigurationError("frame_shape must be [C, H, W]");
    s = {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

/// Stacks frames into a [B, C, H, W] tensor.
inline torch::Tensor to_tensor(std::span<const GridField> frames, torch::Dtype dtype = torch::kFloat32) {
    if (frames.empty()) throw ArgumentError("to_tensor: no frames");
    const auto shape = FrameShape::of(frames.front());
    std::vector<double> buf;
    buf.reserve(frames.size() * static_cast<std::size_t>(shape.numel()));
    for (const auto& f : frames) {
        if (!f.same_shape(frames.front())) throw ArgumentError("to_tensor: frame shapes differ");
        buf.insert(buf.end(), f.values.begin(), f.values.end());
    }
    auto t = torch::from_blob(buf.data(), shape.sizes(static_cast<std::int64_t>(frames.size())), torch::kFloat64);
    return t.to(dtype).clone();
}

inline torch::Tensor to_tensor(const GridField& frame, torch::Dtype dtype = torch::kFloat32) {
    return to_tensor(std::span<const GridField>(&frame, 1), dtype);
}

/// Frame b of a [B, C, H, W] tensor.
inline GridField to_field(const torch::Tensor& t, std::int64_t b = 0, double grid_spacing = 0.0) {
    if (t.dim() != 4) throw ArgumentError("to_field: expected [B, C, H, W]");
    const auto c = static_cast<std::size_t>(t.size(1)), h = static_cast<std::size_t>(t.size(2)),
               w = static_cast<std::size_t>(t.size(3));
    GridField f(c, h, w);
    if (grid_spacing > 0.0) f.grid_spacing = grid_spacing;
    const auto slice = t[b].to(torch::kFloat64).contiguous();
    const double* p = slice.data_ptr<double>();
    f.values.assign(p, p + f.size());
    return f;
}

inline bool all_finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace mnl::nn
