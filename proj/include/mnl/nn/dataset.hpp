#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"
#include "mnl/nn/tensor.hpp"

namespace mnl::nn {

/// Normalized frames of one or more trajectories, stored contiguously as [N, C, H, W] float32.
/// Windows never straddle two trajectories.
struct SequenceDataset {
    torch::Tensor frames;
    std::vector<std::int64_t> offsets;  // offsets[k] = first frame of trajectory k; back() = N
    FrameShape shape;

    std::int64_t size() const noexcept { return offsets.empty() ? 0 : offsets.back(); }

    static SequenceDataset from_trajectories(std::span<const Trajectory> trajectories, const Normalization& norm) {
        if (trajectories.empty()) throw ArgumentError("SequenceDataset: no trajectories");
        SequenceDataset ds;
        std::vector<torch::Tensor> parts;
        ds.offsets.push_back(0);
        for (const auto& traj : trajectories) {
            traj.validate();
            std::vector<GridField> frames;
            frames.reserve(traj.size());
            for (const auto& f : traj.frames) frames.push_back(norm.empty() ? f : norm.apply(f));
            parts.push_back(to_tensor(frames));
            ds.offsets.push_back(ds.offsets.back() + static_cast<std::int64_t>(traj.size()));
        }
        ds.frames = torch::cat(parts, 0);
        ds.shape = FrameShape::of(trajectories.front().frames.front());
        if (ds.frames.size(1) != ds.shape.channels || ds.frames.size(2) != ds.shape.height ||
            ds.frames.size(3) != ds.shape.width) {
            throw ArgumentError("SequenceDataset: trajectories have different frame shapes");
        }
        return ds;
    }

    /// First indices t such that frames t .. t + window - 1 lie in one trajectory.
    std::vector<std::int64_t> window_starts(std::int64_t window) const {
        if (window < 1) throw ArgumentError("SequenceDataset: window must be >= 1");
        std::vector<std::int64_t> out;
        for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
            for (std::int64_t t = offsets[k]; t + window <= offsets[k + 1]; ++t) out.push_back(t);
        }
        return out;
    }

    /// Splits every trajectory at ⌊(1 − heldout_fraction)·length⌋; the tails form the held-out set.
    std::pair<SequenceDataset, SequenceDataset> split(double heldout_fraction) const {
        if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
            throw ArgumentError("SequenceDataset: heldout_fraction must lie in (0, 1)");
        }
        SequenceDataset a, b;
        a.shape = b.shape = shape;
        a.offsets = b.offsets = {0};
        std::vector<torch::Tensor> pa, pb;
        for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
            const auto len = offsets[k + 1] - offsets[k];
            const auto cut = static_cast<std::int64_t>(std::floor((1.0 - heldout_fraction) * static_cast<double>(len)));
            if (cut < 2 || len - cut < 2) continue;
            pa.push_back(frames.narrow(0, offsets[k], cut));
            pb.push_back(frames.narrow(0, offsets[k] + cut, len - cut));
            a.offsets.push_back(a.offsets.back() + cut);
            b.offsets.push_back(b.offsets.back() + len - cut);
        }
        if (pa.empty()) throw ArgumentError("SequenceDataset: trajectories too short to split");
        a.frames = torch::cat(pa, 0);
        b.frames = torch::cat(pb, 0);
        return {a, b};
    }
};

/// Restores the global CPU generator on scope exit.
class GeneratorStateGuard {
public:
    GeneratorStateGuard() : state_(generator().get_state()) {}
    ~GeneratorStateGuard() { generator().set_state(state_); }
    GeneratorStateGuard(const GeneratorStateGuard&) = delete;
    GeneratorStateGuard& operator=(const GeneratorStateGuard&) = delete;

private:
    static at::Generator generator() { return torch::globalContext().defaultGenerator(torch::kCPU); }
    at::Tensor state_;
};

/// Deterministic per-step seed so that a resumed run draws the same batches.
inline std::uint64_t step_seed(std::uint64_t seed, std::int64_t step) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(step) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return (z ^ (z >> 31)) & 0x7FFFFFFFFFFFFFFFULL;
}

}  // namespace mnl::nn
