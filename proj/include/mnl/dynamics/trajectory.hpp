#pragma once

#include <cstdint>
#include <random>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"

namespace mnl::dynamics {

template <class S>
concept SteppableSystem = requires(S sys, GridField& f, std::mt19937_64& rng) {
    sys.step(f, rng, std::int64_t{0});
    { sys.dt() } -> std::convertible_to<double>;
    { sys.tag() } -> std::convertible_to<const char*>;
    sys.config_json();
};

/// Runs `burn_in` discarded steps, then records `n_frames` frames spaced `subsample` steps apart.
/// Frame 0 is the state right after burn-in. Deterministic given `seed`.
template <SteppableSystem System>
Trajectory generate_trajectory(System& system, GridField x0, std::int64_t n_frames, std::int64_t burn_in,
                               std::int64_t subsample, std::uint64_t seed) {
    if (n_frames < 1) throw ArgumentError("generate_trajectory: n_frames must be >= 1");
    if (burn_in < 0) throw ArgumentError("generate_trajectory: burn_in must be >= 0");
    if (subsample < 0 || (subsample == 0 && n_frames > 1)) {
        throw ArgumentError("generate_trajectory: subsample must be >= 1 when recording more than one frame");
    }
    std::mt19937_64 rng(seed);
    Trajectory traj;
    traj.dt_physical = system.dt() * static_cast<double>(subsample);
    traj.subsample = subsample;
    traj.seed = seed;
    traj.system_tag = system.tag();
    traj.system_config = system.config_json();
    traj.frames.reserve(static_cast<std::size_t>(n_frames));

    std::int64_t step = 0;
    for (; step < burn_in; ++step) system.step(x0, rng, step);
    traj.frames.push_back(x0);
    for (std::int64_t frame = 1; frame < n_frames; ++frame) {
        try {
            for (std::int64_t k = 0; k < subsample; ++k, ++step) system.step(x0, rng, step);
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string("generate_trajectory: frame ") + std::to_string(frame) + ": " +
                                      e.what(),
                                  frame);
        }
        traj.frames.push_back(x0);
    }
    return traj;
}

}  // namespace mnl::dynamics
