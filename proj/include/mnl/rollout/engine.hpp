#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"
#include "mnl/nn/denoiser.hpp"
#include "mnl/nn/surrogate.hpp"
#include "mnl/nn/tensor.hpp"
#include "mnl/rollout/path.hpp"
#include "mnl/rollout/reverse.hpp"
#include "mnl/schedule.hpp"

// Autoregressive rollouts: bare surrogate, SNS refinement (Alg. 1) and its traversal-path analogs,
// and SNS generation (Alg. 2). All states are normalized [1, C, H, W] tensors.

namespace mnl::rollout {

inline const std::vector<std::string>& strategy_names() {
    static const std::vector<std::string> names = {"sns_refine", "sns_generate", "clean_conditioning",
                                                   "joint_diffusion", "marginal_projection"};
    return names;
}

struct RolloutConfig {
    int horizon = 100;
    std::string strategy = "sns_refine";
    int activation_threshold = 0;  // refine only when the strategy's estimated level reaches this value
    std::uint64_t seed = 0;
    bool record_levels = false;
    std::string nan_policy = "abort";  // bare surrogate rollouts: "abort" or "propagate"

    void validate(int S) const {
        if (horizon < 1) throw ConfigurationError("rollout: horizon must be >= 1");
        if (std::find(strategy_names().begin(), strategy_names().end(), strategy) == strategy_names().end()) {
            throw ConfigurationError("rollout: unknown strategy '" + strategy + "'");
        }
        if (activation_threshold < 0 || activation_threshold > S + 1) {
            throw ConfigurationError("rollout: activation_threshold must lie in [0, S + 1]");
        }
        if (nan_policy != "abort" && nan_policy != "propagate") {
            throw ConfigurationError("rollout: nan_policy must be 'abort' or 'propagate'");
        }
    }

    NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(RolloutConfig, horizon, strategy, activation_threshold, seed,
                                                record_levels, nan_policy)
};

/// Maps (current, condition) to estimated levels (ŝ1, ŝ2).
using LevelEstimator = std::function<LevelPoint(const torch::Tensor& current, const torch::Tensor& cond)>;

inline LevelEstimator network_level_estimator(nn::Denoiser model) {
    return [model](const torch::Tensor& current, const torch::Tensor& cond) {
        const auto lv = nn::estimate_noise_levels(*model, current.to(torch::kFloat32), cond.to(torch::kFloat32));
        return LevelPoint{static_cast<int>(lv[0][0].item<std::int64_t>()),
                          static_cast<int>(lv[0][1].item<std::int64_t>())};
    };
}

inline LevelEstimator fixed_level_estimator(LevelPoint p) {
    return [p](const torch::Tensor&, const torch::Tensor&) { return p; };
}

struct DivergenceEvent {
    std::int64_t step = 0;
    std::string what;
    std::string action;  // "aborted", "propagated" or "regenerated"
};

inline void to_json(nlohmann::json& j, const DivergenceEvent& e) {
    j = {{"step", e.step}, {"what", e.what}, {"action", e.action}};
}

struct LevelLog {
    std::vector<std::int64_t> hist_s1;
    std::vector<std::int64_t> hist_s2;
    std::vector<LevelPoint> per_step;
    std::int64_t refined = 0;
    std::int64_t skipped = 0;

    explicit LevelLog(int S = 0) : hist_s1(static_cast<std::size_t>(S) + 1, 0), hist_s2(hist_s1) {}

    void record(LevelPoint p, bool keep_sequence) {
        hist_s1.at(static_cast<std::size_t>(p.s1))++;
        hist_s2.at(static_cast<std::size_t>(p.s2))++;
        if (keep_sequence) per_step.push_back(p);
    }
};

struct RolloutResult {
    torch::Tensor frames;  // [T + 1, C, H, W]; frame 0 is the initial state
    RolloutConfig config;
    LevelLog levels;
    std::vector<DivergenceEvent> divergence_events;

    /// First frame index holding a non-finite value, or -1.
    std::int64_t first_non_finite() const {
        const auto bad = torch::logical_not(torch::isfinite(frames)).flatten(1).any(1);
        const auto idx = torch::nonzero(bad);
        return idx.size(0) == 0 ? -1 : idx[0][0].item<std::int64_t>();
    }

    nlohmann::json sidecar() const {
        nlohmann::json j = {{"strategy", config.strategy},
                            {"threshold", config.activation_threshold},
                            {"horizon", config.horizon},
                            {"seed", config.seed},
                            {"level_histogram", {{"s1", levels.hist_s1}, {"s2", levels.hist_s2}}},
                            {"refined_steps", levels.refined},
                            {"skipped_steps", levels.skipped},
                            {"divergence_events", divergence_events},
                            {"first_non_finite_frame", first_non_finite()}};
        if (!levels.per_step.empty()) j["levels"] = levels.per_step;
        return j;
    }
};

/// Denormalized Trajectory view of a rollout.
inline Trajectory to_trajectory(const RolloutResult& r, const Normalization& norm, double dt_physical,
                                const std::string& tag = "rollout") {
    Trajectory traj;
    traj.dt_physical = dt_physical;
    traj.seed = r.config.seed;
    traj.system_tag = tag;
    traj.normalization = norm;
    const auto frames = r.frames.to(torch::kFloat64).contiguous();
    for (std::int64_t t = 0; t < frames.size(0); ++t) {
        auto f = nn::to_field(frames, t);
        traj.frames.push_back(norm.empty() ? f : norm.invert(f));
    }
    return traj;
}

namespace detail {

inline torch::Tensor as_batch(const torch::Tensor& x0) {
    if (x0.dim() == 3) return x0.unsqueeze(0);
    if (x0.dim() != 4 || x0.size(0) != 1) throw ArgumentError("rollout: initial state must be [C, H, W] or [1, C, H, W]");
    return x0;
}

inline torch::Tensor allocate_frames(const torch::Tensor& x0, int horizon) {
    auto sizes = x0.sizes().vec();
    sizes[0] = horizon + 1;
    auto frames = torch::empty(sizes, x0.options());
    frames[0] = x0[0];
    return frames;
}

}  // namespace detail

/// Surrogate alone. With nan_policy "propagate" a divergence fills the remaining frames with NaN;
/// with "abort" it raises DivergenceError naming the step.
inline RolloutResult bare_rollout(nn::SurrogateNet& surrogate, const torch::Tensor& x0_in, const RolloutConfig& cfg,
                                  double inference_sigma = 0.0) {
    const auto x0 = detail::as_batch(x0_in);
    RolloutResult r;
    r.config = cfg;
    r.frames = detail::allocate_frames(x0, cfg.horizon);
    auto gen = make_generator(cfg.seed);
    auto x = x0;
    for (int t = 1; t <= cfg.horizon; ++t) {
        try {
            x = nn::surrogate_step(surrogate, x, t, inference_sigma, gen);
        } catch (const DivergenceError& e) {
            if (cfg.nan_policy == "abort") throw DivergenceError("bare rollout diverged", t);
            r.divergence_events.push_back({t, e.what(), "propagated"});
            r.frames.narrow(0, t, cfg.horizon + 1 - t).fill_(std::numeric_limits<float>::quiet_NaN());
            return r;
        }
        r.frames[t] = x[0];
    }
    return r;
}

struct RefineInputs {
    nn::SurrogateNet* surrogate = nullptr;
    EpsilonProvider* epsilon = nullptr;
    LevelEstimator estimate;
    double inference_sigma = 0.0;
};

/// One refinement of the surrogate prediction `pred` given the stored previous frame `prev`.
/// Returns pred unchanged when gated off.
inline torch::Tensor refine_step(const RefineInputs& in, const RolloutConfig& cfg, const NoiseSchedule& sched,
                                 const torch::Tensor& pred, const torch::Tensor& prev, at::Generator& gen,
                                 LevelLog& log) {
    const LevelPoint est = in.estimate(pred, prev);
    sched.check_level(est.s1);
    sched.check_level(est.s2);
    log.record(est, cfg.record_levels);
    const bool uses_condition_level = cfg.strategy == "sns_refine" || cfg.strategy == "joint_diffusion";
    const int trigger = uses_condition_level ? std::max(est.s1, est.s2) : est.s1;
    if (trigger == 0 || trigger < cfg.activation_threshold) {
        ++log.skipped;
        return pred;
    }
    ++log.refined;
    if (cfg.strategy == "sns_refine" || cfg.strategy == "joint_diffusion") {
        const auto path = make_path(cfg.strategy == "sns_refine" ? "path_a" : "diagonal", est.s1, est.s2, sched.S);
        const auto cur = forward_noise(pred, est.s1, sched, gen);
        const auto cnd = forward_noise(prev, est.s2, sched, gen);
        return traverse(*in.epsilon, cur, cnd, path, sched, gen).first;
    }
    const auto path = make_path(cfg.strategy, est.s1, 0, sched.S);
    return traverse(*in.epsilon, forward_noise(pred, est.s1, sched, gen), prev, path, sched, gen).first;
}

/// Alg. 1 and its path analogs (clean_conditioning, joint_diffusion, marginal_projection).
/// A surrogate divergence is replaced by regenerating the current slot from pure noise along
/// (S, 0) → (0, 0), conditioned on the last refined state; when refinement is disabled
/// (threshold S + 1) the rollout aborts instead.
inline RolloutResult sns_refine_rollout(const RefineInputs& in, const torch::Tensor& x0_in, const RolloutConfig& cfg,
                                        const NoiseSchedule& sched) {
    cfg.validate(sched.S);
    if (cfg.strategy == "sns_generate") throw ConfigurationError("sns_refine_rollout: use sns_generate_rollout");
    if (!in.surrogate || !in.epsilon || !in.estimate) throw ArgumentError("sns_refine_rollout: missing inputs");
    if (in.epsilon->levels() != sched.S) throw ConfigurationError("sns_refine_rollout: denoiser S differs from schedule");
    const auto x0 = detail::as_batch(x0_in);
    RolloutResult r;
    r.config = cfg;
    r.levels = LevelLog(sched.S);
    r.frames = detail::allocate_frames(x0, cfg.horizon);
    auto gen = make_generator(cfg.seed);
    const bool enabled = cfg.activation_threshold <= sched.S;
    auto prev = x0;
    for (int t = 1; t <= cfg.horizon; ++t) {
        torch::Tensor pred;
        bool regenerate = false;
        try {
            pred = nn::surrogate_step(*in.surrogate, prev, t, in.inference_sigma, gen);
        } catch (const DivergenceError& e) {
            r.divergence_events.push_back({t, e.what(), enabled ? "regenerated" : "aborted"});
            if (!enabled) throw DivergenceError("rollout diverged with refinement disabled", t);
            regenerate = true;
        }
        torch::Tensor next;
        try {
            if (regenerate) {
                const auto path = make_path("clean_conditioning", sched.S, 0, sched.S);
                const auto noise = torch::randn(prev.sizes(), gen, prev.options());
                next = traverse(*in.epsilon, noise, prev, path, sched, gen).first;
            } else {
                next = refine_step(in, cfg, sched, pred, prev, gen, r.levels);
            }
        } catch (const DivergenceError& e) {
            r.divergence_events.push_back({t, e.what(), "aborted"});
            throw DivergenceError(std::string("sns rollout diverged: ") + e.what(), t);
        }
        r.frames[t] = next[0];
        prev = next;
    }
    return r;
}

/// Alg. 2: per step draw x̂_t ~ N(0, I), take ŝ2 from the condition head on (x̂_t, x_{t−1}), noise the
/// condition to ŝ2 and hold it there while the current slot runs the full reverse pass from S to 0.
inline RolloutResult sns_generate_rollout(EpsilonProvider& epsilon, const LevelEstimator& estimate,
                                          const torch::Tensor& x0_in, const RolloutConfig& cfg,
                                          const NoiseSchedule& sched) {
    cfg.validate(sched.S);
    if (epsilon.levels() != sched.S) throw ConfigurationError("sns_generate_rollout: denoiser S differs from schedule");
    const auto x0 = detail::as_batch(x0_in);
    RolloutResult r;
    r.config = cfg;
    r.config.strategy = "sns_generate";
    r.levels = LevelLog(sched.S);
    r.frames = detail::allocate_frames(x0, cfg.horizon);
    auto gen = make_generator(cfg.seed);
    auto prev = x0;
    for (int t = 1; t <= cfg.horizon; ++t) {
        auto cur = torch::randn(prev.sizes(), gen, prev.options());
        const int s2 = estimate(cur, prev).s2;
        sched.check_level(s2);
        r.levels.record({sched.S, s2}, cfg.record_levels);
        ++r.levels.refined;
        const auto cnd = forward_noise(prev, s2, sched, gen);
        for (int s = sched.S; s >= 1; --s) {
            cur = reverse_update(cur, epsilon.epsilon(cur, cnd, s, s2).first, s, sched, gen);
        }
        if (!nn::all_finite(cur)) {
            r.divergence_events.push_back({t, "non-finite generated frame", "aborted"});
            throw DivergenceError("sns generation diverged", t);
        }
        r.frames[t] = cur[0];
        prev = cur;
    }
    return r;
}

}  // namespace mnl::rollout
