#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnl/error.hpp"
#include "mnl/log.hpp"

namespace mnl {

/// Discrete variance-preserving schedule. Index 0 is the clean level:
/// alpha_bar[0] = 1, beta[0] = 0, alpha[0] = 1; levels 1..S carry the noise.
struct NoiseSchedule {
    int S = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    int steps() const noexcept { return S; }

    void check_level(int s, int lo = 0) const {
        if (s < lo || s > S) {
            throw ArgumentError("NoiseSchedule: level " + std::to_string(s) + " outside [" + std::to_string(lo) +
                                ", " + std::to_string(S) + "]");
        }
    }

    double signal(int s) const { return std::sqrt(alpha_bar[static_cast<std::size_t>(s)]); }
    double noise(int s) const { return std::sqrt(1.0 - alpha_bar[static_cast<std::size_t>(s)]); }
    /// Noise variance 1 − ᾱ_s of the forward kernel q(x^s | x^0).
    double noise_variance(int s) const { return 1.0 - alpha_bar[static_cast<std::size_t>(s)]; }

    bool operator==(const NoiseSchedule& o) const { return S == o.S && alpha_bar == o.alpha_bar; }
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

/// Cosine schedule: ᾱ(s) = f(s)/f(0), f(s) = cos²(((s/S + 0.008)/1.008)·π/2), β clipped at 0.999,
/// ᾱ recomputed as the running product of α = 1 − β.
inline NoiseSchedule cosine_schedule(int S) {
    if (S < 2) throw ArgumentError("cosine_schedule: S must be >= 2");
    auto f = [S](int s) {
        const double u = (static_cast<double>(s) / S + kCosineOffset) / (1.0 + kCosineOffset);
        const double c = std::cos(u * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule sched;
    sched.S = S;
    const auto n = static_cast<std::size_t>(S) + 1;
    sched.beta.assign(n, 0.0);
    sched.alpha.assign(n, 1.0);
    sched.alpha_bar.assign(n, 1.0);
    const double f0 = f(0);
    for (int s = 1; s <= S; ++s) {
        const auto k = static_cast<std::size_t>(s);
        const double raw = 1.0 - (f(s) / f0) / (f(s - 1) / f0);
        sched.beta[k] = std::min(raw, kMaxBeta);
        sched.alpha[k] = 1.0 - sched.beta[k];
        sched.alpha_bar[k] = sched.alpha_bar[k - 1] * sched.alpha[k];
    }
    return sched;
}

inline void to_json(nlohmann::json& j, const NoiseSchedule& s) { j = {{"type", "cosine"}, {"S", s.S}}; }

inline void from_json(const nlohmann::json& j, NoiseSchedule& s) {
    const auto type = j.value("type", std::string("cosine"));
    if (type != "cosine") throw ConfigurationError("schedule: unsupported type '" + type + "'");
    s = cosine_schedule(j.at("S").get<int>());
}

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* op) {
    if (a != b) throw ArgumentError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

/// √ᾱ_s·x0 + √(1−ᾱ_s)·noise.
inline std::vector<double> forward_sample(std::span<const double> x0, int s, const NoiseSchedule& sched,
                                          std::span<const double> noise) {
    sched.check_level(s);
    detail::require_same_size(x0.size(), noise.size(), "forward_sample");
    const double a = sched.signal(s), b = sched.noise(s);
    std::vector<double> out(x0.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * x0[k] + b * noise[k];
    return out;
}

/// −ε/√(1−ᾱ_s); undefined at s = 0.
inline std::vector<double> score_from_epsilon(std::span<const double> eps, int s, const NoiseSchedule& sched) {
    if (s == 0) throw ArgumentError("score_from_epsilon: score undefined at zero noise (division by zero)");
    sched.check_level(s, 1);
    const double b = sched.noise(s);
    std::vector<double> out(eps.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = -eps[k] / b;
    return out;
}

inline std::vector<double> epsilon_from_score(std::span<const double> score, int s, const NoiseSchedule& sched) {
    sched.check_level(s);
    const double b = sched.noise(s);
    std::vector<double> out(score.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = -score[k] * b;
    return out;
}

inline constexpr double kTweedieWarnAlphaBar = 1e-8;

/// Plug-in estimate of E[x | x^s]: (x_s − √(1−ᾱ_s)·ε̂)/√ᾱ_s.
inline std::vector<double> tweedie_denoise(std::span<const double> x_s, std::span<const double> eps_hat, int s,
                                           const NoiseSchedule& sched) {
    sched.check_level(s, 1);
    detail::require_same_size(x_s.size(), eps_hat.size(), "tweedie_denoise");
    if (sched.alpha_bar[static_cast<std::size_t>(s)] < kTweedieWarnAlphaBar) {
        mnl::warn("tweedie_denoise: alpha_bar(" + std::to_string(s) +
                  ") below 1e-8; the estimate amplifies noise by 1/sqrt(alpha_bar)");
    }
    const double a = sched.signal(s), b = sched.noise(s);
    std::vector<double> out(x_s.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = (x_s[k] - b * eps_hat[k]) / a;
    return out;
}

}  // namespace mnl
