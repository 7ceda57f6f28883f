#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mnl/dynamics/linear_gaussian.hpp"
#include "mnl/error.hpp"
#include "mnl/log.hpp"
#include "mnl/schedule.hpp"

// Closed-form multi-noise-level quantities for a stationary linear-Gaussian chain.
// A pair is ordered (x_t, x_{t-1}); slot 1 is the current frame at level s1,
// slot 2 the conditioning frame at level s2. Noise variance of slot i is 1 − ᾱ_{s_i}.

namespace mnl::oracle {

using dynamics::LinearGaussianSystem;

/// Two d-vectors, one per slot of the pair.
struct SlotPair {
    Eigen::VectorXd current;
    Eigen::VectorXd previous;

    Eigen::VectorXd stacked() const {
        Eigen::VectorXd y(current.size() + previous.size());
        y << current, previous;
        return y;
    }

    static SlotPair split(const Eigen::VectorXd& y) {
        const Eigen::Index d = y.size() / 2;
        return {y.head(d), y.tail(d)};
    }
};

/// Law of y^s = (x_t^{s1}, x_{t-1}^{s2}): zero mean, covariance `cov`.
/// `clean_cov` is the clean joint [[Σ, AΣ], [ΣAᵀ, Σ]].
struct JointNoisyGaussian {
    Eigen::MatrixXd cov;
    Eigen::MatrixXd clean_cov;
    Eigen::VectorXd signal;        // length 2d: √ᾱ_{s1} (first d), √ᾱ_{s2} (last d)
    Eigen::VectorXd noise_var;     // length 2d: 1 − ᾱ
    int s1 = 0;
    int s2 = 0;

    Eigen::Index dim() const noexcept { return cov.rows() / 2; }
    Eigen::VectorXd mean() const { return Eigen::VectorXd::Zero(cov.rows()); }
};

/// [[Σ, AΣ], [ΣAᵀ, Σ]] for (x_t, x_{t-1}) under the stationary law.
inline Eigen::MatrixXd clean_joint_covariance(const LinearGaussianSystem& sys,
                                              const std::optional<Eigen::MatrixXd>& cross_override = std::nullopt) {
    const Eigen::MatrixXd sigma = dynamics::stationary_covariance(sys);
    const Eigen::MatrixXd cross = cross_override ? *cross_override : Eigen::MatrixXd(sys.A * sigma);
    const Eigen::Index d = sys.dim();
    Eigen::MatrixXd c(2 * d, 2 * d);
    c.topLeftCorner(d, d) = sigma;
    c.topRightCorner(d, d) = cross;
    c.bottomLeftCorner(d, d) = cross.transpose();
    c.bottomRightCorner(d, d) = sigma;
    return c;
}

inline JointNoisyGaussian joint_from_clean(const Eigen::MatrixXd& clean, int s1, int s2,
                                           const NoiseSchedule& sched) {
    sched.check_level(s1);
    sched.check_level(s2);
    const Eigen::Index d = clean.rows() / 2;
    JointNoisyGaussian j;
    j.s1 = s1;
    j.s2 = s2;
    j.clean_cov = clean;
    j.signal.resize(2 * d);
    j.noise_var.resize(2 * d);
    j.signal.head(d).setConstant(sched.signal(s1));
    j.signal.tail(d).setConstant(sched.signal(s2));
    j.noise_var.head(d).setConstant(sched.noise_variance(s1));
    j.noise_var.tail(d).setConstant(sched.noise_variance(s2));
    j.cov = j.signal.asDiagonal() * clean * j.signal.asDiagonal();
    j.cov.diagonal() += j.noise_var;
    return j;
}

inline JointNoisyGaussian joint_noisy_covariance(const LinearGaussianSystem& sys, int s1, int s2,
                                                 const NoiseSchedule& sched) {
    return joint_from_clean(clean_joint_covariance(sys), s1, s2, sched);
}

namespace detail {

/// Solves cov·u = rhs; regularizes with 1e-10·I (and warns) when the Cholesky factorization fails.
inline Eigen::MatrixXd spd_solve(const Eigen::MatrixXd& cov, const Eigen::MatrixXd& rhs) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
    mnl::warn("oracle: singular covariance, regularizing with 1e-10*I");
    Eigen::MatrixXd reg = cov;
    reg.diagonal().array() += 1e-10;
    llt.compute(reg);
    if (llt.info() != Eigen::Success) throw NumericalError("oracle: covariance not positive definite");
    return llt.solve(rhs);
}

inline void check_pair(const Eigen::VectorXd& y, Eigen::Index d) {
    if (y.size() != 2 * d) throw ArgumentError("oracle: pair must have length 2d");
}

}  // namespace detail

/// Gradient of log p^s(y) for the zero-mean Gaussian: −cov⁻¹y.
inline SlotPair analytic_multi_level_score(const JointNoisyGaussian& joint, const Eigen::VectorXd& y) {
    detail::check_pair(y, joint.dim());
    return SlotPair::split(-detail::spd_solve(joint.cov, y));
}

inline SlotPair analytic_multi_level_score(const LinearGaussianSystem& sys, const Eigen::VectorXd& y, int s1,
                                           int s2, const NoiseSchedule& sched) {
    return analytic_multi_level_score(joint_noisy_covariance(sys, s1, s2, sched), y);
}

/// E[(x_t, x_{t-1}) | y^s] = C₀·diag(√ᾱ)·cov⁻¹·y.
inline SlotPair analytic_denoising_oracle(const JointNoisyGaussian& joint, const Eigen::VectorXd& y) {
    detail::check_pair(y, joint.dim());
    const Eigen::VectorXd u = detail::spd_solve(joint.cov, y);
    return SlotPair::split(joint.clean_cov * (joint.signal.asDiagonal() * u));
}

inline SlotPair analytic_denoising_oracle(const LinearGaussianSystem& sys, const Eigen::VectorXd& y, int s1,
                                          int s2, const NoiseSchedule& sched) {
    return analytic_denoising_oracle(joint_noisy_covariance(sys, s1, s2, sched), y);
}

/// Score rebuilt from the oracle: −diag(1−ᾱ)⁻¹ (y − diag(√ᾱ)·D(y)). Requires s1, s2 >= 1.
inline SlotPair score_from_oracle(const JointNoisyGaussian& joint, const Eigen::VectorXd& y) {
    if (joint.s1 == 0 || joint.s2 == 0) throw ArgumentError("score_from_oracle: both levels must be >= 1");
    const Eigen::VectorXd d = analytic_denoising_oracle(joint, y).stacked();
    const Eigen::VectorXd r = y - joint.signal.cwiseProduct(d);
    return SlotPair::split(-r.cwiseQuotient(joint.noise_var));
}

/// ε-pair implied by the score: ε_i = −√(1−ᾱ_{s_i})·score_i (zero in a slot at level 0).
inline SlotPair analytic_epsilon(const JointNoisyGaussian& joint, const Eigen::VectorXd& y) {
    const Eigen::VectorXd score = analytic_multi_level_score(joint, y).stacked();
    return SlotPair::split(-joint.noise_var.cwiseSqrt().cwiseProduct(score));
}

/// Monte-Carlo estimate of a pair-valued posterior expectation with per-component standard errors.
struct McPairEstimate {
    SlotPair value;
    SlotPair standard_error;
    double effective_sample_size = 0.0;
    bool reliable = true;
};

using McScoreEstimate = McPairEstimate;

inline constexpr double kMinEffectiveSampleSize = 50.0;

namespace detail {

/// Self-normalized importance average of statistic(y⁰, y) over clean pairs y⁰ drawn from the
/// stationary chain, weighted by the forward kernel q(y | y⁰). Levels must be >= 1.
template <class Statistic>
McPairEstimate importance_average(const LinearGaussianSystem& sys, const Eigen::VectorXd& y, int s1, int s2,
                                  const NoiseSchedule& sched, std::int64_t n, std::uint64_t seed,
                                  const char* name, Statistic&& statistic) {
    if (n < 1000) throw ArgumentError(std::string(name) + ": n must be >= 1000");
    if (s1 < 1 || s2 < 1) throw ArgumentError(std::string(name) + ": levels must be >= 1");
    sched.check_level(s1, 1);
    sched.check_level(s2, 1);
    const Eigen::Index d = sys.dim();
    check_pair(y, d);

    const Eigen::MatrixXd sigma = dynamics::stationary_covariance(sys);
    const Eigen::MatrixXd root_sigma = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
    const Eigen::MatrixXd root_q = sys.noise_factor();

    Eigen::VectorXd signal(2 * d), var(2 * d);
    signal.head(d).setConstant(sched.signal(s1));
    signal.tail(d).setConstant(sched.signal(s2));
    var.head(d).setConstant(sched.noise_variance(s1));
    var.tail(d).setConstant(sched.noise_variance(s2));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> logw(static_cast<std::size_t>(n));
    Eigen::MatrixXd stats(2 * d, n);
    Eigen::VectorXd z(d), y0(2 * d);
    for (std::int64_t i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) z[k] = normal(rng);
        const Eigen::VectorXd prev = root_sigma * z;
        for (Eigen::Index k = 0; k < d; ++k) z[k] = normal(rng);
        const Eigen::VectorXd cur = sys.A * prev + root_q * z;
        y0 << cur, prev;
        const Eigen::VectorXd r = y - signal.cwiseProduct(y0);
        logw[static_cast<std::size_t>(i)] = -0.5 * r.cwiseProduct(r).cwiseQuotient(var).sum();
        stats.col(i) = statistic(y0, r, var);
    }
    const double lmax = *std::max_element(logw.begin(), logw.end());
    Eigen::VectorXd w(n);
    for (std::int64_t i = 0; i < n; ++i) w[i] = std::exp(logw[static_cast<std::size_t>(i)] - lmax);
    const double sw = w.sum();
    const Eigen::VectorXd est = stats * w / sw;
    Eigen::VectorXd var_est = Eigen::VectorXd::Zero(2 * d);
    for (std::int64_t i = 0; i < n; ++i) {
        const Eigen::VectorXd dev = stats.col(i) - est;
        var_est += w[i] * w[i] * dev.cwiseProduct(dev);
    }
    McPairEstimate out;
    out.value = SlotPair::split(est);
    out.standard_error = SlotPair::split((var_est / (sw * sw)).cwiseSqrt());
    out.effective_sample_size = sw * sw / w.squaredNorm();
    if (out.effective_sample_size < kMinEffectiveSampleSize) {
        out.reliable = false;
        mnl::warn(std::string(name) + ": effective sample size " + std::to_string(out.effective_sample_size) +
                  " below 50; estimate unreliable");
    }
    return out;
}

}  // namespace detail

/// Brute-force E[∇ log p^s(y | y⁰) | y], which by the tower property equals the multi-noise-level score.
inline McScoreEstimate mc_multi_level_score(const LinearGaussianSystem& sys, const Eigen::VectorXd& y, int s1,
                                            int s2, const NoiseSchedule& sched, std::int64_t n,
                                            std::uint64_t seed) {
    return detail::importance_average(
        sys, y, s1, s2, sched, n, seed, "mc_multi_level_score",
        [](const Eigen::VectorXd&, const Eigen::VectorXd& r, const Eigen::VectorXd& var) -> Eigen::VectorXd {
            return -r.cwiseQuotient(var);
        });
}

/// Brute-force E[y⁰ | y], the multi-noise-level denoising oracle.
inline McPairEstimate mc_denoising_oracle(const LinearGaussianSystem& sys, const Eigen::VectorXd& y, int s1,
                                          int s2, const NoiseSchedule& sched, std::int64_t n, std::uint64_t seed) {
    return detail::importance_average(
        sys, y, s1, s2, sched, n, seed, "mc_denoising_oracle",
        [](const Eigen::VectorXd& y0, const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd {
            return y0;
        });
}

/// Score of slot a conditioned on slot b from the blocks of a zero-mean Gaussian:
/// −K⁻¹(x_a − C_ab C_bb⁻¹ x_b), K = C_aa − C_ab C_bb⁻¹ C_ba.
inline Eigen::VectorXd conditional_gaussian_score(const Eigen::MatrixXd& c_aa, const Eigen::MatrixXd& c_ab,
                                                  const Eigen::MatrixXd& c_bb, const Eigen::VectorXd& x_a,
                                                  const Eigen::VectorXd& x_b) {
    const Eigen::MatrixXd gain = detail::spd_solve(c_bb, c_ab.transpose()).transpose();
    const Eigen::MatrixXd k = c_aa - gain * c_ab.transpose();
    return -detail::spd_solve(k, x_a - gain * x_b);
}

/// Gaussian law of x_t given the noised condition x_{t-1}^{s2}.
struct ConditionalGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline ConditionalGaussian analytic_transition(const LinearGaussianSystem& sys, const Eigen::VectorXd& condition,
                                               int s2, const NoiseSchedule& sched) {
    const auto joint = joint_noisy_covariance(sys, 0, s2, sched);
    const Eigen::Index d = sys.dim();
    const Eigen::MatrixXd c12 = joint.cov.topRightCorner(d, d);
    const Eigen::MatrixXd c22 = joint.cov.bottomRightCorner(d, d);
    const Eigen::MatrixXd gain = detail::spd_solve(c22, c12.transpose()).transpose();
    return {gain * condition, joint.cov.topLeftCorner(d, d) - gain * c12.transpose()};
}

struct FactorizationResidual {
    double current = 0.0;   // max |joint score_t − ∇ log p(x_t^{s1} | x_{t-1}^{s2})|
    double previous = 0.0;  // max |joint score_{t-1} − ∇ log p(x_{t-1}^{s2} | x_t^{s1})|
    double max() const noexcept { return std::max(current, previous); }
};

/// Compares the joint-score components with the two conditional scores, each computed
/// in closed form from its own covariance blocks. `conditional_cross_override` replaces
/// Cov(x_t, x_{t-1}) in the conditional route only (fault injection).
inline FactorizationResidual conditional_score_factorization_check(
    const LinearGaussianSystem& sys, const Eigen::VectorXd& y, int s1, int s2, const NoiseSchedule& sched,
    const std::optional<Eigen::MatrixXd>& conditional_cross_override = std::nullopt) {
    const Eigen::Index d = sys.dim();
    detail::check_pair(y, d);
    const auto joint = joint_noisy_covariance(sys, s1, s2, sched);
    const SlotPair score = analytic_multi_level_score(joint, y);

    const auto cond_joint = joint_from_clean(clean_joint_covariance(sys, conditional_cross_override), s1, s2, sched);
    const Eigen::MatrixXd c11 = cond_joint.cov.topLeftCorner(d, d);
    const Eigen::MatrixXd c12 = cond_joint.cov.topRightCorner(d, d);
    const Eigen::MatrixXd c22 = cond_joint.cov.bottomRightCorner(d, d);
    const Eigen::VectorXd x1 = y.head(d), x2 = y.tail(d);

    FactorizationResidual r;
    r.current = (score.current - conditional_gaussian_score(c11, c12, c22, x1, x2)).cwiseAbs().maxCoeff();
    r.previous =
        (score.previous - conditional_gaussian_score(c22, c12.transpose(), c11, x2, x1)).cwiseAbs().maxCoeff();
    return r;
}

/// Draws n pairs y ~ p^s (rows of the returned n × 2d matrix) by forward-noising stationary clean pairs.
inline Eigen::MatrixXd sample_noisy_pairs(const LinearGaussianSystem& sys, int s1, int s2,
                                          const NoiseSchedule& sched, std::int64_t n, std::uint64_t seed,
                                          Eigen::MatrixXd* clean_out = nullptr) {
    const Eigen::Index d = sys.dim();
    const Eigen::MatrixXd sigma = dynamics::stationary_covariance(sys);
    const Eigen::MatrixXd root_sigma = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
    const Eigen::MatrixXd root_q = sys.noise_factor();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd out(n, 2 * d);
    if (clean_out) clean_out->resize(n, 2 * d);
    Eigen::VectorXd z(d);
    const double a1 = sched.signal(s1), b1 = sched.noise(s1), a2 = sched.signal(s2), b2 = sched.noise(s2);
    for (std::int64_t i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) z[k] = normal(rng);
        const Eigen::VectorXd prev = root_sigma * z;
        for (Eigen::Index k = 0; k < d; ++k) z[k] = normal(rng);
        const Eigen::VectorXd cur = sys.A * prev + root_q * z;
        if (clean_out) {
            clean_out->row(i).head(d) = cur.transpose();
            clean_out->row(i).tail(d) = prev.transpose();
        }
        for (Eigen::Index k = 0; k < d; ++k) out(i, k) = a1 * cur[k] + b1 * normal(rng);
        for (Eigen::Index k = 0; k < d; ++k) out(i, d + k) = a2 * prev[k] + b2 * normal(rng);
    }
    return out;
}

}  // namespace mnl::oracle
