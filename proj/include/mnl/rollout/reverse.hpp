#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <utility>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "mnl/dynamics/linear_gaussian.hpp"
#include "mnl/error.hpp"
#include "mnl/nn/denoiser.hpp"
#include "mnl/nn/tensor.hpp"
#include "mnl/oracle.hpp"
#include "mnl/rollout/path.hpp"
#include "mnl/schedule.hpp"

namespace mnl::rollout {

/// Coefficients of the ancestral step x^{s-1} = c_x·(x^s − c_eps·ε̂) + σ·z.
struct ReverseCoefficients {
    double inv_sqrt_alpha;
    double eps_scale;  // (1 − α_s)/√(1 − ᾱ_s)
    double sigma;      // √β_s, zero at s = 1
};

inline ReverseCoefficients reverse_coefficients(int s, const NoiseSchedule& sched) {
    sched.check_level(s, 1);
    const auto k = static_cast<std::size_t>(s);
    return {1.0 / std::sqrt(sched.alpha[k]), (1.0 - sched.alpha[k]) / std::sqrt(1.0 - sched.alpha_bar[k]),
            s == 1 ? 0.0 : std::sqrt(sched.beta[k])};
}

/// Scalar form with explicit α_s, ᾱ_s (β_s = 1 − α_s).
inline double reverse_update(double x, double eps_hat, double alpha, double alpha_bar, double z, bool last = false) {
    const double mean = (x - (1.0 - alpha) / std::sqrt(1.0 - alpha_bar) * eps_hat) / std::sqrt(alpha);
    return last ? mean : mean + std::sqrt(1.0 - alpha) * z;
}

inline torch::Tensor reverse_update(const torch::Tensor& x, const torch::Tensor& eps_hat, int s,
                                    const NoiseSchedule& sched, const torch::Tensor& noise) {
    const auto c = reverse_coefficients(s, sched);
    auto out = (x - c.eps_scale * eps_hat) * c.inv_sqrt_alpha;
    if (c.sigma > 0.0) out = out + c.sigma * noise;
    return out;
}

/// Draws z from `gen` only when it is used (s > 1).
inline torch::Tensor reverse_update(const torch::Tensor& x, const torch::Tensor& eps_hat, int s,
                                    const NoiseSchedule& sched, at::Generator& gen) {
    if (s == 1) return reverse_update(x, eps_hat, s, sched, torch::Tensor());
    return reverse_update(x, eps_hat, s, sched, torch::randn(x.sizes(), gen, x.options()));
}

/// x^s = √ᾱ_s·x + √(1 − ᾱ_s)·z with fresh z; level 0 returns x unchanged.
inline torch::Tensor forward_noise(const torch::Tensor& x, int s, const NoiseSchedule& sched, at::Generator& gen) {
    sched.check_level(s);
    if (s == 0) return x;
    return sched.signal(s) * x + sched.noise(s) * torch::randn(x.sizes(), gen, x.options());
}

/// Source of the ε-pair (ε̂ for the current slot, ε̂ for the condition slot) of the joint noisy state.
class EpsilonProvider {
public:
    virtual ~EpsilonProvider() = default;
    virtual std::pair<torch::Tensor, torch::Tensor> epsilon(const torch::Tensor& current, const torch::Tensor& cond,
                                                            int s1, int s2) = 0;
    virtual int levels() const = 0;
};

/// Exact ε for the linear-Gaussian system: ε = diag(√(1 − ᾱ))·cov⁻¹·y, one cached matrix per (s1, s2).
/// States are [B, d, 1, 1] (or any [B, ...] with d entries per sample).
class AnalyticEpsilon : public EpsilonProvider {
public:
    AnalyticEpsilon(dynamics::LinearGaussianSystem sys, NoiseSchedule sched)
        : sys_(std::move(sys)), sched_(std::move(sched)), clean_(oracle::clean_joint_covariance(sys_)) {}

    std::pair<torch::Tensor, torch::Tensor> epsilon(const torch::Tensor& current, const torch::Tensor& cond, int s1,
                                                    int s2) override {
        const auto d = sys_.dim();
        const auto B = current.size(0);
        if (current.numel() != B * d || cond.numel() != B * d) {
            throw ArgumentError("AnalyticEpsilon: state dimension differs from the system");
        }
        const auto y = torch::cat({current.reshape({B, d}), cond.reshape({B, d})}, 1).to(torch::kFloat64);
        const auto eps = torch::matmul(y, map(s1, s2).t());
        return {eps.narrow(1, 0, d).reshape(current.sizes()).to(current.dtype()),
                eps.narrow(1, d, d).reshape(cond.sizes()).to(cond.dtype())};
    }

    int levels() const override { return sched_.S; }

private:
    const torch::Tensor& map(int s1, int s2) {
        const auto key = std::make_pair(s1, s2);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const auto joint = oracle::joint_from_clean(clean_, s1, s2, sched_);
        const auto n = joint.cov.rows();
        const Eigen::MatrixXd m = joint.noise_var.cwiseSqrt().asDiagonal() *
                                  oracle::detail::spd_solve(joint.cov, Eigen::MatrixXd::Identity(n, n));
        auto t = torch::empty({n, n}, torch::kFloat64);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) t[i][j] = m(i, j);
        return cache_.emplace(key, t).first->second;
    }

    dynamics::LinearGaussianSystem sys_;
    NoiseSchedule sched_;
    Eigen::MatrixXd clean_;
    std::map<std::pair<int, int>, torch::Tensor> cache_;
};

/// ε-pair from a trained denoiser. Level-conditioned networks receive max(s, 1),
/// since training never presents level 0.
class NetworkEpsilon : public EpsilonProvider {
public:
    explicit NetworkEpsilon(nn::Denoiser model) : model_(std::move(model)) { model_->eval(); }

    std::pair<torch::Tensor, torch::Tensor> epsilon(const torch::Tensor& current, const torch::Tensor& cond, int s1,
                                                    int s2) override {
        torch::NoGradGuard guard;
        const auto y = nn::stack_pair(current.to(torch::kFloat32), cond.to(torch::kFloat32));
        nn::DenoiserOutput out;
        if (model_->level_conditioned()) {
            const auto lv = torch::tensor({std::max(s1, 1), std::max(s2, 1)}, torch::kInt64)
                                .reshape({1, 2})
                                .expand({current.size(0), 2})
                                .contiguous();
            out = model_->forward(y, lv);
        } else {
            out = model_->forward(y);
        }
        return {out.eps_current.to(current.dtype()), out.eps_cond.to(cond.dtype())};
    }

    int levels() const override { return model_->levels(); }
    nn::DenoiserBase& model() { return *model_; }

private:
    nn::Denoiser model_;
};

/// Runs the coupled reverse process along `path`, starting from a state noised at path.front().
/// At every step the slot(s) whose level decrements receive one ancestral update, using the ε-pair
/// evaluated on the current joint state. Returns (current, condition) at (0, 0); for marginal paths
/// the condition is returned unchanged.
inline std::pair<torch::Tensor, torch::Tensor> traverse(EpsilonProvider& provider, const torch::Tensor& current,
                                                        const torch::Tensor& cond, const TraversalPath& path,
                                                        const NoiseSchedule& sched, at::Generator& gen) {
    path.validate();
    if (provider.levels() != sched.S) throw ConfigurationError("traverse: provider S differs from the schedule");
    if (path.front().s1 > sched.S || path.front().s2 > sched.S) throw ArgumentError("traverse: path exceeds S");
    auto cur = current;
    auto cnd = cond;
    torch::Tensor blind;
    if (path.marginal) blind = torch::randn(cond.sizes(), gen, cond.options());
    for (std::size_t k = 1; k < path.size(); ++k) {
        const auto a = path.points[k - 1], b = path.points[k];
        const auto [e1, e2] =
            path.marginal ? provider.epsilon(cur, blind, a.s1, sched.S) : provider.epsilon(cur, cnd, a.s1, a.s2);
        if (b.s1 < a.s1) cur = reverse_update(cur, e1, a.s1, sched, gen);
        if (b.s2 < a.s2) cnd = reverse_update(cnd, e2, a.s2, sched, gen);
        if (!nn::all_finite(cur) || !nn::all_finite(cnd)) {
            throw DivergenceError("traverse: non-finite state on the path", static_cast<std::int64_t>(k));
        }
    }
    return {cur, cnd};
}

inline at::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

}  // namespace mnl::rollout
