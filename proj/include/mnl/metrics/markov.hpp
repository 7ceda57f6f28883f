#pragma once

#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mnl/error.hpp"

// Finite-state analogues of the conditional / out-of-distribution error decomposition.
// All logarithms are natural.

namespace mnl::metrics {

inline constexpr double kRowSumTolerance = 1e-12;

/// Row-stochastic transition matrix M(i, j) = P(X_t = j | X_{t-1} = i).
struct MarkovChain {
    Eigen::MatrixXd M;

    Eigen::Index states() const noexcept { return M.rows(); }

    /// Throws ArgumentError for non-square, negative or non-normalized rows.
    void validate_stochastic() const {
        if (M.rows() == 0 || M.rows() != M.cols()) throw ArgumentError("MarkovChain: matrix must be square");
        if ((M.array() < 0.0).any()) throw ArgumentError("MarkovChain: negative entry");
        for (Eigen::Index i = 0; i < M.rows(); ++i) {
            if (std::abs(M.row(i).sum() - 1.0) > kRowSumTolerance) {
                throw ArgumentError("MarkovChain: row " + std::to_string(i) + " does not sum to 1");
            }
        }
    }

    bool irreducible() const {
        const Eigen::Index n = states();
        auto reach_all = [&](bool transpose) {
            std::vector<bool> seen(static_cast<std::size_t>(n), false);
            std::queue<Eigen::Index> q;
            q.push(0);
            seen[0] = true;
            while (!q.empty()) {
                const auto i = q.front();
                q.pop();
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double p = transpose ? M(j, i) : M(i, j);
                    if (p > 0.0 && !seen[static_cast<std::size_t>(j)]) {
                        seen[static_cast<std::size_t>(j)] = true;
                        q.push(j);
                    }
                }
            }
            for (bool s : seen) {
                if (!s) return false;
            }
            return true;
        };
        return reach_all(false) && reach_all(true);
    }
};

/// Perron left eigenvector: μM = μ, Σμ = 1. Solved as the linear system (Mᵀ − I)μ = 0 with one
/// equation replaced by the normalization.
inline Eigen::VectorXd stationary_distribution(const MarkovChain& chain) {
    chain.validate_stochastic();
    if (!chain.irreducible()) throw StructuralError("stationary_distribution: chain is reducible");
    const Eigen::Index n = chain.states();
    Eigen::MatrixXd lhs = chain.M.transpose() - Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    lhs.row(n - 1).setOnes();
    rhs[n - 1] = 1.0;
    auto lu = lhs.fullPivLu();
    Eigen::VectorXd mu = lu.solve(rhs);
    mu += lu.solve(rhs - lhs * mu);
    mu = mu.cwiseMax(0.0);
    return mu / mu.sum();
}

namespace detail {

inline void check_distribution(const Eigen::VectorXd& p, const char* what) {
    if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9) {
        throw ArgumentError(std::string(what) + ": not a probability vector");
    }
}

}  // namespace detail

/// KL(p ‖ q) with 0·log 0 = 0 and +∞ when q vanishes where p does not.
inline double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    if (p.size() != q.size()) throw ArgumentError("kl_divergence: size mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
        acc += p[i] * std::log(p[i] / q[i]);
    }
    return acc;
}

inline double total_variation(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    if (p.size() != q.size()) throw ArgumentError("total_variation: size mismatch");
    return 0.5 * (p - q).cwiseAbs().sum();
}

/// Σ_i μ_i KL(M_i ‖ M̂_i).
inline double conditional_error(const MarkovChain& truth, const MarkovChain& model, const Eigen::VectorXd& mu) {
    truth.validate_stochastic();
    model.validate_stochastic();
    if (truth.states() != model.states() || mu.size() != truth.states()) {
        throw ArgumentError("conditional_error: shape mismatch");
    }
    detail::check_distribution(mu, "conditional_error");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        if (mu[i] == 0.0) continue;
        acc += mu[i] * kl_divergence(truth.M.row(i).transpose(), model.M.row(i).transpose());
    }
    return acc;
}

enum class Divergence { kl, tv };

inline double ood_error(const Eigen::VectorXd& mu, const Eigen::VectorXd& mu_hat, Divergence div) {
    if (mu.size() != mu_hat.size()) throw ArgumentError("ood_error: size mismatch");
    detail::check_distribution(mu, "ood_error");
    detail::check_distribution(mu_hat, "ood_error");
    return div == Divergence::kl ? kl_divergence(mu, mu_hat) : total_variation(mu, mu_hat);
}

/// I(X_t; X_{t-1}) under μ(x) M(x, ·).
inline double mutual_information(const MarkovChain& chain, const Eigen::VectorXd& mu) {
    const Eigen::VectorXd next = chain.M.transpose() * mu;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        for (Eigen::Index j = 0; j < mu.size(); ++j) {
            const double p = mu[i] * chain.M(i, j);
            if (p > 0.0) acc += p * std::log(chain.M(i, j) / next[j]);
        }
    }
    return acc;
}

struct ConditioningGap {
    double gap = 0.0;  // E[KL(p(·|x) ‖ p(·|x̃))]
    double cmi = 0.0;  // I(X_t; X_{t-1} | X̃_{t-1})
};

/// Joint law μ(x) M(x, x_t) r(x, x̃). `gap` uses the posterior predictive
/// p(x_t | x̃) = Σ_x M(x, x_t) p(x | x̃); `cmi` is computed from entropies of the joint table.
inline ConditioningGap conditioning_gap(const MarkovChain& chain, const Eigen::VectorXd& mu,
                                        const MarkovChain& corruption) {
    chain.validate_stochastic();
    corruption.validate_stochastic();
    const Eigen::Index n = chain.states();
    if (mu.size() != n || corruption.states() != n) throw ArgumentError("conditioning_gap: dimension mismatch");
    detail::check_distribution(mu, "conditioning_gap");
    const auto& M = chain.M;
    const auto& r = corruption.M;

    // Posterior p(x | x̃) and predictive p(x_t | x̃).
    const Eigen::VectorXd p_tilde = r.transpose() * mu;
    Eigen::MatrixXd predictive = Eigen::MatrixXd::Zero(n, n);  // (x̃, x_t)
    for (Eigen::Index xt = 0; xt < n; ++xt) {
        if (p_tilde[xt] == 0.0) continue;
        for (Eigen::Index x = 0; x < n; ++x) predictive.row(xt) += mu[x] * r(x, xt) / p_tilde[xt] * M.row(x);
    }
    ConditioningGap out;
    for (Eigen::Index x = 0; x < n; ++x) {
        for (Eigen::Index xt = 0; xt < n; ++xt) {
            const double w = mu[x] * r(x, xt);
            if (w == 0.0) continue;
            out.gap += w * kl_divergence(M.row(x).transpose(), predictive.row(xt).transpose());
        }
    }

    // I(X_t; X | X̃) = H(X_t, X̃) + H(X, X̃) − H(X̃) − H(X_t, X, X̃).
    auto h = [](double p) { return p > 0.0 ? -p * std::log(p) : 0.0; };
    double h_joint = 0.0, h_txt = 0.0, h_xxt = 0.0, h_xt = 0.0;
    Eigen::MatrixXd p_t_tilde = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
        for (Eigen::Index xn = 0; xn < n; ++xn) {
            for (Eigen::Index xt = 0; xt < n; ++xt) {
                const double p = mu[x] * M(x, xn) * r(x, xt);
                h_joint += h(p);
                p_t_tilde(xn, xt) += p;
            }
        }
        for (Eigen::Index xt = 0; xt < n; ++xt) h_xxt += h(mu[x] * r(x, xt));
    }
    for (Eigen::Index xt = 0; xt < n; ++xt) {
        h_xt += h(p_tilde[xt]);
        for (Eigen::Index xn = 0; xn < n; ++xn) h_txt += h(p_t_tilde(xn, xt));
    }
    out.cmi = h_txt + h_xxt - h_xt - h_joint;
    return out;
}

}  // namespace mnl::metrics
