#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnl/dynamics/linear_gaussian.hpp"
#include "mnl/log.hpp"
#include "mnl/oracle.hpp"
#include "mnl/schedule.hpp"

// Property suite over the linear-Gaussian oracles: Monte-Carlo agreement of the multi-noise-level
// score, conditional-score factorization, and score/oracle consistency. Produces a JSON report.

namespace mnl::oracle {

struct SuiteOptions {
    int S = 100;
    std::int64_t mc_samples = 100000;
    std::uint64_t seed = 0;
    double se_multiple = 3.0;
    double factorization_tolerance = 1e-8;
    double consistency_tolerance = 1e-9;  // relative
    std::vector<double> mc_level_fractions = {0.2, 0.35, 0.5, 0.65, 0.8};
    int factorization_grid = 10;
    bool inject_fault = false;  // halves Cov(x_t, x_{t-1}) on the conditional route of the factorization check
};

inline dynamics::LinearGaussianSystem two_dimensional_test_system() {
    dynamics::LinearGaussianSystem sys;
    sys.A = Eigen::Matrix2d{{0.8, 0.1}, {-0.2, 0.7}};
    sys.Q = Eigen::Matrix2d{{0.3, 0.05}, {0.05, 0.2}};
    return sys;
}

/// Largest number of |z| > se_multiple exceedances among m independent comparisons that is still
/// consistent with the Gaussian tail rate (mean + 3 binomial standard deviations, at least 1).
inline int allowed_exceedances(int m, double se_multiple) {
    const double p = std::erfc(se_multiple / std::sqrt(2.0));
    return std::max(1, static_cast<int>(std::ceil(p * m + 3.0 * std::sqrt(p * (1.0 - p) * m))));
}

namespace detail {

inline std::vector<int> grid_levels(const std::vector<double>& fractions, int S) {
    std::vector<int> out;
    for (double f : fractions) out.push_back(std::clamp(static_cast<int>(std::lround(f * S)), 1, S));
    return out;
}

inline nlohmann::json mc_check(const std::string& name, const LinearGaussianSystem& sys, const NoiseSchedule& sched,
                               const SuiteOptions& opt) {
    const auto levels = grid_levels(opt.mc_level_fractions, sched.S);
    nlohmann::json points = nlohmann::json::array();
    int comparisons = 0, exceed = 0;
    double worst = 0.0;
    std::uint64_t k = 0;
    bool reliable = true;
    for (int s1 : levels) {
        for (int s2 : levels) {
            // y is a typical draw from p^{s1,s2}, so importance weights stay well spread
            const Eigen::VectorXd y = sample_noisy_pairs(sys, s1, s2, sched, 1, opt.seed + 7919 * (k + 1)).row(0);
            const auto joint = joint_noisy_covariance(sys, s1, s2, sched);
            const Eigen::VectorXd exact = analytic_multi_level_score(joint, y).stacked();
            McScoreEstimate mc;
            {
                ScopedWarningSink quiet([](const std::string&) {});
                mc = mc_multi_level_score(sys, y, s1, s2, sched, opt.mc_samples, opt.seed + 104729 * (k + 1));
            }
            reliable = reliable && mc.reliable;
            const Eigen::VectorXd est = mc.value.stacked(), se = mc.standard_error.stacked();
            double zmax = 0.0;
            for (Eigen::Index i = 0; i < est.size(); ++i) {
                const double z = std::abs(est[i] - exact[i]) / se[i];
                zmax = std::max(zmax, z);
                ++comparisons;
                if (!(z <= opt.se_multiple)) ++exceed;
            }
            worst = std::max(worst, zmax);
            points.push_back({{"s1", s1}, {"s2", s2}, {"max_z", zmax}, {"ess", mc.effective_sample_size}});
            ++k;
        }
    }
    const int allowed = allowed_exceedances(comparisons, opt.se_multiple);
    const bool pass = reliable && exceed <= allowed && worst <= opt.se_multiple + 1.0;
    return {{"name", "mc_score_agreement"},
            {"system", name},
            {"samples", opt.mc_samples},
            {"comparisons", comparisons},
            {"exceedances", exceed},
            {"allowed_exceedances", allowed},
            {"max_z", worst},
            {"all_reliable", reliable},
            {"points", points},
            {"pass", pass}};
}

inline nlohmann::json factorization_check(const std::string& name, const LinearGaussianSystem& sys,
                                          const NoiseSchedule& sched, const SuiteOptions& opt) {
    std::optional<Eigen::MatrixXd> fault;
    if (opt.inject_fault) fault = Eigen::MatrixXd(0.5 * sys.A * dynamics::stationary_covariance(sys));
    std::mt19937_64 rng(opt.seed + 31);
    std::normal_distribution<double> normal;
    const int g = opt.factorization_grid;
    double worst = 0.0;
    for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
            const int s1 = static_cast<int>(std::lround(static_cast<double>(i) * sched.S / (g - 1)));
            const int s2 = static_cast<int>(std::lround(static_cast<double>(j) * sched.S / (g - 1)));
            Eigen::VectorXd y(2 * sys.dim());
            for (Eigen::Index k = 0; k < y.size(); ++k) y[k] = normal(rng);
            worst = std::max(worst, conditional_score_factorization_check(sys, y, s1, s2, sched, fault).max());
        }
    }
    return {{"name", "conditional_score_factorization"},
            {"system", name},
            {"grid", g},
            {"max_residual", worst},
            {"tolerance", opt.factorization_tolerance},
            {"fault_injected", opt.inject_fault},
            {"pass", worst < opt.factorization_tolerance}};
}

inline nlohmann::json consistency_check(const std::string& name, const LinearGaussianSystem& sys,
                                        const NoiseSchedule& sched, const SuiteOptions& opt) {
    std::mt19937_64 rng(opt.seed + 57);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    const auto levels = grid_levels({0.02, 0.2, 0.4, 0.6, 0.8, 1.0}, sched.S);
    for (int s1 : levels) {
        for (int s2 : levels) {
            const auto joint = joint_noisy_covariance(sys, s1, s2, sched);
            Eigen::VectorXd y(2 * sys.dim());
            for (Eigen::Index k = 0; k < y.size(); ++k) y[k] = normal(rng);
            const Eigen::VectorXd a = analytic_multi_level_score(joint, y).stacked();
            const Eigen::VectorXd b = score_from_oracle(joint, y).stacked();
            worst = std::max(worst, (a - b).cwiseAbs().maxCoeff() / std::max(1.0, a.cwiseAbs().maxCoeff()));
        }
    }
    return {{"name", "score_oracle_consistency"},
            {"system", name},
            {"max_relative_residual", worst},
            {"tolerance", opt.consistency_tolerance},
            {"pass", worst < opt.consistency_tolerance}};
}

}  // namespace detail

/// Runs every check on the given scalar system and the fixed two-dimensional test system.
inline nlohmann::json run_suite(const LinearGaussianSystem& scalar, const SuiteOptions& opt = {}) {
    const auto sched = cosine_schedule(opt.S);
    const std::vector<std::pair<std::string, LinearGaussianSystem>> systems = {
        {"configured", scalar}, {"two_dimensional", two_dimensional_test_system()}};
    nlohmann::json checks = nlohmann::json::array();
    bool pass = true;
    for (const auto& [name, sys] : systems) {
        sys.validate();
        for (auto check : {detail::mc_check(name, sys, sched, opt), detail::factorization_check(name, sys, sched, opt),
                           detail::consistency_check(name, sys, sched, opt)}) {
            pass = pass && check["pass"].get<bool>();
            checks.push_back(std::move(check));
        }
    }
    return {{"suite", "oracle-check"},
            {"version", 1},
            {"S", opt.S},
            {"seed", opt.seed},
            {"se_multiple", opt.se_multiple},
            {"checks", checks},
            {"pass", pass}};
}

}  // namespace mnl::oracle
