#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mnl/log.hpp"
#include "mnl/oracle.hpp"

using namespace mnl;
using namespace mnl::oracle;
using dynamics::LinearGaussianSystem;

namespace {

LinearGaussianSystem two_dim() {
    LinearGaussianSystem sys;
    sys.A = Eigen::Matrix2d{{0.8, 0.1}, {-0.2, 0.7}};
    sys.Q = Eigen::Matrix2d{{0.3, 0.05}, {0.05, 0.2}};
    return sys;
}

Eigen::VectorXd random_pair(std::mt19937_64& rng, Eigen::Index d) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd y(2 * d);
    for (Eigen::Index k = 0; k < 2 * d; ++k) y[k] = normal(rng);
    return y;
}

}  // namespace

TEST(JointCovariance, FullNoiseIsNearlyIdentity) {
    const auto sched = cosine_schedule(250);
    const auto j = joint_noisy_covariance(LinearGaussianSystem::unit_variance_ar1(0.9), 250, 250, sched);
    EXPECT_LT((j.cov - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(JointCovariance, CleanLevelsGiveStationaryJoint) {
    const auto sched = cosine_schedule(50);
    const auto sys = two_dim();
    const auto j = joint_noisy_covariance(sys, 0, 0, sched);
    const Eigen::MatrixXd sigma = dynamics::stationary_covariance(sys);
    EXPECT_LT((j.cov.topLeftCorner(2, 2) - sigma).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((j.cov.bottomRightCorner(2, 2) - sigma).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((j.cov.topRightCorner(2, 2) - sys.A * sigma).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(JointCovariance, ScalarEntriesByHand) {
    const auto sched = cosine_schedule(100);
    const auto j = joint_noisy_covariance(LinearGaussianSystem::unit_variance_ar1(0.9), 20, 70, sched);
    const double a1 = sched.alpha_bar[20], a2 = sched.alpha_bar[70];
    EXPECT_NEAR(j.cov(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(j.cov(1, 1), 1.0, 1e-12);
    EXPECT_NEAR(j.cov(0, 1), 0.9 * std::sqrt(a1 * a2), 1e-12);
}

TEST(JointCovariance, MatchesSampleCovariance) {
    const auto sched = cosine_schedule(100);
    const auto sys = two_dim();
    const std::int64_t n = 100000;
    const auto j = joint_noisy_covariance(sys, 40, 60, sched);
    const Eigen::MatrixXd y = sample_noisy_pairs(sys, 40, 60, sched, n, 11);
    const Eigen::MatrixXd emp = y.transpose() * y / static_cast<double>(n);
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            const double se = std::sqrt((j.cov(a, a) * j.cov(b, b) + j.cov(a, b) * j.cov(a, b)) / n);
            EXPECT_NEAR(emp(a, b), j.cov(a, b), 3.0 * se) << a << "," << b;
        }
    }
}

TEST(AnalyticScore, ZeroAtOrigin) {
    const auto sched = cosine_schedule(50);
    const auto s = analytic_multi_level_score(two_dim(), Eigen::VectorXd::Zero(4), 10, 20, sched);
    EXPECT_EQ(s.stacked().cwiseAbs().maxCoeff(), 0.0);
}

TEST(AnalyticScore, FullNoiseConditionDecouples) {
    const auto sched = cosine_schedule(250);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.9);
    const Eigen::Vector2d y(1.3, -0.6);
    for (int s1 : {1, 50, 200}) {
        const auto s = analytic_multi_level_score(sys, y, s1, 250, sched);
        // Marginal of x_t^{s1} is N(0, 1) for unit-variance data.
        EXPECT_NEAR(s.current[0], -y[0], 1e-3);
    }
}

TEST(AnalyticScore, AgreesWithMonteCarlo) {
    const auto sched = cosine_schedule(100);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.9);
    const Eigen::Vector2d y(0.5, 0.2);
    const auto exact = analytic_multi_level_score(sys, y, 50, 50, sched).stacked();
    const auto mc = mc_multi_level_score(sys, y, 50, 50, sched, 200000, 3);
    EXPECT_TRUE(mc.reliable);
    const Eigen::VectorXd est = mc.value.stacked(), se = mc.standard_error.stacked();
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(est[k], exact[k], 3.0 * se[k]) << k;
}

TEST(AnalyticScore, AgreesWithMonteCarloMultivariate) {
    const auto sched = cosine_schedule(100);
    const auto sys = two_dim();
    const Eigen::Vector4d y(0.3, -0.4, 0.1, 0.6);
    const auto exact = analytic_multi_level_score(sys, y, 70, 40, sched).stacked();
    const auto mc = mc_multi_level_score(sys, y, 70, 40, sched, 200000, 5);
    const Eigen::VectorXd est = mc.value.stacked(), se = mc.standard_error.stacked();
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(est[k], exact[k], 3.0 * se[k]) << k;
}

TEST(MonteCarloScore, ZeroAtOriginWithinError) {
    const auto sched = cosine_schedule(100);
    const auto mc = mc_multi_level_score(LinearGaussianSystem::unit_variance_ar1(0.9), Eigen::Vector2d::Zero(), 60,
                                         60, sched, 100000, 9);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(mc.value.stacked()[k], 0.0, 3.0 * mc.standard_error.stacked()[k]);
}

TEST(MonteCarloScore, StandardErrorShrinksLikeRootN) {
    const auto sched = cosine_schedule(100);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.9);
    const Eigen::Vector2d y(0.5, 0.2);
    const auto small = mc_multi_level_score(sys, y, 70, 70, sched, 1000, 21);
    const auto large = mc_multi_level_score(sys, y, 70, 70, sched, 100000, 22);
    const double ratio = small.standard_error.current[0] / large.standard_error.current[0];
    EXPECT_GT(ratio, 7.0);
    EXPECT_LT(ratio, 13.0);
}

TEST(MonteCarloScore, RejectsSmallSamplesAndCleanLevels) {
    const auto sched = cosine_schedule(20);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.5);
    const Eigen::Vector2d y(0.1, 0.1);
    EXPECT_THROW(mc_multi_level_score(sys, y, 5, 5, sched, 999, 1), ArgumentError);
    EXPECT_THROW(mc_multi_level_score(sys, y, 0, 5, sched, 1000, 1), ArgumentError);
}

TEST(MonteCarloScore, WarnsOnDegenerateWeights) {
    const auto sched = cosine_schedule(250);
    std::vector<std::string> messages;
    ScopedWarningSink sink([&](const std::string& m) { messages.push_back(m); });
    const auto mc = mc_multi_level_score(LinearGaussianSystem::unit_variance_ar1(0.9), Eigen::Vector2d(6.0, -6.0), 1,
                                         1, sched, 1000, 4);
    EXPECT_FALSE(mc.reliable);
    ASSERT_FALSE(messages.empty());
    EXPECT_NE(messages[0].find("effective sample size"), std::string::npos);
}

TEST(DenoisingOracle, CleanLevelsReturnInput) {
    const auto sched = cosine_schedule(50);
    const Eigen::Vector4d y(0.3, -1.0, 2.0, 0.5);
    const auto d = analytic_denoising_oracle(two_dim(), y, 0, 0, sched).stacked();
    EXPECT_LT((d - y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(DenoisingOracle, FullNoiseReturnsNearlyZero) {
    const auto sched = cosine_schedule(250);
    const Eigen::Vector2d y(1.5, -2.0);
    const auto d = analytic_denoising_oracle(LinearGaussianSystem::unit_variance_ar1(0.9), y, 250, 250, sched);
    EXPECT_LT(d.stacked().cwiseAbs().maxCoeff(), 1e-3);
}

TEST(DenoisingOracle, AgreesWithMonteCarloPosteriorMean) {
    const auto sched = cosine_schedule(100);
    const auto sys = two_dim();
    const Eigen::Vector4d y(0.4, 0.1, -0.3, 0.2);
    const auto exact = analytic_denoising_oracle(sys, y, 45, 65, sched).stacked();
    const auto mc = mc_denoising_oracle(sys, y, 45, 65, sched, 100000, 8);
    const Eigen::VectorXd est = mc.value.stacked(), se = mc.standard_error.stacked();
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(est[k], exact[k], 3.0 * se[k]) << k;
}

TEST(DenoisingOracle, ResidualOrthogonalToObservation) {
    // E[(y⁰ − D(y)) yᵀ] = 0 characterizes the conditional mean among linear maps.
    const auto sched = cosine_schedule(100);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.9);
    const std::int64_t n = 100000;
    Eigen::MatrixXd clean;
    const Eigen::MatrixXd y = sample_noisy_pairs(sys, 30, 80, sched, n, 17, &clean);
    const auto joint = joint_noisy_covariance(sys, 30, 80, sched);
    Eigen::Matrix2d acc = Eigen::Matrix2d::Zero(), acc2 = Eigen::Matrix2d::Zero();
    for (std::int64_t i = 0; i < n; ++i) {
        const Eigen::VectorXd yi = y.row(i).transpose();
        const Eigen::VectorXd r = clean.row(i).transpose() - analytic_denoising_oracle(joint, yi).stacked();
        const Eigen::Matrix2d m = r * yi.transpose();
        acc += m;
        acc2 += m.cwiseProduct(m);
    }
    acc /= static_cast<double>(n);
    const Eigen::Matrix2d se = ((acc2 / static_cast<double>(n) - acc.cwiseProduct(acc)) / n).cwiseSqrt();
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) EXPECT_NEAR(acc(a, b), 0.0, 3.0 * se(a, b));
    }
}

TEST(DenoisingOracle, ScoreIdentityHoldsOnGrid) {
    const auto sched = cosine_schedule(60);
    const auto sys = two_dim();
    std::mt19937_64 rng(31);
    for (int s1 = 1; s1 <= 60; s1 += 7) {
        for (int s2 = 1; s2 <= 60; s2 += 7) {
            const auto joint = joint_noisy_covariance(sys, s1, s2, sched);
            const Eigen::VectorXd y = random_pair(rng, 2);
            const auto direct = analytic_multi_level_score(joint, y).stacked();
            const auto rebuilt = score_from_oracle(joint, y).stacked();
            EXPECT_LT((direct - rebuilt).cwiseAbs().maxCoeff(), 1e-10) << s1 << "," << s2;
        }
    }
}

TEST(DenoisingOracle, ScoreFromOracleNeedsNoisyLevels) {
    const auto sched = cosine_schedule(10);
    const auto joint = joint_noisy_covariance(two_dim(), 0, 3, sched);
    EXPECT_THROW(score_from_oracle(joint, Eigen::VectorXd::Zero(4)), ArgumentError);
}

TEST(Factorization, JointScoreMatchesConditionalScores) {
    const auto sched = cosine_schedule(100);
    const auto sys = two_dim();
    std::mt19937_64 rng(41);
    for (int s1 = 0; s1 <= 100; s1 += 11) {
        for (int s2 = 0; s2 <= 100; s2 += 11) {
            const auto r = conditional_score_factorization_check(sys, random_pair(rng, 2), s1, s2, sched);
            EXPECT_LT(r.max(), 1e-8) << s1 << "," << s2;
        }
    }
}

TEST(Factorization, ScalarChain) {
    const auto sched = cosine_schedule(250);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.9);
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> level(1, 250);
        const auto r = conditional_score_factorization_check(sys, random_pair(rng, 1), level(rng), level(rng), sched);
        EXPECT_LT(r.max(), 1e-8);
    }
}

TEST(Factorization, DetectsCorruptedCrossCovariance) {
    const auto sched = cosine_schedule(100);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.9);
    const Eigen::MatrixXd wrong = 0.5 * sys.A * dynamics::stationary_covariance(sys);
    const auto r = conditional_score_factorization_check(sys, Eigen::Vector2d(1.0, 1.0), 20, 20, sched, wrong);
    EXPECT_GT(r.max(), 1e-3);
}

TEST(Transition, CleanConditionGivesDynamics) {
    const auto sched = cosine_schedule(50);
    const auto sys = two_dim();
    const Eigen::Vector2d x(0.5, -1.0);
    const auto t = analytic_transition(sys, x, 0, sched);
    EXPECT_LT((t.mean - sys.A * x).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((t.cov - sys.Q).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Transition, FullNoiseConditionGivesStationaryLaw) {
    const auto sched = cosine_schedule(250);
    const auto sys = LinearGaussianSystem::unit_variance_ar1(0.9);
    const auto t = analytic_transition(sys, Eigen::VectorXd::Constant(1, 2.0), 250, sched);
    EXPECT_NEAR(t.mean[0], 0.0, 1e-3);
    EXPECT_NEAR(t.cov(0, 0), 1.0, 1e-6);
}
