#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "mnl/dynamics/kolmogorov.hpp"
#include "mnl/dynamics/linear_gaussian.hpp"
#include "mnl/dynamics/trajectory.hpp"
#include "mnl/dynamics/trajectory_io.hpp"

using namespace mnl;
using namespace mnl::dynamics;

namespace {

KolmogorovConfig unforced(double nu, double dt) {
    KolmogorovConfig cfg;
    cfg.nu = nu;
    cfg.linear_drag = 0.0;
    cfg.forcing_amplitude = 0.0;
    cfg.solver_dt = dt;
    return cfg;
}

double enstrophy(const GridField& f) {
    double s = 0.0;
    for (double v : f.values) s += v * v;
    return s;
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Kolmogorov, ZeroFieldWithoutForcingIsFixedPoint) {
    GridField zero(1, 64, 64);
    const auto out = kolmogorov_step(zero, unforced(1e-3, 0.01));
    for (double v : out.values) EXPECT_EQ(v, 0.0);
}

TEST(Kolmogorov, SingleModeDecaysAtViscousRate) {
    const auto cfg = unforced(0.01, 0.05);
    GridField f(1, 64, 64);
    const int k = 3;
    for (std::size_t i = 0; i < 64; ++i) {
        for (std::size_t j = 0; j < 64; ++j) {
            f.at(0, i, j) = std::cos(k * 2.0 * std::numbers::pi * static_cast<double>(j) / 64.0);
        }
    }
    const auto out = kolmogorov_step(f, cfg);
    const double factor = std::exp(-cfg.nu * k * k * cfg.solver_dt);
    for (std::size_t n = 0; n < f.size(); ++n) EXPECT_NEAR(out.values[n], factor * f.values[n], 1e-12);
}

TEST(Kolmogorov, ForcingAddsCurlOfSinusoidalForce) {
    KolmogorovConfig cfg;
    cfg.nu = 1e-3;
    cfg.linear_drag = 0.0;
    cfg.solver_dt = 1e-4;
    GridField zero(1, 64, 64);
    const auto out = kolmogorov_step(zero, cfg);
    // dω/dt = −4 cos(4y) from rest; a single shear mode has no advective self-interaction.
    for (std::size_t i = 0; i < 64; ++i) {
        const double y = 2.0 * std::numbers::pi * static_cast<double>(i) / 64.0;
        for (std::size_t j = 0; j < 64; j += 7) {
            EXPECT_NEAR(out.at(0, i, j) / cfg.solver_dt, -4.0 * std::cos(4.0 * y), 1e-5);
        }
    }
}

TEST(Kolmogorov, AdvectionConservesEnstrophy) {
    auto cfg = unforced(1e-14, 0.0);
    GridField w = random_vorticity(64, 11, 10, 1.0);
    // Pick dt for an advective CFL number of 0.5.
    cfg.solver_dt = 1.0;
    KolmogorovSolver probe(cfg);
    cfg.solver_dt = 0.5 / probe.cfl_number(probe.to_spectral(w));
    KolmogorovSolver solver(cfg);
    auto spec = solver.to_spectral(w);
    double prev = enstrophy(solver.to_physical(spec));
    for (int step = 0; step < 20; ++step) {
        solver.step_spectral(spec, step);
        const double cur = enstrophy(solver.to_physical(spec));
        EXPECT_LT(std::abs(cur - prev) / prev, 1e-6) << "step " << step;
        prev = cur;
    }
}

TEST(Kolmogorov, CflViolationIsConfigurationError) {
    auto cfg = unforced(1e-3, 10.0);
    const GridField w = random_vorticity(64, 3, 8, 5.0);
    EXPECT_THROW(kolmogorov_step(w, cfg), ConfigurationError);
}

TEST(Kolmogorov, NonFiniteVelocityIsDivergenceError) {
    auto cfg = unforced(1e-3, 0.01);
    cfg.max_cfl = 1e300;
    KolmogorovSolver solver(cfg);
    GridField w = random_vorticity(64, 3, 8, 1e307);
    try {
        for (int s = 0; s < 20; ++s) w = solver.step(w, s);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.index(), 0);
    }
}

TEST(Kolmogorov, InvalidConfigRejected) {
    KolmogorovConfig cfg;
    cfg.nu = 0.0;
    EXPECT_THROW(KolmogorovSolver{cfg}, ConfigurationError);
    cfg = KolmogorovConfig{};
    cfg.resolution = 8;
    EXPECT_THROW(KolmogorovSolver{cfg}, ConfigurationError);
}

TEST(Kolmogorov, ForcedTurbulenceStaysFiniteAtDeskScale) {
    KolmogorovConfig cfg;
    KolmogorovSystem sys(cfg);
    const auto traj = generate_trajectory(sys, random_vorticity(64, 5), 20, 500, 10, 5);
    for (const auto& f : traj.frames) ASSERT_TRUE(f.all_finite());
    EXPECT_DOUBLE_EQ(traj.dt_physical, cfg.solver_dt * 10);
    EXPECT_EQ(traj.system_tag, "kolmogorov");
}

TEST(LinearGaussian, StepExamples) {
    LinearGaussianSystem sys{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Identity(2, 2)};
    Eigen::VectorXd x(2), z(2);
    x << 3.0, -4.0;
    z << 0.25, -1.5;
    EXPECT_TRUE(linear_gaussian_step(sys, x, z).isApprox(z));

    const double a = 0.7;
    LinearGaussianSystem iso{a * Eigen::MatrixXd::Identity(2, 2), (1 - a * a) * Eigen::MatrixXd::Identity(2, 2)};
    EXPECT_EQ(linear_gaussian_step(iso, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)).norm(), 0.0);
}

TEST(LinearGaussian, IndefiniteNoiseRejected) {
    Eigen::MatrixXd q(2, 2);
    q << 1.0, 0.0, 0.0, -0.5;
    LinearGaussianSystem sys{0.5 * Eigen::MatrixXd::Identity(2, 2), q};
    EXPECT_THROW(linear_gaussian_step(sys, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)), ConfigurationError);
}

TEST(LinearGaussian, SingularPsdNoiseAccepted) {
    Eigen::MatrixXd q(2, 2);
    q << 1.0, 1.0, 1.0, 1.0;
    LinearGaussianSystem sys{0.5 * Eigen::MatrixXd::Identity(2, 2), q};
    const Eigen::MatrixXd f = sys.noise_factor();
    EXPECT_TRUE((f * f.transpose()).isApprox(q, 1e-12));
}

TEST(StationaryCovariance, Examples) {
    LinearGaussianSystem zero{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Identity(2, 2) * 2.0};
    EXPECT_TRUE(stationary_covariance(zero).isApprox(zero.Q, 1e-14));
    EXPECT_NEAR(stationary_covariance(LinearGaussianSystem::unit_variance_ar1(0.9))(0, 0), 1.0, 1e-12);
}

TEST(StationaryCovariance, RandomStableMatricesSatisfyLyapunov) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd a(3, 3);
        for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = normal(rng);
        LinearGaussianSystem probe{a, Eigen::MatrixXd::Identity(3, 3)};
        a *= 0.95 / probe.spectral_radius();
        LinearGaussianSystem sys{a, Eigen::MatrixXd::Identity(3, 3)};
        const Eigen::MatrixXd s = stationary_covariance(sys);
        const double residual = (s - a * s * a.transpose() - sys.Q).norm();
        EXPECT_LT(residual, 1e-10) << "trial " << trial;
    }
}

TEST(StationaryCovariance, NonContractiveRejected) {
    EXPECT_THROW(stationary_covariance(LinearGaussianSystem::scalar(1.0, 1.0)), ConfigurationError);
    EXPECT_THROW(stationary_covariance(LinearGaussianSystem::scalar(-1.2, 1.0)), ConfigurationError);
}

TEST(GenerateTrajectory, SingleFrameIsInitialState) {
    LinearGaussianProcess proc(LinearGaussianSystem::unit_variance_ar1(0.9));
    const GridField x0 = GridField::from_vector(std::vector<double>{0.375});
    const auto traj = generate_trajectory(proc, x0, 1, 0, 0, 1);
    ASSERT_EQ(traj.size(), 1u);
    EXPECT_EQ(traj.frames[0].values, x0.values);
    EXPECT_THROW(generate_trajectory(proc, x0, 2, 0, 0, 1), ArgumentError);
    EXPECT_THROW(generate_trajectory(proc, x0, 0, 0, 1, 1), ArgumentError);
}

TEST(GenerateTrajectory, OuIsDeterministicGivenSeed) {
    LinearGaussianProcess p1(LinearGaussianSystem::unit_variance_ar1(0.9));
    LinearGaussianProcess p2(LinearGaussianSystem::unit_variance_ar1(0.9));
    const GridField x0 = GridField::from_vector(std::vector<double>{0.0});
    const auto a = generate_trajectory(p1, x0, 500, 10, 1, 99);
    const auto b = generate_trajectory(p2, x0, 500, 10, 1, 99);
    for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t].values, b[t].values);
}

TEST(GenerateTrajectory, OuStationaryVarianceAndAutocorrelation) {
    const double a = 0.9;
    const std::int64_t n = 100000;
    LinearGaussianProcess proc(LinearGaussianSystem::unit_variance_ar1(a));
    const auto traj = generate_trajectory(proc, GridField::from_vector(std::vector<double>{0.0}), n, 200, 1, 7);
    double mean = 0.0;
    for (const auto& f : traj.frames) mean += f.values[0];
    mean /= static_cast<double>(n);
    double var = 0.0, lag1 = 0.0;
    for (std::int64_t t = 0; t < n; ++t) {
        const double x = traj.frames[static_cast<std::size_t>(t)].values[0] - mean;
        var += x * x;
        if (t + 1 < n) lag1 += x * (traj.frames[static_cast<std::size_t>(t + 1)].values[0] - mean);
    }
    const double rho = lag1 / var;
    var /= static_cast<double>(n);
    // AR(1): Var(sample variance) ≈ (2/n)(1 + a²)/(1 − a²); Var(lag-1 autocorrelation) ≈ (1 − a²)/n.
    const double se_var = std::sqrt(2.0 / n * (1.0 + a * a) / (1.0 - a * a));
    const double se_rho = std::sqrt((1.0 - a * a) / n);
    const double se_mean = std::sqrt(1.0 / n * (1.0 + a) / (1.0 - a));
    EXPECT_NEAR(var, 1.0, 3.0 * se_var);
    EXPECT_NEAR(rho, a, 3.0 * se_rho);
    EXPECT_NEAR(mean, 0.0, 3.0 * se_mean);
}

TEST(TrajectoryIo, RoundTripIsBitExact) {
    const auto dir = std::filesystem::temp_directory_path() / "mnl_test_traj_io";
    std::filesystem::remove_all(dir);
    KolmogorovConfig cfg;
    KolmogorovSystem sys(cfg);
    auto traj = generate_trajectory(sys, random_vorticity(64, 2), 4, 10, 5, 2);
    traj.normalization = {{0.1}, {2.5}};
    write_trajectory(traj, dir / "a");
    const auto loaded = read_trajectory(dir / "a.json");
    write_trajectory(loaded, dir / "b");
    EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
    ASSERT_EQ(loaded.size(), traj.size());
    for (std::size_t t = 0; t < traj.size(); ++t) {
        for (std::size_t k = 0; k < traj[t].size(); ++k) {
            EXPECT_EQ(loaded[t].values[k], static_cast<double>(static_cast<float>(traj[t].values[k])));
        }
    }
    EXPECT_EQ(loaded.normalization, traj.normalization);
    EXPECT_EQ(loaded.subsample, 5);
    EXPECT_EQ(loaded.system_config.at("nu").get<double>(), cfg.nu);
    const auto header = nlohmann::json::parse(std::ifstream(dir / "a.json"));
    EXPECT_EQ(header.at("shape"), nlohmann::json({4, 1, 64, 64}));
    EXPECT_EQ(header.at("dtype"), "f32");
    EXPECT_EQ(std::filesystem::file_size(dir / "a.bin"), 4u * 64 * 64 * 4);
}

TEST(TrajectoryIo, MissingOrTruncatedPayloadRejected) {
    const auto dir = std::filesystem::temp_directory_path() / "mnl_test_traj_io_bad";
    std::filesystem::remove_all(dir);
    Trajectory traj;
    traj.frames = {GridField::from_vector(std::vector<double>{1.0, 2.0})};
    write_trajectory(traj, dir / "t");
    std::filesystem::resize_file(dir / "t.bin", 4);
    EXPECT_THROW(read_trajectory(dir / "t"), ConfigurationError);
    EXPECT_THROW(read_trajectory(dir / "missing"), ConfigurationError);
}
