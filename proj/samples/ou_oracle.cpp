// Multi-noise-level score of a scalar Ornstein-Uhlenbeck pair: closed form against a
// Monte-Carlo estimate over a few (s1, s2) levels, plus the conditional-score factorization residual.
//
//   ou_oracle [a] [S] [samples]

#include <cstdio>
#include <cstdlib>

#include "mnl/dynamics/linear_gaussian.hpp"
#include "mnl/oracle.hpp"
#include "mnl/schedule.hpp"

int main(int argc, char** argv) {
    using namespace mnl;
    const double a = argc > 1 ? std::atof(argv[1]) : 0.9;
    const int S = argc > 2 ? std::atoi(argv[2]) : 100;
    const long n = argc > 3 ? std::atol(argv[3]) : 100000;
    const auto sys = dynamics::LinearGaussianSystem::unit_variance_ar1(a);
    const auto sched = cosine_schedule(S);

    std::printf("%4s %4s  %10s %10s %8s  %10s %10s %8s  %9s\n", "s1", "s2", "score_t", "mc", "z", "score_t-1", "mc",
                "z", "factor");
    for (int s1 : {S / 5, S / 2, 4 * S / 5}) {
        for (int s2 : {S / 5, S / 2, 4 * S / 5}) {
            const Eigen::Vector2d y = oracle::sample_noisy_pairs(sys, s1, s2, sched, 1, 17 + s1 * 1000 + s2).row(0);
            const auto exact = oracle::analytic_multi_level_score(sys, y, s1, s2, sched);
            const auto mc = oracle::mc_multi_level_score(sys, y, s1, s2, sched, n, 5);
            const double z1 = (mc.value.current[0] - exact.current[0]) / mc.standard_error.current[0];
            const double z2 = (mc.value.previous[0] - exact.previous[0]) / mc.standard_error.previous[0];
            const double f = oracle::conditional_score_factorization_check(sys, y, s1, s2, sched).max();
            std::printf("%4d %4d  %10.5f %10.5f %8.2f  %10.5f %10.5f %8.2f  %9.2e%s\n", s1, s2, exact.current[0],
                        mc.value.current[0], z1, exact.previous[0], mc.value.previous[0], z2, f,
                        mc.reliable ? "" : "  (low ESS)");
        }
    }
}
