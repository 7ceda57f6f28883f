// Runs the Kolmogorov-flow solver from a random initial vorticity field and reports energy,
// CFL number and the frame-to-frame correlation C(1) for several subsampling factors.
//
//   kolmogorov_flow [nu] [linear_drag] [solver_dt] [burn_in_time] [record_time]

#include <cstdio>
#include <cstdlib>
#include <vector>

#include "mnl/dynamics/kolmogorov.hpp"
#include "mnl/metrics/spectrum.hpp"
#include "mnl/metrics/temporal.hpp"

int main(int argc, char** argv) {
    using namespace mnl;
    dynamics::KolmogorovConfig cfg;
    if (argc > 1) cfg.nu = std::atof(argv[1]);
    if (argc > 2) cfg.linear_drag = std::atof(argv[2]);
    if (argc > 3) cfg.solver_dt = std::atof(argv[3]);
    const double burn_in_time = argc > 4 ? std::atof(argv[4]) : 50.0;
    const double record_time = argc > 5 ? std::atof(argv[5]) : 20.0;

    dynamics::KolmogorovSolver solver(cfg);
    auto w = solver.to_spectral(dynamics::random_vorticity(cfg.resolution, 1));
    const auto burn_steps = static_cast<long>(burn_in_time / cfg.solver_dt);
    for (long k = 0; k < burn_steps; ++k) {
        solver.step_spectral(w, k);
        if ((k + 1) % (burn_steps / 10 > 0 ? burn_steps / 10 : 1) == 0) {
            const auto field = solver.to_physical(w);
            std::printf("t=%7.2f  energy=%.5f  cfl=%.3f\n", (k + 1) * cfg.solver_dt,
                        metrics::energy_spectrum(field).total(), solver.cfl_number(w));
        }
    }

    Trajectory fine;
    fine.dt_physical = cfg.solver_dt;
    const auto record_steps = static_cast<long>(record_time / cfg.solver_dt);
    double max_cfl = 0.0;
    for (long k = 0; k < record_steps; ++k) {
        solver.step_spectral(w, burn_steps + k);
        fine.frames.push_back(solver.to_physical(w));
        max_cfl = std::max(max_cfl, solver.cfl_number(w));
    }
    std::printf("max cfl while recording: %.3f\n", max_cfl);

    const auto spec = metrics::reference_spectrum(fine);
    std::printf("time-mean spectrum (k: E):");
    for (std::size_t k = 0; k < spec.energy.size(); k += 2) std::printf(" %d:%.2e", static_cast<int>(spec.wavenumbers[k]), spec.energy[k]);
    std::printf("\n");
    for (int sub : {5, 10, 20, 50, 100, 200}) {
        if (static_cast<long>(sub) * 2 >= record_steps) break;
        std::printf("subsample %4d (dt_frame=%.3f): C(1)=%.4f\n", sub, sub * cfg.solver_dt,
                    metrics::spatiotemporal_correlation(fine, static_cast<std::size_t>(sub)));
    }
    return 0;
}
