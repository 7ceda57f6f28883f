#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "mnl/error.hpp"
#include "mnl/grid_field.hpp"

namespace mnl::metrics {

namespace detail {

inline std::vector<double> centered(const GridField& f) {
    double mean = 0.0;
    for (double v : f.values) mean += v;
    mean /= static_cast<double>(f.size());
    std::vector<double> out(f.values);
    for (double& v : out) v -= mean;
    return out;
}

}  // namespace detail

/// C(τ): time average of the cosine similarity between spatially centered frames t and t+τ.
/// Averaging over initial conditions is left to the caller.
inline double spatiotemporal_correlation(const Trajectory& traj, std::size_t tau) {
    if (tau >= traj.size()) throw ArgumentError("spatiotemporal_correlation: tau must be < trajectory length");
    const std::size_t count = traj.size() - tau;
    std::vector<std::vector<double>> c;
    std::vector<double> norms;
    c.reserve(traj.size());
    for (const auto& f : traj.frames) {
        c.push_back(detail::centered(f));
        double n = 0.0;
        for (double v : c.back()) n += v * v;
        norms.push_back(std::sqrt(n));
    }
    double acc = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
        if (norms[t] == 0.0 || norms[t + tau] == 0.0) {
            throw NumericalError("spatiotemporal_correlation: constant frame at index " +
                                 std::to_string(norms[t] == 0.0 ? t : t + tau) + " (correlation undefined)");
        }
        double dot = 0.0;
        for (std::size_t k = 0; k < c[t].size(); ++k) dot += c[t][k] * c[t + tau][k];
        acc += dot / (norms[t] * norms[t + tau]);
    }
    return acc / static_cast<double>(count);
}

/// R(t) = ‖(x_{t+1} − x_t)/Δt‖₁ for t = 0..T−2. NaN frames give NaN entries.
inline std::vector<double> rate_of_change(const Trajectory& traj) {
    if (traj.size() < 2) throw ArgumentError("rate_of_change: trajectory needs at least two frames");
    std::vector<double> out;
    out.reserve(traj.size() - 1);
    for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
        const auto& a = traj.frames[t].values;
        const auto& b = traj.frames[t + 1].values;
        double acc = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) acc += std::abs((b[k] - a[k]) / traj.dt_physical);
        out.push_back(acc);
    }
    return out;
}

/// First index whose value is non-finite, or -1.
inline long first_non_finite(const std::vector<double>& series) {
    for (std::size_t k = 0; k < series.size(); ++k) {
        if (!std::isfinite(series[k])) return static_cast<long>(k);
    }
    return -1;
}

}  // namespace mnl::metrics
