#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "mnl/error.hpp"
#include "mnl/fft.hpp"
#include "mnl/grid_field.hpp"

namespace mnl::dynamics {

/// 2D incompressible Navier–Stokes in vorticity form on [0, 2π)² with forcing
/// f = (A sin(n y), 0):   ∂tω + u·∇ω = ν∇²ω − μω − A n cos(n y).
/// `linear_drag` (μ) defaults to 0.1; set it to 0 for the undamped equation.
struct KolmogorovConfig {
    int resolution = 64;
    double nu = 1e-3;
    int forcing_wavenumber = 4;
    double forcing_amplitude = 1.0;
    double density = 1.0;
    double linear_drag = 0.1;
    double solver_dt = 0.01;
    double dealias_fraction = 2.0 / 3.0;
    double max_cfl = 1.0;

    void validate() const {
        if (!(nu > 0.0)) throw ConfigurationError("KolmogorovConfig: nu must be positive");
        if (resolution < 16 || !is_power_of_two(static_cast<std::size_t>(resolution))) {
            throw ConfigurationError("KolmogorovConfig: resolution must be a power of two >= 16");
        }
        if (!(solver_dt > 0.0)) throw ConfigurationError("KolmogorovConfig: solver_dt must be positive");
        if (!(dealias_fraction > 0.0 && dealias_fraction <= 1.0)) {
            throw ConfigurationError("KolmogorovConfig: dealias_fraction must lie in (0, 1]");
        }
        if (linear_drag < 0.0) throw ConfigurationError("KolmogorovConfig: linear_drag must be >= 0");
        if (!(density > 0.0)) throw ConfigurationError("KolmogorovConfig: density must be positive");
        if (!(max_cfl > 0.0)) throw ConfigurationError("KolmogorovConfig: max_cfl must be positive");
    }

    NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(KolmogorovConfig, resolution, nu, forcing_wavenumber,
                                                forcing_amplitude, density, linear_drag, solver_dt,
                                                dealias_fraction, max_cfl)
};

/// Pseudo-spectral integrator: integrating-factor RK4 (viscous and drag terms
/// exact, advection and forcing explicit), square-truncation dealiasing.
class KolmogorovSolver {
public:
    using Complex = std::complex<double>;

    explicit KolmogorovSolver(KolmogorovConfig cfg)
        : cfg_((cfg.validate(), cfg)), n_(static_cast<std::size_t>(cfg_.resolution)), fft_(n_, n_) {
        const std::size_t ns = fft_.spectral_size();
        const std::size_t nc = fft_.spectral_width();
        kx_.resize(ns);
        ky_.resize(ns);
        inv_k2_.resize(ns);
        mask_.resize(ns);
        e_full_.resize(ns);
        e_half_.resize(ns);
        const long kmax = static_cast<long>(std::floor(cfg_.dealias_fraction * static_cast<double>(n_) / 2.0));
        const long nyq = static_cast<long>(n_ / 2);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < nc; ++j) {
                const std::size_t k = i * nc + j;
                const long ky = fft_.ky(i), kx = fft_.kx(j);
                kx_[k] = static_cast<double>(kx);
                ky_[k] = static_cast<double>(ky);
                const double k2 = static_cast<double>(kx * kx + ky * ky);
                inv_k2_[k] = k2 > 0.0 ? 1.0 / k2 : 0.0;
                const bool keep = std::abs(kx) <= kmax && std::abs(ky) <= kmax && std::abs(kx) != nyq &&
                                  std::abs(ky) != nyq;
                mask_[k] = keep ? 1.0 : 0.0;
                const double lin = -(cfg_.nu * k2 + cfg_.linear_drag);
                e_full_[k] = std::exp(lin * cfg_.solver_dt);
                e_half_[k] = std::exp(lin * 0.5 * cfg_.solver_dt);
            }
        }
        std::vector<double> forcing(n_ * n_);
        const double n = static_cast<double>(cfg_.forcing_wavenumber);
        for (std::size_t i = 0; i < n_; ++i) {
            const double y = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_);
            for (std::size_t j = 0; j < n_; ++j) {
                forcing[i * n_ + j] = -cfg_.forcing_amplitude * n * std::cos(n * y);
            }
        }
        forcing_hat_ = fft_.forward(forcing);
        for (std::size_t k = 0; k < ns; ++k) forcing_hat_[k] *= mask_[k];

        u_.resize(n_ * n_);
        v_.resize(n_ * n_);
        wx_.resize(n_ * n_);
        wy_.resize(n_ * n_);
        tmp_hat_.resize(ns);
    }

    const KolmogorovConfig& config() const noexcept { return cfg_; }
    std::size_t resolution() const noexcept { return n_; }
    double grid_spacing() const noexcept { return 2.0 * std::numbers::pi / static_cast<double>(n_); }

    std::vector<Complex> to_spectral(const GridField& omega) {
        check_shape(omega);
        auto w = fft_.forward(omega.channel(0));
        for (std::size_t k = 0; k < w.size(); ++k) w[k] *= mask_[k];
        return w;
    }

    GridField to_physical(const std::vector<Complex>& w_hat) {
        GridField out(1, n_, n_);
        fft_.inverse(w_hat, out.channel(0));
        return out;
    }

    /// Advances the spectral state by one solver_dt. `step_index` labels errors.
    void step_spectral(std::vector<Complex>& w, std::int64_t step_index = 0) {
        const std::size_t ns = w.size();
        std::vector<Complex> k1(ns), k2(ns), k3(ns), k4(ns), stage(ns);
        const double dt = cfg_.solver_dt;

        rhs(w, k1, /*check_cfl=*/true, step_index);
        for (std::size_t k = 0; k < ns; ++k) stage[k] = e_half_[k] * (w[k] + 0.5 * dt * k1[k]);
        rhs(stage, k2, false, step_index);
        for (std::size_t k = 0; k < ns; ++k) stage[k] = e_half_[k] * w[k] + 0.5 * dt * k2[k];
        rhs(stage, k3, false, step_index);
        for (std::size_t k = 0; k < ns; ++k) stage[k] = e_full_[k] * w[k] + dt * e_half_[k] * k3[k];
        rhs(stage, k4, false, step_index);
        for (std::size_t k = 0; k < ns; ++k) {
            w[k] = e_full_[k] * w[k] +
                   dt / 6.0 * (e_full_[k] * k1[k] + 2.0 * e_half_[k] * (k2[k] + k3[k]) + k4[k]);
            w[k] *= mask_[k];
            if (!std::isfinite(w[k].real()) || !std::isfinite(w[k].imag())) {
                throw DivergenceError("Kolmogorov solver produced a non-finite state", step_index);
            }
        }
    }

    GridField step(const GridField& omega, std::int64_t step_index = 0) {
        auto w = to_spectral(omega);
        step_spectral(w, step_index);
        GridField out = to_physical(w);
        out.grid_spacing = grid_spacing();
        if (!out.all_finite()) throw DivergenceError("Kolmogorov solver produced a non-finite state", step_index);
        return out;
    }

    /// Velocity (u, v) recovered from vorticity through the streamfunction.
    std::pair<std::vector<double>, std::vector<double>> velocity(const std::vector<Complex>& w) {
        std::vector<double> u(n_ * n_), v(n_ * n_);
        velocity_into(w, u, v);
        return {std::move(u), std::move(v)};
    }

    /// Advective CFL number dt·max(|u|/dx + |v|/dy).
    double cfl_number(const std::vector<Complex>& w) {
        velocity_into(w, u_, v_);
        double m = 0.0;
        for (std::size_t k = 0; k < n_ * n_; ++k) m = std::max(m, std::abs(u_[k]) + std::abs(v_[k]));
        return cfg_.solver_dt * m / grid_spacing();
    }

private:
    void check_shape(const GridField& f) const {
        if (f.channels != 1 || f.height != n_ || f.width != n_) {
            throw ArgumentError("KolmogorovSolver: field shape does not match resolution");
        }
    }

    void velocity_into(const std::vector<Complex>& w, std::vector<double>& u, std::vector<double>& v) {
        const Complex I(0.0, 1.0);
        // u = ∂ψ/∂y, v = −∂ψ/∂x, with ψ̂ = ω̂/|k|².
        for (std::size_t k = 0; k < w.size(); ++k) tmp_hat_[k] = I * ky_[k] * inv_k2_[k] * w[k];
        fft_.inverse(tmp_hat_, u);
        for (std::size_t k = 0; k < w.size(); ++k) tmp_hat_[k] = -I * kx_[k] * inv_k2_[k] * w[k];
        fft_.inverse(tmp_hat_, v);
    }

    void rhs(const std::vector<Complex>& w, std::vector<Complex>& out, bool check_cfl, std::int64_t step_index) {
        const Complex I(0.0, 1.0);
        velocity_into(w, u_, v_);
        if (check_cfl) {
            double m = 0.0;
            for (std::size_t k = 0; k < n_ * n_; ++k) m = std::max(m, std::abs(u_[k]) + std::abs(v_[k]));
            const double cfl = cfg_.solver_dt * m / grid_spacing();
            if (!std::isfinite(cfl)) throw DivergenceError("Kolmogorov solver: non-finite velocity", step_index);
            if (cfl > cfg_.max_cfl) {
                throw ConfigurationError("Kolmogorov solver: CFL number " + std::to_string(cfl) +
                                         " exceeds bound " + std::to_string(cfg_.max_cfl) + " at step " +
                                         std::to_string(step_index) + "; reduce solver_dt");
            }
        }
        for (std::size_t k = 0; k < w.size(); ++k) tmp_hat_[k] = I * kx_[k] * w[k];
        fft_.inverse(tmp_hat_, wx_);
        for (std::size_t k = 0; k < w.size(); ++k) tmp_hat_[k] = I * ky_[k] * w[k];
        fft_.inverse(tmp_hat_, wy_);
        for (std::size_t k = 0; k < n_ * n_; ++k) wx_[k] = u_[k] * wx_[k] + v_[k] * wy_[k];
        fft_.forward(wx_, out);
        for (std::size_t k = 0; k < w.size(); ++k) out[k] = mask_[k] * (forcing_hat_[k] - out[k]);
    }

    KolmogorovConfig cfg_;
    std::size_t n_;
    Fft2d fft_;
    std::vector<double> kx_, ky_, inv_k2_, mask_, e_full_, e_half_;
    std::vector<Complex> forcing_hat_, tmp_hat_;
    std::vector<double> u_, v_, wx_, wy_;
};

/// One solver_dt advance of `state` (builds a throwaway solver; use KolmogorovSolver in loops).
inline GridField kolmogorov_step(const GridField& state, const KolmogorovConfig& cfg) {
    if (!state.all_finite()) throw ArgumentError("kolmogorov_step: state contains non-finite values");
    KolmogorovSolver solver(cfg);
    return solver.step(state);
}

/// Band-limited Gaussian random vorticity with modes 1 <= |k| <= max_wavenumber, scaled to `rms`.
inline GridField random_vorticity(int resolution, std::uint64_t seed, int max_wavenumber = 8, double rms = 1.0) {
    const auto n = static_cast<std::size_t>(resolution);
    GridField f(1, n, n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : f.values) v = normal(rng);
    Fft2d fft(n, n);
    auto spec = fft.forward(f.channel(0));
    const std::size_t nc = fft.spectral_width();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < nc; ++j) {
            const double k = std::hypot(static_cast<double>(fft.kx(j)), static_cast<double>(fft.ky(i)));
            if (k < 0.5 || k > static_cast<double>(max_wavenumber)) spec[i * nc + j] = 0.0;
        }
    }
    fft.inverse(spec, f.channel(0));
    double ss = 0.0;
    for (double v : f.values) ss += v * v;
    const double cur = std::sqrt(ss / static_cast<double>(f.size()));
    if (cur > 0.0) {
        for (double& v : f.values) v *= rms / cur;
    }
    f.grid_spacing = 2.0 * std::numbers::pi / static_cast<double>(n);
    return f;
}

/// System adaptor for generate_trajectory; the solver is deterministic so `rng` is unused.
class KolmogorovSystem {
public:
    explicit KolmogorovSystem(const KolmogorovConfig& cfg) : solver_(cfg) {}

    template <class Rng>
    void step(GridField& state, Rng&, std::int64_t step_index) {
        state = solver_.step(state, step_index);
    }

    const KolmogorovConfig& config() const noexcept { return solver_.config(); }
    double dt() const noexcept { return solver_.config().solver_dt; }
    static constexpr const char* tag() { return "kolmogorov"; }
    nlohmann::json config_json() const { return solver_.config(); }

private:
    KolmogorovSolver solver_;
};

}  // namespace mnl::dynamics
