#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mnl/error.hpp"
#include "mnl/fft.hpp"
#include "mnl/grid_field.hpp"

namespace mnl::metrics {

/// Kinetic energy per integer wavenumber shell k = 1..⌊N/2⌋; energy[k-1] belongs to wavenumbers[k-1].
/// Normalized so that the shell sum equals ½·mean(u² + v²) over the grid for fields whose
/// modes lie inside the largest shell (the DC mode and the corners |k| > N/2 are excluded).
struct SpectrumResult {
    std::vector<int> wavenumbers;
    std::vector<double> energy;
    std::int64_t timestamp = 0;

    double total() const {
        double s = 0.0;
        for (double e : energy) s += e;
        return s;
    }
};

inline SpectrumResult energy_spectrum(const GridField& vorticity, std::int64_t timestamp = 0) {
    if (vorticity.size() == 0) throw ArgumentError("energy_spectrum: zero-size field");
    if (vorticity.height != vorticity.width) throw ArgumentError("energy_spectrum: field must be square");
    const std::size_t n = vorticity.height;
    const int shells = static_cast<int>(n / 2);
    SpectrumResult out;
    out.timestamp = timestamp;
    out.wavenumbers.resize(static_cast<std::size_t>(shells));
    for (int k = 0; k < shells; ++k) out.wavenumbers[static_cast<std::size_t>(k)] = k + 1;
    out.energy.assign(static_cast<std::size_t>(shells), 0.0);
    if (shells == 0) return out;

    Fft2d fft(n, n);
    const auto w = fft.forward(vorticity.channel(0));
    const std::size_t nc = fft.spectral_width();
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < nc; ++j) {
            const double kx = static_cast<double>(fft.kx(j));
            const double ky = static_cast<double>(fft.ky(i));
            const double k2 = kx * kx + ky * ky;
            if (k2 == 0.0) continue;
            const long shell = std::lround(std::sqrt(k2));
            if (shell < 1 || shell > shells) continue;
            // |û|² + |v̂|² = |ω̂|²/|k|²; half-spectrum columns other than 0 and N/2 stand for two modes.
            const bool doubled = j != 0 && !(n % 2 == 0 && j == n / 2);
            const double weight = doubled ? 2.0 : 1.0;
            const double e = 0.5 * std::norm(w[i * nc + j]) / k2 * norm * norm * weight;
            out.energy[static_cast<std::size_t>(shell - 1)] += e;
        }
    }
    return out;
}

/// Pointwise mean of spectra sharing one binning.
inline SpectrumResult mean_spectrum(std::span<const SpectrumResult> spectra) {
    if (spectra.empty()) throw ArgumentError("mean_spectrum: no spectra");
    SpectrumResult out = spectra.front();
    for (std::size_t k = 1; k < spectra.size(); ++k) {
        if (spectra[k].wavenumbers != out.wavenumbers) throw ArgumentError("mean_spectrum: binning mismatch");
        for (std::size_t b = 0; b < out.energy.size(); ++b) out.energy[b] += spectra[k].energy[b];
    }
    for (double& e : out.energy) e /= static_cast<double>(spectra.size());
    return out;
}

inline std::vector<SpectrumResult> trajectory_spectra(const Trajectory& traj) {
    std::vector<SpectrumResult> out;
    out.reserve(traj.size());
    for (std::size_t t = 0; t < traj.size(); ++t) out.push_back(energy_spectrum(traj.frames[t], static_cast<std::int64_t>(t)));
    return out;
}

/// Time-mean spectrum of a reference trajectory.
inline SpectrumResult reference_spectrum(const Trajectory& traj) {
    const auto spectra = trajectory_spectra(traj);
    return mean_spectrum(spectra);
}

/// Per-frame L2 distance between the frame spectrum and `reference`. Frames containing
/// non-finite values map to NaN.
inline std::vector<double> spectrum_distance(const Trajectory& traj, const SpectrumResult& reference) {
    std::vector<double> out;
    out.reserve(traj.size());
    for (std::size_t t = 0; t < traj.size(); ++t) {
        const auto& f = traj.frames[t];
        if (!f.all_finite()) {
            out.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const auto s = energy_spectrum(f, static_cast<std::int64_t>(t));
        if (s.wavenumbers != reference.wavenumbers) throw ArgumentError("spectrum_distance: binning mismatch");
        double acc = 0.0;
        for (std::size_t b = 0; b < s.energy.size(); ++b) {
            const double d = s.energy[b] - reference.energy[b];
            acc += d * d;
        }
        out.push_back(std::sqrt(acc));
    }
    return out;
}

}  // namespace mnl::metrics
