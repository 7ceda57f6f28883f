#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <fftw3.h>

#include "mnl/error.hpp"

namespace mnl {

/// Real-to-complex 2D transform on an H×W row-major grid. The half spectrum has
/// H × (W/2 + 1) entries; inverse() includes the 1/(H·W) normalization.
/// Planning is serialized through a process-wide mutex; execution on distinct objects is thread-safe.
class Fft2d {
public:
    Fft2d(std::size_t height, std::size_t width)
        : h_(height), w_(width), wc_(width / 2 + 1),
          real_(fftw_alloc_real(h_ * w_)), spec_(fftw_alloc_complex(h_ * wc_)) {
        if (h_ == 0 || w_ == 0) throw ArgumentError("Fft2d: zero-size grid");
        const int h = static_cast<int>(h_), w = static_cast<int>(w_);
        std::lock_guard lock(planner_mutex());
        fwd_ = fftw_plan_dft_r2c_2d(h, w, real_.get(), spec_.get(), FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r_2d(h, w, spec_.get(), real_.get(), FFTW_ESTIMATE);
    }

    Fft2d(const Fft2d&) = delete;
    Fft2d& operator=(const Fft2d&) = delete;

    ~Fft2d() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
    }

    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    std::size_t spectral_width() const noexcept { return wc_; }
    std::size_t spectral_size() const noexcept { return h_ * wc_; }

    void forward(std::span<const double> in, std::span<std::complex<double>> out) {
        std::copy(in.begin(), in.end(), real_.get());
        fftw_execute(fwd_);
        auto* s = reinterpret_cast<std::complex<double>*>(spec_.get());
        std::copy(s, s + spectral_size(), out.begin());
    }

    std::vector<std::complex<double>> forward(std::span<const double> in) {
        std::vector<std::complex<double>> out(spectral_size());
        forward(in, out);
        return out;
    }

    /// The input half spectrum is copied; c2r destroys its input buffer.
    void inverse(std::span<const std::complex<double>> in, std::span<double> out) {
        auto* s = reinterpret_cast<std::complex<double>*>(spec_.get());
        std::copy(in.begin(), in.end(), s);
        fftw_execute(inv_);
        const double scale = 1.0 / static_cast<double>(h_ * w_);
        for (std::size_t k = 0; k < h_ * w_; ++k) out[k] = real_.get()[k] * scale;
    }

    std::vector<double> inverse(std::span<const std::complex<double>> in) {
        std::vector<double> out(h_ * w_);
        inverse(in, out);
        return out;
    }

    /// Signed integer wavenumber of row index i (y direction) and column index j (x direction).
    long ky(std::size_t i) const noexcept {
        return i <= h_ / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(h_);
    }
    long kx(std::size_t j) const noexcept { return static_cast<long>(j); }

private:
    struct FreeReal {
        void operator()(double* p) const noexcept { fftw_free(p); }
    };
    struct FreeComplex {
        void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
    };

    std::size_t h_, w_, wc_;
    std::unique_ptr<double, FreeReal> real_;
    std::unique_ptr<fftw_complex, FreeComplex> spec_;
    static std::mutex& planner_mutex() {
        static std::mutex m;
        return m;
    }

    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
};

}  // namespace mnl
