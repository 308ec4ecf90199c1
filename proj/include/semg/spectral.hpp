#pragma once
// One-sided Hann periodogram with density scaling, backed by FFTW.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "semg/errors.hpp"

namespace semg {

namespace detail {

// FFTW planning is not thread-safe; execution with the new-array interface is.
class RealFftPlans {
public:
    static RealFftPlans& instance() {
        static RealFftPlans plans;
        return plans;
    }

    fftw_plan get(std::size_t n) {
        std::lock_guard lock(mutex_);
        auto it = plans_.find(n);
        if (it != plans_.end()) return it->second;
        double* in = fftw_alloc_real(n);
        fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
        fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
        fftw_free(in);
        fftw_free(out);
        plans_.emplace(n, p);
        return p;
    }

    RealFftPlans(const RealFftPlans&) = delete;
    RealFftPlans& operator=(const RealFftPlans&) = delete;

private:
    RealFftPlans() = default;
    ~RealFftPlans() {
        for (auto& [n, p] : plans_) fftw_destroy_plan(p);
    }
    std::mutex mutex_;
    std::map<std::size_t, fftw_plan> plans_;
};

// Forward real FFT; returns bins 0..n/2.
inline std::vector<std::complex<double>> rfft(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> in(x.begin(), x.end());
    std::vector<std::complex<double>> out(n / 2 + 1);
    fftw_plan p = RealFftPlans::instance().get(n);
    fftw_execute_dft_r2c(p, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
    return out;
}

inline const std::vector<double>& hann_window(std::size_t n) {
    thread_local std::map<std::size_t, std::vector<double>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return cache.emplace(n, std::move(w)).first->second;
}

}  // namespace detail

inline constexpr std::size_t kMinPsdLength = 64;

struct PsdEstimate {
    std::vector<double> freqs_hz;  // bin centers 0 .. fs/2
    std::vector<double> power;     // uV^2 / Hz
    double df = 0.0;

    // Integrated power over [lo, hi); `hi_inclusive` also counts a bin sitting exactly on hi.
    double band_power(double lo, double hi, bool hi_inclusive = false) const {
        double s = 0.0;
        for (std::size_t k = 0; k < power.size(); ++k) {
            const double f = freqs_hz[k];
            if (f >= lo && (f < hi || (hi_inclusive && f <= hi))) s += power[k];
        }
        return s * df;
    }

    double total_power() const {
        double s = 0.0;
        for (double p : power) s += p;
        return s * df;
    }
};

inline PsdEstimate psd(std::span<const double> x, double fs) {
    const std::size_t n = x.size();
    if (n < kMinPsdLength)
        throw ArgumentError("psd needs at least " + std::to_string(kMinPsdLength) + " samples, got " +
                            std::to_string(n));
    const auto& w = detail::hann_window(n);
    std::vector<double> xw(n);
    double wss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xw[i] = x[i] * w[i];
        wss += w[i] * w[i];
    }
    const auto spec = detail::rfft(xw);

    PsdEstimate out;
    const std::size_t bins = n / 2 + 1;
    out.df = fs / static_cast<double>(n);
    out.freqs_hz.resize(bins);
    out.power.resize(bins);
    const double scale = 1.0 / (fs * wss);
    for (std::size_t k = 0; k < bins; ++k) {
        double p = std::norm(spec[k]) * scale;
        const bool nyquist = (n % 2 == 0) && k == n / 2;
        if (k != 0 && !nyquist) p *= 2.0;
        out.freqs_hz[k] = static_cast<double>(k) * out.df;
        out.power[k] = p;
    }
    return out;
}

}  // namespace semg
