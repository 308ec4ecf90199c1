#pragma once
// IIR design (Butterworth, biquad notch) and zero-phase application.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "semg/errors.hpp"

namespace semg {

enum class FilterKind { lowpass, highpass, bandpass, notch };

inline const char* to_string(FilterKind k) {
    switch (k) {
        case FilterKind::lowpass: return "lowpass";
        case FilterKind::highpass: return "highpass";
        case FilterKind::bandpass: return "bandpass";
        case FilterKind::notch: return "notch";
    }
    return "?";
}

struct FilterSpec {
    FilterKind kind = FilterKind::bandpass;
    double low_hz = 0.0;   // lowpass/highpass cutoff, bandpass lower edge, notch center
    double high_hz = 0.0;  // bandpass upper edge
    int order = 4;         // Butterworth prototype order; 2 for the notch biquad
    double q = 30.0;       // notch quality factor

    static FilterSpec lowpass(double fc, int order) { return {FilterKind::lowpass, fc, 0.0, order}; }
    static FilterSpec highpass(double fc, int order) { return {FilterKind::highpass, fc, 0.0, order}; }
    static FilterSpec bandpass(double lo, double hi, int order) { return {FilterKind::bandpass, lo, hi, order}; }
    static FilterSpec notch(double f0, double q = 30.0) { return {FilterKind::notch, f0, 0.0, 2, q}; }
};

// Direct-form II transposed second-order section with a0 = 1.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;

    std::complex<double> response(double omega) const {
        const std::complex<double> z1 = std::polar(1.0, -omega);
        const std::complex<double> z2 = z1 * z1;
        return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
    }
};

class SosFilter {
public:
    SosFilter() = default;
    SosFilter(std::vector<Biquad> sections, int poles) : sections_(std::move(sections)), poles_(poles) {}

    const std::vector<Biquad>& sections() const noexcept { return sections_; }
    int poles() const noexcept { return poles_; }

    std::complex<double> response(double freq_hz, double fs) const {
        const double w = 2.0 * std::numbers::pi * freq_hz / fs;
        std::complex<double> h = 1.0;
        for (const auto& s : sections_) h *= s.response(w);
        return h;
    }

    // Causal pass in place. When `steady_state` is set the section states start
    // at the step response equilibrium for x[0], which suppresses the start-up
    // transient on signals with an offset.
    void apply(std::span<double> x, bool steady_state) const {
        if (x.empty()) return;
        double level = x[0];
        for (const auto& s : sections_) {
            double z1 = 0.0, z2 = 0.0;
            if (steady_state) {
                const double h = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
                z2 = (s.b2 - s.a2 * h) * level;
                z1 = (s.b1 - s.a1 * h) * level + z2;
                level *= h;
            }
            for (double& v : x) {
                const double in = v;
                const double out = s.b0 * in + z1;
                z1 = s.b1 * in - s.a1 * out + z2;
                z2 = s.b2 * in - s.a2 * out;
                v = out;
            }
        }
    }

private:
    std::vector<Biquad> sections_;
    int poles_ = 0;
};

namespace detail {

using cplx = std::complex<double>;

inline cplx bilinear(cplx s, double fs2) { return (fs2 + s) / (fs2 - s); }

// Pairs digital poles (conjugates together, leftover reals together) into
// sections that share the numerator `num`, then normalises every section to
// unit magnitude at `ref_omega`.
inline std::vector<Biquad> pack_sections(std::vector<cplx> poles, std::array<double, 3> num,
                                         std::array<double, 2> first_order_num, double ref_omega) {
    std::vector<Biquad> out;
    std::vector<double> reals;
    std::sort(poles.begin(), poles.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
    std::vector<bool> used(poles.size(), false);
    for (std::size_t i = 0; i < poles.size(); ++i) {
        if (used[i]) continue;
        const cplx p = poles[i];
        if (std::abs(p.imag()) < 1e-12) {
            reals.push_back(p.real());
            used[i] = true;
            continue;
        }
        if (p.imag() < 0) continue;  // handled with its partner
        used[i] = true;
        // Find the conjugate partner.
        std::size_t best = poles.size();
        double best_d = 1e300;
        for (std::size_t j = 0; j < poles.size(); ++j) {
            if (used[j] || poles[j].imag() >= 0) continue;
            const double d = std::abs(poles[j] - std::conj(p));
            if (d < best_d) best_d = d, best = j;
        }
        if (best == poles.size()) throw DesignError("unpaired complex pole in filter design");
        used[best] = true;
        Biquad s;
        s.b0 = num[0], s.b1 = num[1], s.b2 = num[2];
        s.a1 = -2.0 * p.real();
        s.a2 = std::norm(p);
        out.push_back(s);
    }
    for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
        Biquad s;
        s.b0 = num[0], s.b1 = num[1], s.b2 = num[2];
        s.a1 = -(reals[i] + reals[i + 1]);
        s.a2 = reals[i] * reals[i + 1];
        out.push_back(s);
    }
    if (reals.size() % 2 == 1) {
        Biquad s;
        s.b0 = first_order_num[0], s.b1 = first_order_num[1], s.b2 = 0.0;
        s.a1 = -reals.back();
        s.a2 = 0.0;
        out.push_back(s);
    }
    for (auto& s : out) {
        const double g = std::abs(s.response(ref_omega));
        if (!(g > 0.0) || !std::isfinite(g)) throw DesignError("degenerate section gain");
        s.b0 /= g, s.b1 /= g, s.b2 /= g;
    }
    return out;
}

inline void check_stable(const std::vector<cplx>& poles) {
    for (const auto& p : poles)
        if (!(std::abs(p) < 1.0 - 1e-6))
            throw DesignError("unstable or marginal design (pole radius " + std::to_string(std::abs(p)) +
                              "); cutoff too close to 0 or Nyquist");
}

}  // namespace detail

inline SosFilter design_filter(const FilterSpec& spec, double fs) {
    using detail::cplx;
    const double nyq = fs / 2.0;
    auto in_band = [&](double f) { return f > 0.0 && f < nyq; };
    const double pi = std::numbers::pi;

    if (spec.kind == FilterKind::notch) {
        if (!in_band(spec.low_hz)) throw DesignError("notch frequency outside (0, fs/2)");
        if (!(spec.q > 0.0)) throw DesignError("notch Q must be positive");
        const double w0 = 2.0 * pi * spec.low_hz / fs;
        const double alpha = std::sin(w0) / (2.0 * spec.q);
        const double a0 = 1.0 + alpha;
        Biquad s;
        s.b0 = 1.0 / a0;
        s.b1 = -2.0 * std::cos(w0) / a0;
        s.b2 = 1.0 / a0;
        s.a1 = -2.0 * std::cos(w0) / a0;
        s.a2 = (1.0 - alpha) / a0;
        const cplx disc = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2));
        detail::check_stable({(-s.a1 + disc) / 2.0, (-s.a1 - disc) / 2.0});
        return SosFilter({s}, 2);
    }

    const int n = spec.order;
    if (n < 1 || n > 16) throw DesignError("filter order must be in 1..16");
    const double fs2 = 2.0 * fs;
    auto warp = [&](double f) { return fs2 * std::tan(pi * f / fs); };

    // Analog Butterworth prototype, unit cutoff.
    std::vector<cplx> proto;
    for (int m = -n + 1; m < n; m += 2) proto.push_back(-std::exp(cplx(0.0, pi * m / (2.0 * n))));

    std::vector<cplx> analog;
    std::array<double, 3> num{};
    std::array<double, 2> num1{};
    double ref_omega = 0.0;

    switch (spec.kind) {
        case FilterKind::lowpass: {
            if (!in_band(spec.low_hz)) throw DesignError("lowpass cutoff outside (0, fs/2)");
            const double wc = warp(spec.low_hz);
            for (auto p : proto) analog.push_back(p * wc);
            num = {1.0, 2.0, 1.0};  // double zero at z = -1
            num1 = {1.0, 1.0};
            ref_omega = 0.0;
            break;
        }
        case FilterKind::highpass: {
            if (!in_band(spec.low_hz)) throw DesignError("highpass cutoff outside (0, fs/2)");
            const double wc = warp(spec.low_hz);
            for (auto p : proto) analog.push_back(wc / p);
            num = {1.0, -2.0, 1.0};  // double zero at z = +1
            num1 = {1.0, -1.0};
            ref_omega = pi;
            break;
        }
        case FilterKind::bandpass: {
            if (!in_band(spec.low_hz) || !in_band(spec.high_hz) || !(spec.low_hz < spec.high_hz))
                throw DesignError("bandpass edges must satisfy 0 < low < high < fs/2");
            const double w1 = warp(spec.low_hz), w2 = warp(spec.high_hz);
            const double bw = w2 - w1, wo = std::sqrt(w1 * w2);
            for (auto p : proto) {
                const cplx ps = p * (bw / 2.0);
                const cplx root = std::sqrt(ps * ps - wo * wo);
                analog.push_back(ps + root);
                analog.push_back(ps - root);
            }
            num = {1.0, 0.0, -1.0};  // zeros at z = +1 and z = -1
            num1 = {1.0, -1.0};
            ref_omega = 2.0 * std::atan(wo / fs2);
            break;
        }
        case FilterKind::notch: break;
    }

    std::vector<cplx> digital;
    digital.reserve(analog.size());
    for (auto s : analog) digital.push_back(detail::bilinear(s, fs2));
    detail::check_stable(digital);
    auto sections = detail::pack_sections(digital, num, num1, ref_omega);
    return SosFilter(std::move(sections), static_cast<int>(digital.size()));
}

// Forward-backward filtering with odd-reflection padding of 3x the filter order.
// The result is the mean of the forward-backward and backward-forward passes,
// which makes it commute exactly with time reversal.
class ZeroPhaseFilter {
public:
    ZeroPhaseFilter(const FilterSpec& spec, double fs) : spec_(spec), sos_(design_filter(spec, fs)) {}

    const SosFilter& sos() const noexcept { return sos_; }
    const FilterSpec& spec() const noexcept { return spec_; }
    std::size_t pad_length() const noexcept { return 3 * static_cast<std::size_t>(sos_.poles()); }

    std::vector<double> operator()(std::span<const double> x) const {
        const std::size_t n = x.size();
        if (n <= 3 * static_cast<std::size_t>(spec_.order))
            throw ArgumentError("signal of " + std::to_string(n) + " samples too short for order " +
                                std::to_string(spec_.order) + " zero-phase filtering");
        const std::size_t pad = std::min(pad_length(), n - 1);

        std::vector<double> fwd = forward_backward(x, pad);
        std::vector<double> rev(x.rbegin(), x.rend());
        std::vector<double> bwd = forward_backward(rev, pad);
        for (std::size_t i = 0; i < n; ++i) fwd[i] = 0.5 * (fwd[i] + bwd[n - 1 - i]);
        return fwd;
    }

private:
    std::vector<double> forward_backward(std::span<const double> x, std::size_t pad) const {
        const std::size_t n = x.size();
        std::vector<double> ext(n + 2 * pad);
        for (std::size_t i = 0; i < pad; ++i) {
            ext[i] = 2.0 * x[0] - x[pad - i];
            ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];
        }
        std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
        sos_.apply(ext, true);
        std::reverse(ext.begin(), ext.end());
        sos_.apply(ext, true);
        std::reverse(ext.begin(), ext.end());
        return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
                ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
    }

    FilterSpec spec_;
    SosFilter sos_;
};

inline std::vector<double> filter_zero_phase(std::span<const double> x, const FilterSpec& spec,
                                             double fs) {
    return ZeroPhaseFilter(spec, fs)(x);
}

}  // namespace semg
