#pragma once
// Per-window time/frequency features.
//
// Layout (part of the saved-model contract): for each of the 8 channels in
// order, 7 values
//   [MAV, RMS, MNF, P(20-60 Hz), P(60-100 Hz), P(100-150 Hz), P(150-250 Hz)]
// Band powers integrate the one-sided Hann periodogram; the top band includes
// the Nyquist bin.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "semg/matrix.hpp"
#include "semg/preprocess.hpp"
#include "semg/spectral.hpp"

namespace semg {

inline constexpr int kFeaturesPerChannel = 7;
inline constexpr int kFeatureDim = kEmgChannels * kFeaturesPerChannel;
inline constexpr std::string_view kFeatureLayoutTag =
    "semg-features/v1:ch8x[mav,rms,mnf,bp20_60,bp60_100,bp100_150,bp150_250]";

struct FeatureVector {
    std::array<double, kFeatureDim> values{};

    double& at(int channel, int feature) {
        return values[static_cast<std::size_t>(channel * kFeaturesPerChannel + feature)];
    }
    double at(int channel, int feature) const {
        return values[static_cast<std::size_t>(channel * kFeaturesPerChannel + feature)];
    }
};

namespace feat {
inline constexpr int mav = 0;
inline constexpr int rms = 1;
inline constexpr int mnf = 2;
inline constexpr int bp_20_60 = 3;
inline constexpr int bp_60_100 = 4;
inline constexpr int bp_100_150 = 5;
inline constexpr int bp_150_250 = 6;
}  // namespace feat

// Mean frequency; 0 for a spectrum with no power.
inline double mean_frequency(const PsdEstimate& p) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < p.power.size(); ++k) {
        num += p.freqs_hz[k] * p.power[k];
        den += p.power[k];
    }
    return den > 0.0 ? num / den : 0.0;
}

inline void channel_features(std::span<const double> x, double fs, double* out) {
    double abs_sum = 0.0, sq_sum = 0.0;
    for (double v : x) {
        abs_sum += std::fabs(v);
        sq_sum += v * v;
    }
    const auto n = static_cast<double>(x.size());
    out[feat::mav] = abs_sum / n;
    out[feat::rms] = std::sqrt(sq_sum / n);
    const PsdEstimate p = psd(x, fs);
    out[feat::mnf] = mean_frequency(p);
    out[feat::bp_20_60] = p.band_power(20.0, 60.0);
    out[feat::bp_60_100] = p.band_power(60.0, 100.0);
    out[feat::bp_100_150] = p.band_power(100.0, 150.0);
    out[feat::bp_150_250] = p.band_power(150.0, 250.0, true);
}

inline FeatureVector extract_features(const ChannelMatrix& w, double fs = kSampleRateHz) {
    FeatureVector fv;
    const std::size_t channels = std::min<std::size_t>(w.channels(), kEmgChannels);
    for (std::size_t c = 0; c < channels; ++c)
        channel_features(w.channel(c), fs, fv.values.data() + c * kFeaturesPerChannel);
    return fv;
}

inline FeatureVector extract_features(const Window& w, double fs = kSampleRateHz) {
    return extract_features(w.samples, fs);
}

}  // namespace semg
