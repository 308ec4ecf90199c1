#pragma once
// Synthetic wrist sEMG: per-finger spatial gain patterns driving band-limited
// Gaussian processes, plus speed-dependent low-frequency motion artifacts,
// a white noise floor and a gait-modulated accelerometer.

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "semg/errors.hpp"
#include "semg/filter.hpp"
#include "semg/matrix.hpp"
#include "semg/protocol.hpp"
#include "semg/recording.hpp"

namespace semg {

enum class Finger : int { thumb = 0, index = 1, middle = 2, ring = 3, little = 4 };
inline constexpr int kFingers = 5;

using FingerSet = std::bitset<kFingers>;

struct ForceMode {
    int id = 1;
    FingerSet fingers;

    bool is_rest() const { return fingers.none(); }

    static ForceMode from_id(int id) {
        // 1 rest, 2..6 single fingers, 7..12 fixed two-finger combinations.
        static constexpr std::array<std::array<int, 2>, 6> combos = {
            {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 2}, {1, 3}}};
        if (id < 1 || id > kForceModes) throw ArgumentError("force mode id must be 1..12, got " + std::to_string(id));
        ForceMode m{id, {}};
        if (id >= 2 && id <= 6) m.fingers.set(static_cast<std::size_t>(id - 2));
        if (id >= 7) {
            for (int f : combos[static_cast<std::size_t>(id - 7)]) m.fingers.set(static_cast<std::size_t>(f));
        }
        return m;
    }

    std::string label() const {
        static constexpr std::array<const char*, kFingers> names = {"thumb", "index", "middle", "ring", "little"};
        if (is_rest()) return "rest";
        std::string s;
        for (int f = 0; f < kFingers; ++f) {
            if (!fingers.test(static_cast<std::size_t>(f))) continue;
            if (!s.empty()) s += " + ";
            s += names[static_cast<std::size_t>(f)];
        }
        return s;
    }
};

using GainMatrix = std::array<std::array<double, kEmgChannels>, kFingers>;
using FingerBands = std::array<std::array<double, 2>, kFingers>;  // Hz, per finger

struct SynthConfig {
    std::uint64_t seed = 1;
    double fs = kSampleRateHz;
    GainMatrix gain_matrix{};
    double band_low_hz = 20.0;
    double band_high_hz = 150.0;
    // Spectral signature of each finger's muscles, inside the emg band.
    FingerBands finger_band_hz{{{20, 150}, {20, 150}, {20, 150}, {20, 150}, {20, 150}}};
    std::map<int, double> artifact_gain_per_speed;  // km/h -> artifact RMS, uV
    double intensity = 1.0;                         // 0..1
    double noise_floor_uv = 5.0;                    // white noise RMS per channel
    double artifact_cutoff_hz = 8.0;
    // Between-subject variability: log-normal per-entry jitter of the gain
    // matrix, an overall log-normal scale, and a random placement offset of up
    // to +-max_subject_offset channels.
    double subject_gain_log_sd = 0.35;
    double subject_scale_log_sd = 0.25;
    int max_subject_offset = 1;
    // Trial-to-trial force variability: log-normal factor per active finger.
    double trial_gain_log_sd = 0.0;
    // Electrode slip between trials: fractional channel rotation, N(0, sd).
    double placement_jitter_ch = 0.0;
    // Between-subject shift of each finger's band edges, N(0, sd) Hz.
    double subject_band_shift_hz = 0.0;
};

// Smooth circular spatial profile per finger with distinct peak channels.
inline GainMatrix default_gain_matrix(double peak_uv = 40.0, double width_ch = 0.9, double floor = 0.08) {
    GainMatrix g{};
    for (int f = 0; f < kFingers; ++f) {
        const double center = 1.6 * f;
        for (int c = 0; c < kEmgChannels; ++c) {
            double d = std::fabs(c - center);
            d = std::min(d, kEmgChannels - d);
            g[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)] =
                peak_uv * (floor + (1.0 - floor) * std::exp(-d * d / (2.0 * width_ch * width_ch)));
        }
    }
    return g;
}

inline SynthConfig default_synth_config() {
    SynthConfig cfg;
    cfg.gain_matrix = default_gain_matrix(22.0, 2.5);
    cfg.finger_band_hz = {{{20, 90}, {35, 110}, {50, 125}, {65, 140}, {80, 150}}};
    cfg.artifact_gain_per_speed = {{0, 1.0}, {4, 15.0}, {6, 25.0}, {8, 40.0}};
    cfg.max_subject_offset = 3;
    cfg.trial_gain_log_sd = 0.2;
    cfg.subject_band_shift_hz = 25.0;
    return cfg;
}

inline int argmax_channel(const std::array<double, kEmgChannels>& row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline void validate(const SynthConfig& cfg) {
    if (cfg.fs != kSampleRateHz) throw ConfigError("synth fs must be 500 Hz");
    if (!(cfg.intensity >= 0.0 && cfg.intensity <= 1.0)) throw ConfigError("intensity must be in [0, 1]");
    if (!(cfg.noise_floor_uv >= 0.0)) throw ConfigError("noise floor must be non-negative");
    if (!(cfg.band_low_hz > 0 && cfg.band_low_hz < cfg.band_high_hz && cfg.band_high_hz < cfg.fs / 2))
        throw ConfigError("emg band must satisfy 0 < low < high < fs/2");
    for (const auto& b : cfg.finger_band_hz)
        if (!(b[0] >= cfg.band_low_hz && b[0] < b[1] && b[1] <= cfg.band_high_hz))
            throw ConfigError("finger bands must lie inside the emg band");
    if (!(cfg.trial_gain_log_sd >= 0 && cfg.placement_jitter_ch >= 0 && cfg.subject_band_shift_hz >= 0 &&
          cfg.subject_gain_log_sd >= 0 && cfg.subject_scale_log_sd >= 0 && cfg.max_subject_offset >= 0))
        throw ConfigError("variability parameters must be non-negative");
    std::array<bool, kEmgChannels> taken{};
    for (const auto& row : cfg.gain_matrix) {
        for (double v : row)
            if (!(v >= 0.0)) throw ConfigError("gain matrix entries must be non-negative");
        const int a = argmax_channel(row);
        if (taken[static_cast<std::size_t>(a)]) throw ConfigError("gain rows must have distinct argmax channels");
        taken[static_cast<std::size_t>(a)] = true;
    }
    double prev = -1.0;
    for (int s : kSpeedsKmh) {
        auto it = cfg.artifact_gain_per_speed.find(s);
        if (it == cfg.artifact_gain_per_speed.end())
            throw ConfigError("artifact gain missing for speed " + std::to_string(s));
        if (!(it->second >= 0.0) || it->second < prev) throw ConfigError("artifact gain must be monotone in speed");
        prev = it->second;
    }
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    nlohmann::json art = nlohmann::json::object();
    for (const auto& [k, v] : c.artifact_gain_per_speed) art[std::to_string(k)] = v;
    j = {{"seed", c.seed},
         {"fs", c.fs},
         {"gain_matrix", c.gain_matrix},
         {"emg_band", {c.band_low_hz, c.band_high_hz}},
         {"artifact_gain_per_speed", art},
         {"intensity", c.intensity},
         {"noise_floor_uV", c.noise_floor_uv},
         {"artifact_cutoff_hz", c.artifact_cutoff_hz},
         {"subject_gain_log_sd", c.subject_gain_log_sd},
         {"subject_scale_log_sd", c.subject_scale_log_sd},
         {"max_subject_offset", c.max_subject_offset},
         {"trial_gain_log_sd", c.trial_gain_log_sd},
         {"placement_jitter_ch", c.placement_jitter_ch},
         {"finger_band_hz", c.finger_band_hz},
         {"subject_band_shift_hz", c.subject_band_shift_hz}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    c.seed = j.value("seed", c.seed);
    c.fs = j.value("fs", c.fs);
    if (j.contains("gain_matrix")) c.gain_matrix = j.at("gain_matrix").get<GainMatrix>();
    if (j.contains("emg_band")) {
        c.band_low_hz = j.at("emg_band").at(0).get<double>();
        c.band_high_hz = j.at("emg_band").at(1).get<double>();
    }
    if (j.contains("artifact_gain_per_speed")) {
        c.artifact_gain_per_speed.clear();
        for (const auto& [k, v] : j.at("artifact_gain_per_speed").items())
            c.artifact_gain_per_speed[std::stoi(k)] = v.get<double>();
    }
    c.intensity = j.value("intensity", c.intensity);
    c.noise_floor_uv = j.value("noise_floor_uV", c.noise_floor_uv);
    c.artifact_cutoff_hz = j.value("artifact_cutoff_hz", c.artifact_cutoff_hz);
    c.subject_gain_log_sd = j.value("subject_gain_log_sd", c.subject_gain_log_sd);
    c.subject_scale_log_sd = j.value("subject_scale_log_sd", c.subject_scale_log_sd);
    c.max_subject_offset = j.value("max_subject_offset", c.max_subject_offset);
    c.trial_gain_log_sd = j.value("trial_gain_log_sd", c.trial_gain_log_sd);
    c.placement_jitter_ch = j.value("placement_jitter_ch", c.placement_jitter_ch);
    if (j.contains("finger_band_hz")) c.finger_band_hz = j.at("finger_band_hz").get<FingerBands>();
    c.subject_band_shift_hz = j.value("subject_band_shift_hz", c.subject_band_shift_hz);
}

inline SynthConfig load_synth_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open synth config " + path);
    SynthConfig cfg = default_synth_config();
    try {
        nlohmann::json j;
        in >> j;
        from_json(j, cfg);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad synth config " + path + ": " + e.what());
    }
    validate(cfg);
    return cfg;
}

// Saturating force-to-amplitude curve.
inline double intensity_effect(double intensity) { return 1.0 - std::exp(-3.0 * intensity); }

// splitmix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) {
    std::uint64_t z = h ^ (v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

template <typename... Ts>
std::uint64_t derive_seed(std::uint64_t base, Ts... parts) {
    std::uint64_t h = mix_seed(0x5EED5EED5EED5EEDull, base);
    ((h = mix_seed(h, static_cast<std::uint64_t>(parts))), ...);
    return h;
}

// Column rotation: channel c moves to (c + shift) mod 8.
inline GainMatrix rotate_channels(const GainMatrix& g, int shift) {
    GainMatrix out{};
    const int s = ((shift % kEmgChannels) + kEmgChannels) % kEmgChannels;
    for (std::size_t f = 0; f < g.size(); ++f)
        for (int c = 0; c < kEmgChannels; ++c)
            out[f][static_cast<std::size_t>((c + s) % kEmgChannels)] = g[f][static_cast<std::size_t>(c)];
    return out;
}

// Rotation by a real number of channels, interpolating linearly between
// neighbouring columns.
inline GainMatrix rotate_channels_fractional(const GainMatrix& g, double shift) {
    const double k = std::floor(shift);
    const double a = shift - k;
    const GainMatrix lo = rotate_channels(g, static_cast<int>(k));
    if (a == 0.0) return lo;
    const GainMatrix hi = rotate_channels(g, static_cast<int>(k) + 1);
    GainMatrix out{};
    for (std::size_t f = 0; f < g.size(); ++f)
        for (std::size_t c = 0; c < kEmgChannels; ++c) out[f][c] = (1.0 - a) * lo[f][c] + a * hi[f][c];
    return out;
}

// Subject-specific gain matrix; depends only on (seed, subject_id).
inline GainMatrix subject_gain_matrix(const SynthConfig& cfg, int subject_id) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x5B, subject_id));
    std::normal_distribution<double> z;
    const double scale = std::exp(cfg.subject_scale_log_sd * z(rng));
    int offset = 0;
    if (cfg.max_subject_offset > 0) {
        std::uniform_int_distribution<int> off(-cfg.max_subject_offset, cfg.max_subject_offset);
        offset = off(rng);
    }
    GainMatrix g = rotate_channels(cfg.gain_matrix, offset);
    for (auto& row : g)
        for (double& v : row) v *= scale * std::exp(cfg.subject_gain_log_sd * z(rng));
    return g;
}

inline GainMatrix session_gain_matrix(const SynthConfig& cfg, int subject_id, int wearing_shift) {
    return rotate_channels(subject_gain_matrix(cfg, subject_id), wearing_shift);
}

// Subject-specific finger bands: edges shifted together, kept inside the
// emg band with at least 20 Hz of width.
inline FingerBands subject_finger_bands(const SynthConfig& cfg, int subject_id) {
    FingerBands b = cfg.finger_band_hz;
    if (cfg.subject_band_shift_hz == 0.0) return b;
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xBA, subject_id));
    std::normal_distribution<double> z;
    for (auto& band : b) {
        const double width = band[1] - band[0];
        double lo = band[0] + cfg.subject_band_shift_hz * z(rng);
        lo = std::clamp(lo, cfg.band_low_hz, cfg.band_high_hz - std::max(20.0, std::min(width, cfg.band_high_hz - cfg.band_low_hz)));
        band = {lo, std::min(cfg.band_high_hz, lo + std::max(width, 20.0))};
    }
    return b;
}

struct TrialSignal {
    ChannelMatrix emg;    // 8 x N, uV
    ChannelMatrix accel;  // 3 x N, g
};

namespace detail {

// Output variance of the forward-backward filter for unit white input:
// mean of |H|^4 over [0, pi].
inline double zero_phase_power_gain(const SosFilter& sos) {
    constexpr int kGrid = 16384;
    double acc = 0.0;
    for (int k = 0; k < kGrid; ++k) {
        const double f = (k + 0.5) / kGrid * 0.5;  // cycles/sample in (0, 0.5)
        const double m = std::norm(sos.response(f, 1.0));
        acc += m * m;
    }
    return acc / kGrid;
}

}  // namespace detail

// Unit-variance band-limited source per finger.
class FingerSources {
public:
    FingerSources(const FingerBands& bands, double fs) : bands_(bands) {
        for (const auto& b : bands) {
            filters_.emplace_back(FilterSpec::bandpass(b[0], b[1], 4), fs);
            scales_.push_back(1.0 / std::sqrt(detail::zero_phase_power_gain(filters_.back().sos())));
        }
    }
    std::vector<double> operator()(int finger, std::span<const double> white) const {
        auto y = filters_[static_cast<std::size_t>(finger)](white);
        for (double& v : y) v *= scales_[static_cast<std::size_t>(finger)];
        return y;
    }
    const FingerBands& bands() const { return bands_; }

private:
    FingerBands bands_;
    std::vector<ZeroPhaseFilter> filters_;
    std::vector<double> scales_;
};

// Everything subject- and placement-specific about the signal model.
struct Wearer {
    GainMatrix gains;
    std::shared_ptr<const FingerSources> sources;
};

class Synthesizer {
public:
    explicit Synthesizer(SynthConfig cfg)
        : cfg_((validate(cfg), std::move(cfg))),
          drift_(FilterSpec::lowpass(cfg_.artifact_cutoff_hz, 4), cfg_.fs),
          drift_scale_(1.0 / std::sqrt(detail::zero_phase_power_gain(drift_.sos()))),
          template_{cfg_.gain_matrix, std::make_shared<const FingerSources>(cfg_.finger_band_hz, cfg_.fs)} {}

    const SynthConfig& config() const noexcept { return cfg_; }

    double artifact_gain(int speed_kmh) const {
        auto it = cfg_.artifact_gain_per_speed.find(speed_kmh);
        if (it == cfg_.artifact_gain_per_speed.end() || !is_valid_speed(speed_kmh))
            throw ConfigError("unknown speed " + std::to_string(speed_kmh) + " km/h");
        return it->second;
    }

    // The configured gains and bands as they are.
    const Wearer& template_wearer() const { return template_; }

    Wearer wearer(int subject_id, int wearing_shift) const {
        if (wearing_shift < 0 || wearing_shift >= kEmgChannels) throw ArgumentError("wearing shift must be in 0..7");
        return {session_gain_matrix(cfg_, subject_id, wearing_shift),
                std::make_shared<const FingerSources>(subject_finger_bands(cfg_, subject_id), cfg_.fs)};
    }

    // This trial's electrode slip applied to the wearer's gains.
    Wearer trial_wearer(const Wearer& w, std::uint64_t trial_seed) const {
        if (cfg_.placement_jitter_ch == 0.0) return w;
        std::mt19937_64 rng(derive_seed(trial_seed, 0x511D));
        std::normal_distribution<double> z;
        return {rotate_channels_fractional(w.gains, cfg_.placement_jitter_ch * z(rng)), w.sources};
    }

    // Signal for `n` samples: rest until `active_from`, then `mode`.
    // `t_offset` is the absolute sample index of the first sample (gait phase).
    TrialSignal segment(const Wearer& w, const ForceMode& mode, int speed_kmh, std::size_t n,
                        std::size_t active_from, std::uint64_t seed, std::size_t t_offset = 0,
                        double intensity = -1.0) const {
        const double art = artifact_gain(speed_kmh);
        if (intensity < 0.0) intensity = cfg_.intensity;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z;
        TrialSignal out{ChannelMatrix(kEmgChannels, n), ChannelMatrix(kAccelChannels, n)};
        std::vector<double> white(n);

        for (int c = 0; c < kEmgChannels; ++c) {
            auto ch = out.emg.channel(static_cast<std::size_t>(c));
            for (double& v : ch) v = cfg_.noise_floor_uv * z(rng);
            if (art > 0.0 && n > 3 * 4) {
                for (double& v : white) v = z(rng);
                const auto drift = drift_(white);
                for (std::size_t i = 0; i < n; ++i) ch[i] += art * drift_scale_ * drift[i];
            }
        }

        const double effect = intensity_effect(intensity);
        const std::size_t active_n = active_from < n ? n - active_from : 0;
        if (!mode.is_rest() && active_n > 3 * 4) {
            std::vector<double> src(active_n);
            for (int f = 0; f < kFingers; ++f) {
                if (!mode.fingers.test(static_cast<std::size_t>(f))) continue;
                const double force = std::exp(cfg_.trial_gain_log_sd * z(rng));
                for (int c = 0; c < kEmgChannels; ++c) {
                    for (double& v : src) v = z(rng);
                    const double amp = force * effect * w.gains[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)];
                    if (amp == 0.0) continue;
                    const auto burst = (*w.sources)(f, src);
                    auto ch = out.emg.channel(static_cast<std::size_t>(c));
                    for (std::size_t i = 0; i < active_n; ++i) ch[active_from + i] += amp * burst[i];
                }
            }
        }

        // Accelerometer: gravity on z plus a gait oscillation whose frequency
        // and amplitude grow with speed.
        const double step_hz = 0.35 * speed_kmh;
        const double amp = 0.08 * speed_kmh;
        const double two_pi = 2.0 * std::numbers::pi;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(t_offset + i) / cfg_.fs;
            out.accel(0, i) = amp * std::sin(two_pi * step_hz * t) + 0.005 * z(rng);
            out.accel(1, i) = 0.5 * amp * std::sin(two_pi * 0.5 * step_hz * t + 1.0) + 0.005 * z(rng);
            out.accel(2, i) = 1.0 + amp * std::sin(two_pi * step_hz * t + 0.5) + 0.005 * z(rng);
        }
        return out;
    }

    // One scheduled trial of a session (rest then the cued mode).
    TrialSignal session_trial(const Wearer& w, int subject_id, int day_id, const BlockPlan& block,
                              const TrialPlan& trial, std::size_t first_row) const {
        const auto rest_n = static_cast<std::size_t>(std::llround(trial.rest_s * cfg_.fs));
        const auto total_n = static_cast<std::size_t>(std::llround(trial.duration_s() * cfg_.fs));
        const std::uint64_t seed = derive_seed(cfg_.seed, subject_id, day_id, block.block_id, trial.trial_id);
        return segment(trial_wearer(w, seed), ForceMode::from_id(trial.trial_id), block.speed_kmh, total_n, rest_n,
                       seed, first_row);
    }

    // A recording following `schedule` for one subject and day; values are
    // quantized to the converter grid as a recorder would store them.
    Recording session(int subject_id, int day_id, int wearing_shift, const Schedule& schedule) const {
        const Wearer w = wearer(subject_id, wearing_shift);
        Recording rec;
        rec.meta = {subject_id, day_id, cfg_.fs, "2000-01-0" + std::to_string(std::clamp(day_id, 1, 9)) + "T00:00:00Z"};
        rec.data.reserve(schedule.total_samples(cfg_.fs) * kRecordingChannels);
        std::size_t row = 0;
        for (const auto& block : schedule.blocks) {
            for (const auto& trial : block.trials) {
                const auto sig = session_trial(w, subject_id, day_id, block, trial, row);
                const auto rest_n = static_cast<std::size_t>(std::llround(trial.rest_s * cfg_.fs));
                append_rows(rec, sig, row, [&](std::size_t i) { return i < rest_n ? 0 : trial.trial_id; },
                            block.block_id, block.speed_kmh);
                row += sig.emg.samples();
            }
        }
        return rec;
    }

    // The whole duration in `mode`, using the configured gains and bands as is.
    TrialSignal trial(const ForceMode& mode, int speed_kmh, double duration_s, std::uint64_t stream = 0) const {
        if (!(duration_s > 0.0)) throw ArgumentError("trial duration must be positive");
        const auto n = static_cast<std::size_t>(std::llround(duration_s * cfg_.fs));
        return segment(template_, mode, speed_kmh, n, 0, derive_seed(cfg_.seed, 0x7121A1, stream));
    }

    template <typename TriggerAt>
    static void append_rows(Recording& rec, const TrialSignal& sig, std::size_t first_row, TriggerAt trigger_at,
                            int block, int speed) {
        const std::size_t n = sig.emg.samples();
        for (std::size_t i = 0; i < n; ++i) {
            protocol::PhysicalSample s;
            for (int c = 0; c < kEmgChannels; ++c) s.emg_uv[static_cast<std::size_t>(c)] = sig.emg(static_cast<std::size_t>(c), i);
            for (int c = 0; c < kAccelChannels; ++c) s.accel_g[static_cast<std::size_t>(c)] = sig.accel(static_cast<std::size_t>(c), i);
            const auto q = protocol::quantize(s);
            rec.data.insert(rec.data.end(), q.emg_uv.begin(), q.emg_uv.end());
            rec.data.insert(rec.data.end(), q.accel_g.begin(), q.accel_g.end());
            rec.data.push_back(2.0 * static_cast<double>(first_row + i));
            rec.data.push_back(static_cast<double>(trigger_at(i)));
            rec.data.push_back(static_cast<double>(block));
            rec.data.push_back(static_cast<double>(speed));
        }
    }

private:
    SynthConfig cfg_;
    ZeroPhaseFilter drift_;
    double drift_scale_;
    Wearer template_;
};

inline TrialSignal synth_trial(const SynthConfig& cfg, const ForceMode& mode, int speed_kmh, double duration_s,
                               std::uint64_t stream = 0) {
    return Synthesizer(cfg).trial(mode, speed_kmh, duration_s, stream);
}

inline Recording synth_session(const SynthConfig& cfg, int subject_id, int day_id, int wearing_shift,
                               const Schedule& schedule = paradigm_schedule()) {
    return Synthesizer(cfg).session(subject_id, day_id, wearing_shift, schedule);
}

}  // namespace semg
