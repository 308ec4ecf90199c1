#pragma once
// Signal-quality metrics: SNR, signal-to-motion-artifact ratio and spectral
// deformation, plus the per-mode report over subjects.

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "semg/errors.hpp"
#include "semg/matrix.hpp"
#include "semg/preprocess.hpp"
#include "semg/recording.hpp"
#include "semg/spectral.hpp"

namespace semg {

inline constexpr std::size_t kMinQualityLength = 512;
inline constexpr double kArtifactBandHz = 20.0;

inline double pooled_rms(const ChannelMatrix& m) {
    double s = 0.0;
    for (double v : m.raw()) s += v * v;
    return m.raw().empty() ? 0.0 : std::sqrt(s / static_cast<double>(m.raw().size()));
}

inline double snr_db(const ChannelMatrix& active, const ChannelMatrix& rest) {
    if (active.empty() || rest.empty()) throw ArgumentError("snr needs non-empty active and rest segments");
    const double r = pooled_rms(rest);
    if (!(r > 0.0)) throw DegenerateInputError("rest segment has zero RMS");
    return 20.0 * std::log10(pooled_rms(active) / r);
}

struct SmrResult {
    double db = 0.0;
    bool clean = false;  // no low-frequency excess; value is the guard cap
};

// Excess of the raw spectrum over its level at 20 Hz, summed over 0..20 Hz.
inline double aboveline_power(const PsdEstimate& raw) {
    std::size_t ref = 0;
    for (std::size_t k = 0; k < raw.freqs_hz.size(); ++k)
        if (std::fabs(raw.freqs_hz[k] - kArtifactBandHz) < std::fabs(raw.freqs_hz[ref] - kArtifactBandHz)) ref = k;
    const double level = raw.power[ref];
    double s = 0.0;
    for (std::size_t k = 0; k < raw.power.size() && raw.freqs_hz[k] <= kArtifactBandHz; ++k)
        s += std::max(raw.power[k] - level, 0.0);
    return s;
}

inline SmrResult smr(const ChannelMatrix& raw, const ChannelMatrix& filtered, double fs = kSampleRateHz) {
    if (raw.channels() != filtered.channels() || raw.samples() != filtered.samples())
        throw ArgumentError("raw and filtered segments differ in shape");
    if (raw.samples() < kMinQualityLength)
        throw ArgumentError("smr needs at least " + std::to_string(kMinQualityLength) + " samples");
    double signal = 0.0, artifact = 0.0;
    for (std::size_t c = 0; c < raw.channels(); ++c) {
        const auto pf = psd(filtered.channel(c), fs);
        for (double p : pf.power) signal += p;
        artifact += aboveline_power(psd(raw.channel(c), fs));
    }
    const double eps = 1e-12 * signal;
    if (!(artifact > eps)) {
        if (!(signal > 0.0)) throw DegenerateInputError("filtered segment has no power");
        return {10.0 * std::log10(signal / eps), true};
    }
    return {10.0 * std::log10(signal / artifact), false};
}

inline double omega_db(std::span<const double> x, double fs = kSampleRateHz) {
    if (x.size() < kMinQualityLength)
        throw ArgumentError("omega needs at least " + std::to_string(kMinQualityLength) + " samples");
    const auto p = psd(x, fs);
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < p.power.size(); ++k) {
        const double f = p.freqs_hz[k];
        m0 += p.power[k];
        m1 += p.power[k] * f;
        m2 += p.power[k] * f * f;
    }
    if (!(m0 > 0.0) || !(m1 > 0.0)) throw DegenerateInputError("omega of a signal with no spectral power");
    return 10.0 * std::log10(std::sqrt(m2 / m0) / (m1 / m0));
}

// Channel-averaged omega.
inline double omega_db(const ChannelMatrix& x, double fs = kSampleRateHz) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.channels(); ++c) s += omega_db(x.channel(c), fs);
    return s / static_cast<double>(x.channels());
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample (n - 1) deviation; 0 for a single value
    std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
    MeanStd r;
    r.n = v.size();
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        for (double x : v) r.std += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(r.std / static_cast<double>(v.size() - 1));
    }
    return r;
}

struct SubjectQuality {
    int subject_id = 0;
    int mode_id = 0;
    double snr_db = 0.0;
    double smr_db = 0.0;
    double omega_db = 0.0;
    std::size_t clean_trials = 0;
};

struct QualityRow {
    int mode_id = 0;
    MeanStd snr, smr, omega;
    std::size_t clean_trials = 0;
};

struct QualityReport {
    std::vector<SubjectQuality> per_subject;
    std::vector<QualityRow> rows;  // mode 1..12

    std::string to_csv() const {
        auto cell = [](const MeanStd& m) {
            std::ostringstream s;
            s << std::fixed << std::setprecision(1) << m.mean << " (" << m.std << ")";
            return s.str();
        };
        std::ostringstream os;
        os << "mode,SNR,SMR,Omega\n";
        for (const auto& r : rows) os << r.mode_id << ",\"" << cell(r.snr) << "\",\"" << cell(r.smr) << "\",\"" << cell(r.omega) << "\"\n";
        return os.str();
    }
};

// Per-subject mode averages over all trials of the given recordings. The
// rest reference for SNR is the mode-1 trial of the same block.
inline std::vector<SubjectQuality> subject_quality(const Recording& rec, const FilterChain& chain = FilterChain{}) {
    const auto ex = extract_trials(rec);
    struct Acc {
        double snr = 0, smr = 0, omega = 0;
        std::size_t n = 0, clean = 0;
    };
    std::map<int, ChannelMatrix> rest_by_block;
    std::vector<std::pair<const TrialEntry*, ChannelMatrix>> filtered;
    for (const auto& t : ex.trials) {
        filtered.emplace_back(&t, preprocess_trial(rec, t, chain));
        if (t.trial_id == 1) rest_by_block[t.block] = filtered.back().second;
    }
    std::map<int, Acc> acc;
    for (const auto& [t, f] : filtered) {
        auto it = rest_by_block.find(t->block);
        if (it == rest_by_block.end()) continue;
        const auto raw = rec.emg(t->active.begin, t->active.end);
        const auto s = smr(raw, f, rec.meta.fs);
        auto& a = acc[t->trial_id];
        a.snr += snr_db(f, it->second);
        a.smr += s.db;
        a.omega += omega_db(f, rec.meta.fs);
        a.clean += s.clean ? 1 : 0;
        ++a.n;
    }
    std::vector<SubjectQuality> out;
    for (const auto& [mode, a] : acc) {
        const double n = static_cast<double>(a.n);
        out.push_back({rec.meta.subject_id, mode, a.snr / n, a.smr / n, a.omega / n, a.clean});
    }
    return out;
}

inline QualityReport aggregate_quality(std::vector<SubjectQuality> per_subject) {
    QualityReport rep;
    std::map<int, std::vector<const SubjectQuality*>> by_mode;
    for (const auto& q : per_subject) by_mode[q.mode_id].push_back(&q);
    for (const auto& [mode, qs] : by_mode) {
        std::vector<double> a, b, c;
        QualityRow row;
        row.mode_id = mode;
        for (const auto* q : qs) {
            a.push_back(q->snr_db);
            b.push_back(q->smr_db);
            c.push_back(q->omega_db);
            row.clean_trials += q->clean_trials;
        }
        row.snr = mean_std(a);
        row.smr = mean_std(b);
        row.omega = mean_std(c);
        rep.rows.push_back(row);
    }
    rep.per_subject = std::move(per_subject);
    return rep;
}

}  // namespace semg
