#pragma once
// Segmentation, baseline correction, the standard filter chain and
// train/test split preparation.

#include <algorithm>
#include <cctype>
#include <string_view>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semg/errors.hpp"
#include "semg/filter.hpp"
#include "semg/matrix.hpp"
#include "semg/recording.hpp"

namespace semg {

// Window length in samples; the duration must map onto a whole number of samples.
inline std::size_t ms_to_samples(double ms, double fs) {
    const double n = ms * fs / 1000.0;
    if (!(n > 0.0) || std::fabs(n - std::round(n)) > 1e-9)
        throw ArgumentError(std::to_string(ms) + " ms is not a whole number of samples at " + std::to_string(fs) + " Hz");
    return static_cast<std::size_t>(std::llround(n));
}

// Start offsets 0, step, 2*step, ... with the last start <= n - w.
inline std::vector<std::size_t> segment_starts(std::size_t n, std::size_t w, std::size_t step) {
    if (step == 0) throw ArgumentError("segmentation step must be positive");
    std::vector<std::size_t> starts;
    if (w == 0 || n < w) return starts;
    for (std::size_t s = 0; s + w <= n; s += step) starts.push_back(s);
    return starts;
}

inline std::vector<ChannelMatrix> segment_windows(const ChannelMatrix& trial, double window_ms, double step_ms,
                                                  double fs = kSampleRateHz) {
    if (!(step_ms > 0.0)) throw ArgumentError("segmentation step must be positive");
    const std::size_t w = ms_to_samples(window_ms, fs);
    const std::size_t step = ms_to_samples(step_ms, fs);
    std::vector<ChannelMatrix> out;
    for (std::size_t s : segment_starts(trial.samples(), w, step)) out.push_back(trial.slice(s, w));
    return out;
}

// Subtracts, per channel, the mean of the first `baseline_len` samples.
inline ChannelMatrix baseline_correct(ChannelMatrix trial, std::size_t baseline_len) {
    if (baseline_len == 0) throw ArgumentError("baseline length must be positive");
    if (baseline_len > trial.samples())
        throw ArgumentError("baseline length " + std::to_string(baseline_len) + " exceeds trial length " +
                            std::to_string(trial.samples()));
    for (std::size_t c = 0; c < trial.channels(); ++c) {
        auto ch = trial.channel(c);
        const double mean = std::accumulate(ch.begin(), ch.begin() + static_cast<std::ptrdiff_t>(baseline_len), 0.0) /
                            static_cast<double>(baseline_len);
        for (double& v : ch) v -= mean;
    }
    return trial;
}

// Bandpass 20-150 Hz (order 4) followed by a 50 Hz notch (Q 30), both zero-phase.
class FilterChain {
public:
    explicit FilterChain(double fs = kSampleRateHz)
        : bandpass_(FilterSpec::bandpass(20.0, 150.0, 4), fs), notch_(FilterSpec::notch(50.0, 30.0), fs) {}

    std::vector<double> operator()(std::span<const double> x) const { return notch_(bandpass_(x)); }

    ChannelMatrix operator()(const ChannelMatrix& m) const {
        ChannelMatrix out(m.channels(), m.samples());
        for (std::size_t c = 0; c < m.channels(); ++c) {
            const auto y = (*this)(m.channel(c));
            std::copy(y.begin(), y.end(), out.channel(c).begin());
        }
        return out;
    }

private:
    ZeroPhaseFilter bandpass_;
    ZeroPhaseFilter notch_;
};

// Standard offline chain for one extracted trial: filter the rest+active
// span, baseline-correct on the rest slice, return the active slice.
inline ChannelMatrix preprocess_trial(const Recording& rec, const TrialEntry& trial, const FilterChain& chain) {
    if (trial.baseline.end != trial.active.begin)
        throw ArgumentError("baseline must immediately precede the active run");
    const ChannelMatrix raw = rec.emg(trial.baseline.begin, trial.active.end);
    ChannelMatrix filtered = baseline_correct(chain(raw), trial.baseline.size());
    return filtered.slice(trial.baseline.size(), trial.active.size());
}

// ---------------------------------------------------------------------------
// Windows and splits

struct WindowInfo {
    int label = 0;
    int block = 0;
    int speed_kmh = 0;
    int subject_id = 0;
    int day_id = 0;
    double t_start_ms = 0.0;

    friend bool operator==(const WindowInfo&, const WindowInfo&) = default;
};

struct Window {
    ChannelMatrix samples;  // 8 x W, uV
    WindowInfo info;
};

enum class SplitKind { single_day, cross_day, cross_subject };

inline const char* to_string(SplitKind k) {
    switch (k) {
        case SplitKind::single_day: return "SD";
        case SplitKind::cross_day: return "CD";
        case SplitKind::cross_subject: return "CS";
    }
    return "?";
}

inline SplitKind parse_split_kind(std::string_view s) {
    std::string l(s);
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "sd" || l == "single_day") return SplitKind::single_day;
    if (l == "cd" || l == "cross_day") return SplitKind::cross_day;
    if (l == "cs" || l == "cross_subject") return SplitKind::cross_subject;
    throw ArgumentError("unknown split type '" + std::string(s) + "'");
}

struct SplitSpec {
    SplitKind kind = SplitKind::single_day;
    int subject_id = 1;  // the subject (SD, CD) or the held-out subject (CS)
    int day_id = 1;      // SD; for CS the day both sides are drawn from (0 = every day)
    int train_day = 1;   // CD only
    int test_day = 2;    // CD only
    int last_train_block = 8;  // SD only
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

inline bool window_order(const WindowInfo& a, const WindowInfo& b) {
    return std::tie(a.subject_id, a.day_id, a.block, a.t_start_ms, a.label) <
           std::tie(b.subject_id, b.day_id, b.block, b.t_start_ms, b.label);
}

// Indices of train and test windows, each sorted by (subject, day, block, t_start).
inline SplitIndices split_indices(std::span<const WindowInfo> infos, const SplitSpec& spec) {
    if (infos.empty()) throw ArgumentError("cannot split an empty dataset");
    SplitIndices out;
    for (std::size_t i = 0; i < infos.size(); ++i) {
        const auto& w = infos[i];
        switch (spec.kind) {
            case SplitKind::single_day:
                if (w.subject_id != spec.subject_id || w.day_id != spec.day_id) break;
                (w.block <= spec.last_train_block ? out.train : out.test).push_back(i);
                break;
            case SplitKind::cross_day:
                if (w.subject_id != spec.subject_id) break;
                if (w.day_id == spec.train_day) out.train.push_back(i);
                else if (w.day_id == spec.test_day) out.test.push_back(i);
                break;
            case SplitKind::cross_subject:
                if (spec.day_id != 0 && w.day_id != spec.day_id) break;
                (w.subject_id == spec.subject_id ? out.test : out.train).push_back(i);
                break;
        }
    }
    if (out.train.empty() || out.test.empty())
        throw EmptySplitError(std::string(to_string(spec.kind)) + " split for subject " +
                              std::to_string(spec.subject_id) + " has an empty " +
                              (out.train.empty() ? "train" : "test") + " side");
    auto by_order = [&](std::size_t a, std::size_t b) { return window_order(infos[a], infos[b]); };
    std::stable_sort(out.train.begin(), out.train.end(), by_order);
    std::stable_sort(out.test.begin(), out.test.end(), by_order);
    return out;
}

inline std::pair<std::vector<Window>, std::vector<Window>> make_split(const std::vector<Window>& dataset,
                                                                      const SplitSpec& spec) {
    std::vector<WindowInfo> infos;
    infos.reserve(dataset.size());
    for (const auto& w : dataset) infos.push_back(w.info);
    const auto idx = split_indices(infos, spec);
    std::pair<std::vector<Window>, std::vector<Window>> out;
    for (auto i : idx.train) out.first.push_back(dataset[i]);
    for (auto i : idx.test) out.second.push_back(dataset[i]);
    return out;
}

// Audit record of a split: which (subject, day, block) groups landed on each side.
inline nlohmann::json split_manifest(std::span<const WindowInfo> infos, const SplitSpec& spec,
                                     const SplitIndices& idx) {
    auto side = [&](const std::vector<std::size_t>& ids) {
        std::map<std::tuple<int, int, int>, std::size_t> groups;
        for (auto i : ids) ++groups[{infos[i].subject_id, infos[i].day_id, infos[i].block}];
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [k, n] : groups)
            arr.push_back({{"subject", std::get<0>(k)}, {"day", std::get<1>(k)}, {"block", std::get<2>(k)}, {"windows", n}});
        return arr;
    };
    return {{"kind", to_string(spec.kind)},
            {"subject_id", spec.subject_id},
            {"day_id", spec.day_id},
            {"train_windows", idx.train.size()},
            {"test_windows", idx.test.size()},
            {"train", side(idx.train)},
            {"test", side(idx.test)}};
}

// 6-class task = modes 1..6, 12-class task = modes 1..12.
inline bool in_task(int label, int classes) { return label >= 1 && label <= classes; }

}  // namespace semg
