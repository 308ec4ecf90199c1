#pragma once
// Streaming decoder: sliding-window inference over live frames and the
// cue-to-prediction response time of each online trial.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "semg/device.hpp"
#include "semg/errors.hpp"
#include "semg/features.hpp"
#include "semg/models.hpp"
#include "semg/preprocess.hpp"
#include "semg/synth.hpp"

namespace semg {

// Lock-free single-producer single-consumer queue.
template <typename T>
class SpscRing {
public:
    explicit SpscRing(std::size_t capacity) : slots_(capacity + 1) {
        if (capacity == 0) throw ArgumentError("ring capacity must be positive");
    }

    bool try_push(const T& v) {
        const auto tail = tail_.load(std::memory_order_relaxed);
        const auto next = (tail + 1) % slots_.size();
        if (next == head_.load(std::memory_order_acquire)) return false;
        slots_[tail] = v;
        tail_.store(next, std::memory_order_release);
        return true;
    }

    bool try_pop(T& out) {
        const auto head = head_.load(std::memory_order_relaxed);
        if (head == tail_.load(std::memory_order_acquire)) return false;
        out = slots_[head];
        head_.store((head + 1) % slots_.size(), std::memory_order_release);
        return true;
    }

    std::size_t capacity() const { return slots_.size() - 1; }

private:
    std::vector<T> slots_;
    alignas(64) std::atomic<std::size_t> head_{0};
    alignas(64) std::atomic<std::size_t> tail_{0};
};

// Per-window pipeline shared by the online path and its offline replay:
// filter the window on its own, extract features, predict.
class WindowDecoder {
public:
    WindowDecoder(const TrainedModel& model, double fs = kSampleRateHz) : model_(model), chain_(fs), fs_(fs) {
        if (model.feature_dim != static_cast<std::size_t>(kFeatureDim))
            throw ArgumentError("model feature dimension does not match the feature layout");
    }

    int operator()(const ChannelMatrix& window) const {
        const FeatureVector fv = extract_features(chain_(window), fs_);
        FeatureMatrix x(1, kFeatureDim);
        std::copy(fv.values.begin(), fv.values.end(), x.row(0).begin());
        return predict(model_, x)[0];
    }

private:
    const TrainedModel& model_;
    FilterChain chain_;
    double fs_;
};

struct OnlineConfig {
    double window_ms = 250.0;
    double step_ms = 250.0;
    double fs = kSampleRateHz;
    double reaction_const_s = 0.4;
    double underrun_timeout_s = 1.0;
    int rest_label = 1;
};

struct Cue {
    int mode_id = 0;
    std::size_t sample = 0;  // t0 on the sample clock
};

// When cues are issued and how a simulated wearer responds to them.
struct OnlineTiming {
    double lead_s = 2.0;   // rest before the first cue
    double onset_s = 0.4;  // simulated wearer's reaction
    double hold_s = 3.0;
    double gap_s = 2.0;    // rest after releasing, before the next cue
    double trial_s() const { return onset_s + hold_s + gap_s; }
};

struct OnlinePlan {
    std::vector<Cue> cues;
    OnlineTiming timing;
    double fs = kSampleRateHz;
    std::size_t total_samples = 0;

    std::size_t samples(double s) const { return static_cast<std::size_t>(std::llround(s * fs)); }
    std::size_t trial_end(std::size_t k) const {
        return k + 1 < cues.size() ? cues[k + 1].sample : cues[k].sample + samples(timing.trial_s());
    }
};

// Each trial cues one non-rest mode drawn uniformly from `modes`.
inline OnlinePlan make_online_plan(std::size_t n_trials, std::uint64_t seed, std::vector<int> modes = {2, 3, 4, 5, 6},
                                   OnlineTiming timing = {}, double fs = kSampleRateHz) {
    if (modes.empty()) throw ArgumentError("no modes to cue");
    for (int m : modes)
        if (m == 1 || ForceMode::from_id(m).is_rest()) throw ArgumentError("the rest mode cannot be cued");
    OnlinePlan p;
    p.timing = timing;
    p.fs = fs;
    std::mt19937_64 rng(derive_seed(seed, 0xC0E));
    std::uniform_int_distribution<std::size_t> pick(0, modes.size() - 1);
    std::size_t t = p.samples(timing.lead_s);
    for (std::size_t k = 0; k < n_trials; ++k) {
        p.cues.push_back({modes[pick(rng)], t});
        t += p.samples(timing.trial_s());
    }
    p.total_samples = t;
    return p;
}

// Synthetic wearer that follows a plan: at rest, switching to the cued mode
// `onset_s` after each cue (or never, when unresponsive).
class PlanSubject final : public SampleGenerator {
public:
    PlanSubject(SynthConfig cfg, int subject_id, OnlinePlan plan, int speed_kmh = 0, bool responsive = true,
                int wearing_shift = 0)
        : synth_(std::move(cfg)),
          wearer_(synth_.wearer(subject_id, wearing_shift)),
          plan_(std::move(plan)),
          speed_(speed_kmh),
          responsive_(responsive),
          seed_(derive_seed(synth_.config().seed, 0x0111E, subject_id)) {
        const std::size_t lead = plan_.cues.empty() ? plan_.total_samples : plan_.cues.front().sample;
        segments_.push_back({1, lead, 0});
        for (std::size_t k = 0; k < plan_.cues.size(); ++k) {
            const std::size_t onset = plan_.samples(plan_.timing.onset_s);
            const std::size_t hold = plan_.samples(plan_.timing.hold_s);
            const std::size_t len = plan_.trial_end(k) - plan_.cues[k].sample;
            const int mode = responsive_ ? plan_.cues[k].mode_id : 1;
            segments_.push_back({mode, std::min(len, onset + hold), onset});
            if (len > onset + hold) segments_.push_back({1, len - onset - hold, 0});
        }
    }

    void generate(std::vector<PhysicalSample>& out, std::size_t max_samples) override {
        out.clear();
        while (out.size() < max_samples && seg_ < segments_.size()) {
            if (pending_.empty() || pending_pos_ >= pending_.size()) {
                const auto& s = segments_[seg_];
                const auto sig = synth_.segment(wearer_, ForceMode::from_id(s.mode), speed_, s.length, s.active_from,
                                                derive_seed(seed_, seg_), produced_);
                pending_.clear();
                append_samples(pending_, sig);
                pending_pos_ = 0;
                produced_ += s.length;
            }
            while (out.size() < max_samples && pending_pos_ < pending_.size())
                out.push_back(pending_[pending_pos_++]);
            if (pending_pos_ >= pending_.size()) ++seg_;
        }
    }

    const OnlinePlan& plan() const { return plan_; }

private:
    struct Segment {
        int mode;
        std::size_t length;
        std::size_t active_from;
    };
    Synthesizer synth_;
    Wearer wearer_;
    OnlinePlan plan_;
    int speed_;
    bool responsive_;
    std::uint64_t seed_;
    std::vector<Segment> segments_;
    std::size_t seg_ = 0;
    std::vector<PhysicalSample> pending_;
    std::size_t pending_pos_ = 0;
    std::size_t produced_ = 0;
};

struct PredictionEvent {
    std::size_t sample_end = 0;  // window covers [sample_end - W, sample_end)
    double t_s = 0.0;
    int label = 0;
    double latency_ms = 0.0;  // wall-clock cost of filter + features + predict
};

struct OnlineTrialResult {
    int cued_mode = 0;
    int predicted_mode = 0;  // 0 when no non-rest prediction arrived
    double t0 = 0.0;
    double t3 = std::numeric_limits<double>::quiet_NaN();
    double reaction_const_s = 0.4;
    double delta_t_s = std::numeric_limits<double>::quiet_NaN();
    bool correct = false;
    bool completed = false;
    bool timed_out = false;
    bool miscalibrated = false;  // delta_t_s < 0
};

struct OnlineSummary {
    std::size_t trials = 0;
    std::size_t completed = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;  // correct / trials
    double mean_delta_t_s = std::numeric_limits<double>::quiet_NaN();
    double mean_latency_ms = 0.0;
    double max_latency_ms = 0.0;
    std::size_t steps = 0;
    bool aborted = false;
    std::string abort_reason;
    protocol::DecodeStats decode;
};

struct OnlineSessionResult {
    std::vector<OnlineTrialResult> trials;
    std::vector<PredictionEvent> predictions;
    OnlineSummary summary;
};

struct OnlineCallbacks {
    std::function<void(const PredictionEvent&)> on_prediction;
    std::function<void(const Cue&, std::size_t index)> on_cue;
    std::function<void(const OnlineTrialResult&, std::size_t index)> on_trial;
};

namespace detail {

// Scores cue windows as predictions arrive; predictions must come in order.
class TrialScorer {
public:
    TrialScorer(const OnlinePlan& plan, const OnlineConfig& cfg, const OnlineCallbacks& cb)
        : plan_(plan), cfg_(cfg), cb_(cb) {
        for (const auto& c : plan.cues) {
            OnlineTrialResult r;
            r.cued_mode = c.mode_id;
            r.t0 = static_cast<double>(c.sample) / cfg.fs;
            r.reaction_const_s = cfg.reaction_const_s;
            results_.push_back(r);
        }
    }

    // Advances the clock to `now` samples, closing trials whose window has passed.
    void advance(std::size_t now) {
        while (next_cue_ < plan_.cues.size() && plan_.cues[next_cue_].sample <= now) {
            if (cb_.on_cue) cb_.on_cue(plan_.cues[next_cue_], next_cue_);
            ++next_cue_;
        }
        while (open_ < plan_.cues.size() && plan_.trial_end(open_) <= now) close(open_++, true);
    }

    void observe(const PredictionEvent& ev) {
        advance(ev.sample_end - 1);
        if (open_ >= plan_.cues.size() || ev.label == cfg_.rest_label) return;
        const auto& cue = plan_.cues[open_];
        if (ev.sample_end <= cue.sample) return;
        auto& r = results_[open_];
        r.predicted_mode = ev.label;
        r.t3 = ev.t_s;
        r.delta_t_s = r.t3 - r.t0 - r.reaction_const_s;
        r.miscalibrated = r.delta_t_s < 0.0;
        r.correct = r.predicted_mode == r.cued_mode;
        r.completed = true;
        close(open_++, false);
    }

    void finish(std::size_t now) {
        advance(now);
        for (; open_ < plan_.cues.size(); ++open_) close(open_, plan_.trial_end(open_) <= now);
    }

    const std::vector<OnlineTrialResult>& results() const { return results_; }

private:
    void close(std::size_t k, bool timed_out) {
        if (!results_[k].completed) results_[k].timed_out = timed_out;
        if (cb_.on_trial) cb_.on_trial(results_[k], k);
    }

    const OnlinePlan& plan_;
    const OnlineConfig& cfg_;
    const OnlineCallbacks& cb_;
    std::vector<OnlineTrialResult> results_;
    std::size_t next_cue_ = 0;
    std::size_t open_ = 0;
};

inline OnlineSummary summarize(const std::vector<OnlineTrialResult>& trials, const std::vector<PredictionEvent>& preds) {
    OnlineSummary s;
    s.trials = trials.size();
    double dt = 0.0;
    for (const auto& t : trials) {
        if (!t.completed) continue;
        ++s.completed;
        s.correct += t.correct ? 1 : 0;
        dt += t.delta_t_s;
    }
    s.accuracy = s.trials ? static_cast<double>(s.correct) / static_cast<double>(s.trials) : 0.0;
    if (s.completed) s.mean_delta_t_s = dt / static_cast<double>(s.completed);
    s.steps = preds.size();
    for (const auto& p : preds) {
        s.mean_latency_ms += p.latency_ms;
        s.max_latency_ms = std::max(s.max_latency_ms, p.latency_ms);
    }
    if (!preds.empty()) s.mean_latency_ms /= static_cast<double>(preds.size());
    return s;
}

}  // namespace detail

// Runs the cue plan against a live byte stream. One thread decodes frames
// into an SPSC ring; the calling thread keeps the last window of samples and
// decodes it every step. A stream that stays silent longer than the underrun
// timeout aborts the session with the results gathered so far.
inline OnlineSessionResult run_online_session(ByteSource& stream, const TrainedModel& model, const OnlinePlan& plan,
                                              const OnlineConfig& cfg = {}, const OnlineCallbacks& cb = {},
                                              const std::atomic<bool>* cancel = nullptr) {
    const std::size_t W = ms_to_samples(cfg.window_ms, cfg.fs);
    const std::size_t step = ms_to_samples(cfg.step_ms, cfg.fs);
    const WindowDecoder decode(model, cfg.fs);

    SpscRing<PhysicalSample> ring(8192);
    std::atomic<bool> stop{false};
    std::atomic<bool> ingest_done{false};
    protocol::DecodeStats decode_stats;
    std::exception_ptr ingest_error;
    std::thread ingest([&] {
        try {
            FrameReader reader(stream);
            std::vector<PhysicalSample> batch;
            while (!stop.load()) {
                batch.clear();
                const bool more = reader.poll(batch);
                for (const auto& s : batch)
                    while (!ring.try_push(s)) {
                        if (stop.load()) break;
                        std::this_thread::yield();
                    }
                if (!more) break;
            }
            decode_stats = reader.stats();
        } catch (...) {
            ingest_error = std::current_exception();
        }
        ingest_done.store(true);
    });

    OnlineSessionResult result;
    detail::TrialScorer scorer(plan, cfg, cb);
    ChannelMatrix window(kEmgChannels, W);
    std::vector<std::array<double, kEmgChannels>> history(W);  // circular
    std::size_t n = 0;
    auto last_data = std::chrono::steady_clock::now();
    PhysicalSample s;
    while (n < plan.total_samples) {
        if (cancel && cancel->load()) {
            result.summary.aborted = true;
            result.summary.abort_reason = "cancelled";
            break;
        }
        if (!ring.try_pop(s)) {
            if (ingest_done.load() && !ring.try_pop(s)) {
                result.summary.aborted = true;
                result.summary.abort_reason = "stream ended before the plan finished";
                break;
            }
            if (!ingest_done.load()) {
                const auto idle = std::chrono::duration<double>(std::chrono::steady_clock::now() - last_data).count();
                if (idle > cfg.underrun_timeout_s) {
                    result.summary.aborted = true;
                    result.summary.abort_reason = "stream underrun";
                    break;
                }
                std::this_thread::sleep_for(std::chrono::microseconds(200));
                continue;
            }
        }
        last_data = std::chrono::steady_clock::now();
        history[n % W] = s.emg_uv;
        ++n;
        if (n >= W && n % step == 0) {
            const auto t_begin = std::chrono::steady_clock::now();
            for (std::size_t i = 0; i < W; ++i) {
                const auto& row = history[(n - W + i) % W];
                for (std::size_t c = 0; c < kEmgChannels; ++c) window(c, i) = row[c];
            }
            PredictionEvent ev;
            ev.label = decode(window);
            ev.latency_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_begin).count();
            ev.sample_end = n;
            ev.t_s = static_cast<double>(n) / cfg.fs;
            result.predictions.push_back(ev);
            if (cb.on_prediction) cb.on_prediction(ev);
            scorer.observe(ev);
        } else {
            scorer.advance(n);
        }
    }
    stop.store(true);
    stream.close();
    ingest.join();
    if (ingest_error) std::rethrow_exception(ingest_error);
    scorer.finish(n);
    result.trials = scorer.results();
    const bool aborted = result.summary.aborted;
    const std::string reason = result.summary.abort_reason;
    result.summary = detail::summarize(result.trials, result.predictions);
    result.summary.aborted = aborted;
    result.summary.abort_reason = reason;
    result.summary.decode = decode_stats;
    return result;
}

// Predictions at the same window ends the online path uses, computed
// directly from recorded samples.
inline std::vector<PredictionEvent> offline_window_predictions(const Recording& rec, const TrainedModel& model,
                                                               double window_ms, double step_ms) {
    const double fs = rec.meta.fs;
    const std::size_t W = ms_to_samples(window_ms, fs);
    const std::size_t step = ms_to_samples(step_ms, fs);
    const WindowDecoder decode(model, fs);
    std::vector<PredictionEvent> out;
    for (std::size_t end = step; end <= rec.rows(); end += step) {
        if (end < W) continue;
        PredictionEvent ev;
        ev.sample_end = end;
        ev.t_s = static_cast<double>(end) / fs;
        ev.label = decode(rec.emg(end - W, end));
        out.push_back(ev);
    }
    return out;
}

// Window predictions obtained by streaming a recording through the device
// framing and the online ingest path (no cues).
inline std::vector<PredictionEvent> replay_online_predictions(const Recording& rec, const TrainedModel& model,
                                                              double window_ms, double step_ms,
                                                              double rate_multiplier = 100.0) {
    DeviceStream stream(std::make_shared<RecordingGenerator>(rec), rate_multiplier, OverflowPolicy::block);
    OnlinePlan plan;
    plan.fs = rec.meta.fs;
    plan.total_samples = rec.rows();
    OnlineConfig cfg;
    cfg.window_ms = window_ms;
    cfg.step_ms = step_ms;
    cfg.fs = rec.meta.fs;
    auto res = run_online_session(stream, model, plan, cfg);
    if (res.summary.aborted) throw DataError("replay aborted: " + res.summary.abort_reason);
    return res.predictions;
}

// Simulated online session: a plan-following synthetic wearer streamed
// through the device framing.
struct SimulationOptions {
    int subject_id = 1;
    int speed_kmh = 0;
    bool responsive = true;
    double rate_multiplier = 0.0;  // 0 = unpaced
    OnlineTiming timing;
    std::vector<int> modes = {2, 3, 4, 5, 6};
};

inline OnlineSessionResult simulate_online_session(const SynthConfig& synth, const TrainedModel& model,
                                                   std::size_t n_trials, std::uint64_t seed,
                                                   const OnlineConfig& cfg = {}, const SimulationOptions& opt = {},
                                                   const OnlineCallbacks& cb = {}) {
    const OnlinePlan plan = make_online_plan(n_trials, seed, opt.modes, opt.timing, cfg.fs);
    auto subject = std::make_shared<PlanSubject>(synth, opt.subject_id, plan, opt.speed_kmh, opt.responsive);
    DeviceStream stream(subject, opt.rate_multiplier, OverflowPolicy::block);
    return run_online_session(stream, model, plan, cfg, cb);
}

// Trimmed mean of keypress latencies, dropping the top and bottom 10%.
inline double calibrate_reaction(std::vector<double> latencies_s) {
    if (latencies_s.size() < 10)
        throw CalibrationError("reaction calibration needs at least 10 samples, got " + std::to_string(latencies_s.size()));
    for (double v : latencies_s)
        if (!std::isfinite(v) || v < 0.0) throw CalibrationError("latencies must be finite and non-negative");
    std::sort(latencies_s.begin(), latencies_s.end());
    const std::size_t trim = latencies_s.size() / 10;
    double s = 0.0;
    for (std::size_t i = trim; i < latencies_s.size() - trim; ++i) s += latencies_s[i];
    return s / static_cast<double>(latencies_s.size() - 2 * trim);
}

}  // namespace semg
