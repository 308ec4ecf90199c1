#pragma once
// Host backend: session state machine, live message stream and HTTP control.
//
// HTTP (JSON bodies, JSON replies; 400 bad input, 409 illegal transition):
//   GET  /status            current SessionStatus
//   POST /session/start     {subject_id, day_id, wearing_shift?, trials? | schedule?}
//   POST /session/stop      -> status; a running recording is written up to now
//   POST /params            {window_ms?, step_ms?, model?, reaction_const_s?}
//   POST /online/start      {n_trials, seed?, subject_id?, speed_kmh?}
//   POST /reaction/start    {n}
//   POST /reaction/submit   {latencies_s: [...]}
//   GET  /stream            newline-delimited JSON messages, chunked
//
// Every stream message has {seq, t_ms, type}. Types and their fields:
//   display       emg[8] uV, accel[3] g, trigger, block, speed  (mean of 10 samples)
//   prompt        mode_id, text, progress, block, trial, speed
//   progress      mode_id, progress, block, trial
//   trigger       trigger, block, speed
//   phase         phase
//   session_end   path, rows, complete
//   cue           index, mode_id, text, sample
//   prediction    label, t_s, sample_end, latency_ms
//   trial_result  index, cued_mode, predicted_mode, t0, t3, delta_t_s, correct, completed, timed_out
//   online_end    accuracy, mean_delta_t_s, completed, trials, aborted, abort_reason, mean_latency_ms, max_latency_ms
//   reaction_start n
//   reaction_done reaction_const_s, samples
//   drops         dropped (display messages this client has missed so far)
//   error         message
// Only display messages are ever dropped for a slow client.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include <json.hpp>

#include "semg/device.hpp"
#include "semg/models.hpp"
#include "semg/online.hpp"
#include "semg/recording.hpp"
#include "semg/synth.hpp"
#include "semg/net.hpp"
// last: it pulls in <resolv.h>, whose `_res` macro breaks Eigen
#include <httplib.h>

namespace semg {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = "data";
    double rate_multiplier = 1.0;       // device pacing; 0 = as fast as possible
    std::size_t client_queue = 2048;    // display messages buffered per client
    std::string device;                 // "host:port" of a device listener; empty = built-in synthetic wearer
    SynthConfig synth = default_synth_config();
};

inline ServiceConfig service_config_from_json(const nlohmann::json& j) {
    ServiceConfig c;
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.rate_multiplier = j.value("rate_multiplier", c.rate_multiplier);
    c.client_queue = j.value("client_queue", c.client_queue);
    c.device = j.value("device", c.device);
    if (j.contains("synth")) from_json(j.at("synth"), c.synth);
    if (c.port < 0 || c.port > 65535) throw ConfigError("port must be 0..65535");
    if (!(c.rate_multiplier >= 0.0)) throw ConfigError("rate_multiplier must be non-negative");
    if (c.client_queue == 0) throw ConfigError("client_queue must be positive");
    return c;
}

// SEMG_PORT and SEMG_DATA_DIR take precedence over the file.
inline void apply_env_overrides(ServiceConfig& c) {
    if (const char* p = std::getenv("SEMG_PORT"); p && *p) {
        try {
            c.port = std::stoi(p);
        } catch (const std::exception&) {
            throw ConfigError(std::string("SEMG_PORT is not a number: ") + p);
        }
        if (c.port < 0 || c.port > 65535) throw ConfigError("SEMG_PORT must be 0..65535");
    }
    if (const char* d = std::getenv("SEMG_DATA_DIR"); d && *d) c.data_dir = d;
}

inline ServiceConfig load_service_config(const std::optional<std::filesystem::path>& path) {
    ServiceConfig c;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot open config " + path->string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + path->string() + ": " + e.what());
        }
        c = service_config_from_json(j);
    }
    apply_env_overrides(c);
    return c;
}

// ---------------------------------------------------------------------------
// Stream fan-out

enum class Plane { control, display };

class Subscription {
public:
    explicit Subscription(std::size_t display_capacity) : capacity_(display_capacity) {}

    // Next message, or nullopt after `timeout` or once closed and drained.
    std::optional<std::string> next(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return std::nullopt;
        auto [plane, msg] = std::move(q_.front());
        q_.pop_front();
        if (plane == Plane::display) --display_queued_;
        return std::move(msg);
    }

    bool closed() const {
        std::lock_guard lock(mu_);
        return closed_ && q_.empty();
    }
    std::uint64_t dropped() const {
        std::lock_guard lock(mu_);
        return dropped_;
    }

private:
    friend class StreamHub;

    // Returns true when the message was dropped.
    bool push(Plane plane, const std::string& msg, const std::function<std::string(std::uint64_t)>& drop_report) {
        {
            std::lock_guard lock(mu_);
            if (closed_) return false;
            if (plane == Plane::display) {
                if (display_queued_ >= capacity_) {
                    ++dropped_;
                    report_pending_ = true;
                    return true;
                }
                if (report_pending_) {
                    q_.emplace_back(Plane::control, drop_report(dropped_));
                    report_pending_ = false;
                }
                ++display_queued_;
            }
            q_.emplace_back(plane, msg);
        }
        cv_.notify_one();
        return false;
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::pair<Plane, std::string>> q_;
    std::size_t capacity_;
    std::size_t display_queued_ = 0;
    std::uint64_t dropped_ = 0;
    bool report_pending_ = false;
    bool closed_ = false;
};

class StreamHub {
public:
    explicit StreamHub(std::size_t display_capacity = 2048)
        : capacity_(display_capacity), start_(std::chrono::steady_clock::now()) {}

    std::shared_ptr<Subscription> subscribe() {
        auto s = std::make_shared<Subscription>(capacity_);
        std::lock_guard lock(mu_);
        if (closed_) s->close();
        subs_.insert(s);
        return s;
    }

    void unsubscribe(const std::shared_ptr<Subscription>& s) {
        std::lock_guard lock(mu_);
        subs_.erase(s);
    }

    // Stamps seq/t_ms/type onto `fields` and fans it out.
    void publish(const std::string& type, nlohmann::json fields, Plane plane = Plane::control) {
        std::lock_guard lock(mu_);
        fields["seq"] = seq_++;
        fields["t_ms"] = now_ms();
        fields["type"] = type;
        const std::string msg = fields.dump();
        const auto report = [this](std::uint64_t n) {
            return nlohmann::json{{"seq", seq_++}, {"t_ms", now_ms()}, {"type", "drops"}, {"dropped", n}}.dump();
        };
        for (const auto& s : subs_)
            if (s->push(plane, msg, report)) ++dropped_;
    }

    void close_all() {
        std::lock_guard lock(mu_);
        closed_ = true;
        for (const auto& s : subs_) s->close();
    }

    std::size_t subscribers() const {
        std::lock_guard lock(mu_);
        return subs_.size();
    }
    std::uint64_t dropped() const {
        std::lock_guard lock(mu_);
        return dropped_;
    }

private:
    double now_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

    mutable std::mutex mu_;
    std::set<std::shared_ptr<Subscription>> subs_;
    std::size_t capacity_;
    std::chrono::steady_clock::time_point start_;
    std::uint64_t seq_ = 0;
    std::uint64_t dropped_ = 0;
    bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Session state machine

enum class Phase { idle, recording, online_test };

inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::idle: return "idle";
        case Phase::recording: return "recording";
        case Phase::online_test: return "online_test";
    }
    return "?";
}

struct SessionParams {
    double window_ms = 250.0;
    double step_ms = 250.0;
    std::string model;  // path to a saved model
    double reaction_const_s = 0.4;
};

inline nlohmann::json to_json(const SessionParams& p) {
    return {{"window_ms", p.window_ms}, {"step_ms", p.step_ms}, {"model", p.model},
            {"reaction_const_s", p.reaction_const_s}};
}

struct RecordingRequest {
    int subject_id = 1;
    int day_id = 1;
    int wearing_shift = 0;
    Schedule schedule = paradigm_schedule();
};

inline RecordingRequest recording_request_from_json(const nlohmann::json& j) {
    RecordingRequest r;
    r.subject_id = j.value("subject_id", r.subject_id);
    r.day_id = j.value("day_id", r.day_id);
    r.wearing_shift = j.value("wearing_shift", r.wearing_shift);
    if (j.contains("schedule")) r.schedule = j.at("schedule").get<Schedule>();
    if (j.contains("trials")) {
        const auto n = j.at("trials").get<long long>();
        if (n < 1) throw ArgumentError("trials must be positive");
        r.schedule = r.schedule.truncated(static_cast<std::size_t>(n));
    }
    if (r.subject_id < 1 || r.subject_id > 99) throw ArgumentError("subject_id must be 1..99");
    if (r.day_id < 1) throw ArgumentError("day_id must be positive");
    if (r.wearing_shift < 0 || r.wearing_shift >= kEmgChannels) throw ArgumentError("wearing_shift must be 0..7");
    if (r.schedule.trial_count() == 0) throw ArgumentError("schedule has no trials");
    return r;
}

struct OnlineRequest {
    std::size_t n_trials = 50;
    std::uint64_t seed = 1;
    int subject_id = 1;
    int speed_kmh = 0;
};

inline OnlineRequest online_request_from_json(const nlohmann::json& j) {
    OnlineRequest r;
    const auto n = j.value("n_trials", 50LL);
    if (n < 1) throw ArgumentError("n_trials must be positive");
    r.n_trials = static_cast<std::size_t>(n);
    r.seed = j.value("seed", r.seed);
    r.subject_id = j.value("subject_id", r.subject_id);
    r.speed_kmh = j.value("speed_kmh", r.speed_kmh);
    if (!is_valid_speed(r.speed_kmh)) throw ArgumentError("speed_kmh must be one of 0, 4, 6, 8");
    return r;
}

class SessionController {
public:
    SessionController(ServiceConfig cfg, StreamHub& hub) : cfg_(std::move(cfg)), hub_(hub) {}
    ~SessionController() { shutdown(); }

    SessionController(const SessionController&) = delete;
    SessionController& operator=(const SessionController&) = delete;

    nlohmann::json status() const {
        std::lock_guard lock(mu_);
        nlohmann::json s = {{"phase", to_string(phase_)},
                            {"subject_id", subject_},
                            {"day_id", day_},
                            {"block", block_},
                            {"trial", trial_},
                            {"mode_id", mode_},
                            {"progress", progress_},
                            {"trials_done", trials_done_},
                            {"trials_total", trials_total_},
                            {"rows", rows_},
                            {"params", to_json(params_)},
                            {"device",
                             {{"kind", cfg_.device.empty() ? "synthetic" : "tcp"},
                              {"address", cfg_.device},
                              {"rate_multiplier", cfg_.rate_multiplier}}},
                            {"stream", {{"subscribers", hub_.subscribers()}, {"dropped", hub_.dropped()}}},
                            {"last_session", last_session_},
                            {"last_online", last_online_},
                            {"last_error", last_error_}};
        return s;
    }

    Phase phase() const {
        std::lock_guard lock(mu_);
        return phase_;
    }

    void start_session(const RecordingRequest& req) {
        std::unique_lock lock(mu_);
        require_idle("start a recording");
        reap();
        auto src = open_recording_source(req);
        enter(Phase::recording, req.subject_id, req.day_id, req.schedule.trial_count());
        stop_ = false;
        worker_ = std::thread([this, req, src = std::move(src)]() mutable { record(req, std::move(src)); });
    }

    void start_online(const OnlineRequest& req) {
        std::unique_lock lock(mu_);
        require_idle("start an online test");
        reap();
        if (params_.model.empty()) throw ArgumentError("no model set; POST /params with a model path first");
        auto model = std::make_shared<TrainedModel>(load_model(std::filesystem::path(params_.model)));
        OnlineConfig oc;
        oc.window_ms = params_.window_ms;
        oc.step_ms = params_.step_ms;
        oc.reaction_const_s = params_.reaction_const_s;
        enter(Phase::online_test, req.subject_id, 0, req.n_trials);
        stop_ = false;
        worker_ = std::thread([this, req, model, oc] { online(req, *model, oc); });
    }

    // Any phase -> idle. Recording data gathered so far is written.
    void stop_session() {
        std::thread t;
        {
            std::lock_guard lock(mu_);
            stop_ = true;
            t = std::move(worker_);
        }
        if (t.joinable()) t.join();
    }

    void set_params(const nlohmann::json& j) {
        std::lock_guard lock(mu_);
        require_idle("change parameters");
        SessionParams p = params_;
        p.window_ms = j.value("window_ms", p.window_ms);
        p.step_ms = j.value("step_ms", p.step_ms);
        p.model = j.value("model", p.model);
        p.reaction_const_s = j.value("reaction_const_s", p.reaction_const_s);
        if (!(p.window_ms >= 2.0) || !(p.step_ms >= 2.0)) throw ArgumentError("window_ms and step_ms must be at least one sample");
        if (!std::isfinite(p.reaction_const_s) || p.reaction_const_s < 0.0)
            throw ArgumentError("reaction_const_s must be finite and non-negative");
        if (!p.model.empty() && !std::filesystem::is_regular_file(p.model))
            throw ArgumentError("model file not found: " + p.model);
        params_ = p;
    }

    SessionParams params() const {
        std::lock_guard lock(mu_);
        return params_;
    }

    void start_reaction(int n) {
        if (n < 10) throw CalibrationError("reaction test needs at least 10 keypresses, got " + std::to_string(n));
        std::lock_guard lock(mu_);
        require_idle("start a reaction test");
        reaction_expected_ = n;
        hub_.publish("reaction_start", {{"n", n}});
    }

    double submit_reaction(std::vector<double> latencies_s) {
        const std::size_t n = latencies_s.size();
        const double r = calibrate_reaction(std::move(latencies_s));
        std::lock_guard lock(mu_);
        require_idle("calibrate reaction time");
        params_.reaction_const_s = r;
        reaction_expected_ = 0;
        hub_.publish("reaction_done", {{"reaction_const_s", r}, {"samples", n}});
        return r;
    }

    // Blocks until the current session (if any) returns to idle.
    bool wait_idle(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        return idle_cv_.wait_for(lock, timeout, [&] { return phase_ == Phase::idle; });
    }

    void shutdown() { stop_session(); }

private:
    void require_idle(const std::string& what) const {
        if (phase_ != Phase::idle)
            throw ConflictError("cannot " + what + " while " + to_string(phase_), to_string(phase_));
    }

    void reap() {
        if (worker_.joinable()) worker_.join();
    }

    void enter(Phase p, int subject, int day, std::size_t total) {
        phase_ = p;
        subject_ = subject;
        day_ = day;
        block_ = trial_ = mode_ = 0;
        progress_ = 0.0;
        trials_done_ = 0;
        trials_total_ = total;
        rows_ = 0;
        last_error_ = nullptr;
        hub_.publish("phase", {{"phase", to_string(p)}});
    }

    void leave() {
        {
            std::lock_guard lock(mu_);
            phase_ = Phase::idle;
            hub_.publish("phase", {{"phase", "idle"}});
        }
        idle_cv_.notify_all();
    }

    std::unique_ptr<ByteSource> open_recording_source(const RecordingRequest& req) const {
        if (cfg_.device.empty()) {
            auto gen = std::make_shared<ScheduleSubject>(cfg_.synth, req.subject_id, req.day_id, req.wearing_shift,
                                                         req.schedule);
            return std::make_unique<DeviceStream>(gen, cfg_.rate_multiplier, OverflowPolicy::block);
        }
        const auto colon = cfg_.device.rfind(':');
        if (colon == std::string::npos) throw ConfigError("device must be host:port, got " + cfg_.device);
        return std::make_unique<TcpByteSource>(cfg_.device.substr(0, colon), std::stoi(cfg_.device.substr(colon + 1)));
    }

    struct TrialSpan {
        int block, speed, mode;
        std::size_t begin, rest_n, total_n;
        int index_in_block;
    };

    void record(RecordingRequest req, std::unique_ptr<ByteSource> src) {
        std::vector<TrialSpan> spans;
        std::size_t total = 0;
        for (const auto& b : req.schedule.blocks) {
            int k = 0;
            for (const auto& t : b.trials) {
                const auto rest_n = static_cast<std::size_t>(std::llround(t.rest_s * cfg_.synth.fs));
                const auto n = static_cast<std::size_t>(std::llround(t.duration_s() * cfg_.synth.fs));
                spans.push_back({b.block_id, b.speed_kmh, t.trial_id, total, rest_n, n, ++k});
                total += n;
            }
        }
        Recording rec;
        rec.meta = {req.subject_id, req.day_id, cfg_.synth.fs, utc_now_iso8601()};
        rec.data.reserve(total * kRecordingChannels);

        std::size_t span = 0, row = 0;
        int last_trigger = -1;
        std::array<double, kEmgChannels + kAccelChannels> acc{};
        int acc_n = 0;
        std::string error;
        try {
            FrameReader reader(*src);
            std::vector<PhysicalSample> samples;
            bool more = true;
            while (more && row < total && !stop_) {
                samples.clear();
                more = reader.poll(samples);
                for (const auto& s : samples) {
                    if (row >= total) break;
                    const auto& sp = spans[span];
                    const std::size_t i = row - sp.begin;
                    if (i == 0) {
                        {
                            std::lock_guard lock(mu_);
                            block_ = sp.block;
                            trial_ = sp.index_in_block;
                            mode_ = sp.mode;
                            progress_ = 0.0;
                        }
                        hub_.publish("prompt", {{"mode_id", sp.mode},
                                                {"text", ForceMode::from_id(sp.mode).label()},
                                                {"progress", 0.0},
                                                {"block", sp.block},
                                                {"trial", sp.index_in_block},
                                                {"speed", sp.speed}});
                    }
                    const int trigger = i < sp.rest_n ? 0 : sp.mode;
                    if (trigger != last_trigger) {
                        hub_.publish("trigger", {{"trigger", trigger}, {"block", sp.block}, {"speed", sp.speed}});
                        last_trigger = trigger;
                    }
                    rec.data.insert(rec.data.end(), s.emg_uv.begin(), s.emg_uv.end());
                    rec.data.insert(rec.data.end(), s.accel_g.begin(), s.accel_g.end());
                    rec.data.push_back(1000.0 * static_cast<double>(row) / cfg_.synth.fs);
                    rec.data.push_back(trigger);
                    rec.data.push_back(sp.block);
                    rec.data.push_back(sp.speed);

                    for (int c = 0; c < kEmgChannels; ++c) acc[static_cast<std::size_t>(c)] += s.emg_uv[static_cast<std::size_t>(c)];
                    for (int c = 0; c < kAccelChannels; ++c)
                        acc[static_cast<std::size_t>(kEmgChannels + c)] += s.accel_g[static_cast<std::size_t>(c)];
                    if (++acc_n == kDisplayDecimation) {
                        nlohmann::json emg = nlohmann::json::array(), accel = nlohmann::json::array();
                        for (int c = 0; c < kEmgChannels; ++c) emg.push_back(acc[static_cast<std::size_t>(c)] / acc_n);
                        for (int c = 0; c < kAccelChannels; ++c)
                            accel.push_back(acc[static_cast<std::size_t>(kEmgChannels + c)] / acc_n);
                        hub_.publish("display",
                                     {{"emg", emg}, {"accel", accel}, {"trigger", trigger}, {"block", sp.block}, {"speed", sp.speed}},
                                     Plane::display);
                        acc.fill(0.0);
                        acc_n = 0;
                    }

                    ++row;
                    const std::size_t done = i + 1;
                    if (done % kProgressEvery == 0 || done == sp.total_n) {
                        const double p = static_cast<double>(done) / static_cast<double>(sp.total_n);
                        {
                            std::lock_guard lock(mu_);
                            progress_ = p;
                            rows_ = row;
                            if (done == sp.total_n) ++trials_done_;
                        }
                        hub_.publish("progress", {{"mode_id", sp.mode}, {"progress", p}, {"block", sp.block},
                                                  {"trial", sp.index_in_block}});
                    }
                    if (done == sp.total_n) ++span;
                }
            }
            src->close();
        } catch (const std::exception& e) {
            error = e.what();
        }

        nlohmann::json summary = {{"rows", rec.rows()}, {"complete", row == total}, {"path", nullptr}};
        if (rec.rows() > 0) {
            try {
                const auto path = session_path(cfg_.data_dir, req.subject_id, req.day_id);
                write_recording(rec, path);
                summary["path"] = path.string();
            } catch (const std::exception& e) {
                error = e.what();
            }
        }
        hub_.publish("session_end", summary);
        if (!error.empty()) hub_.publish("error", {{"message", error}});
        {
            std::lock_guard lock(mu_);
            rows_ = rec.rows();
            last_session_ = summary;
            if (!error.empty()) last_error_ = error;
        }
        leave();
    }

    void online(OnlineRequest req, const TrainedModel& model, OnlineConfig oc) {
        nlohmann::json summary;
        try {
            const OnlinePlan plan = make_online_plan(req.n_trials, req.seed);
            auto subject = std::make_shared<PlanSubject>(cfg_.synth, req.subject_id, plan, req.speed_kmh);
            DeviceStream stream(subject, cfg_.rate_multiplier, OverflowPolicy::block);
            OnlineCallbacks cb;
            cb.on_cue = [&](const Cue& c, std::size_t k) {
                {
                    std::lock_guard lock(mu_);
                    trial_ = static_cast<int>(k) + 1;
                    mode_ = c.mode_id;
                }
                hub_.publish("cue", {{"index", k},
                                     {"mode_id", c.mode_id},
                                     {"text", ForceMode::from_id(c.mode_id).label()},
                                     {"sample", c.sample}});
            };
            cb.on_prediction = [&](const PredictionEvent& p) {
                hub_.publish("prediction", {{"label", p.label}, {"t_s", p.t_s}, {"sample_end", p.sample_end},
                                            {"latency_ms", p.latency_ms}});
            };
            cb.on_trial = [&](const OnlineTrialResult& r, std::size_t k) {
                {
                    std::lock_guard lock(mu_);
                    ++trials_done_;
                    progress_ = static_cast<double>(trials_done_) / static_cast<double>(trials_total_);
                }
                hub_.publish("trial_result", {{"index", k},
                                              {"cued_mode", r.cued_mode},
                                              {"predicted_mode", r.predicted_mode},
                                              {"t0", r.t0},
                                              {"t3", finite_or_null(r.t3)},
                                              {"delta_t_s", finite_or_null(r.delta_t_s)},
                                              {"correct", r.correct},
                                              {"completed", r.completed},
                                              {"timed_out", r.timed_out}});
            };
            const auto res = run_online_session(stream, model, plan, oc, cb, &stop_);
            const auto& s = res.summary;
            summary = {{"accuracy", s.accuracy},
                       {"mean_delta_t_s", finite_or_null(s.mean_delta_t_s)},
                       {"completed", s.completed},
                       {"trials", s.trials},
                       {"aborted", s.aborted},
                       {"abort_reason", s.abort_reason},
                       {"mean_latency_ms", s.mean_latency_ms},
                       {"max_latency_ms", s.max_latency_ms}};
            hub_.publish("online_end", summary);
        } catch (const std::exception& e) {
            summary = {{"error", e.what()}};
            hub_.publish("error", {{"message", e.what()}});
        }
        {
            std::lock_guard lock(mu_);
            last_online_ = summary;
            if (summary.contains("error")) last_error_ = summary["error"];
        }
        leave();
    }

    static nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

    static constexpr int kDisplayDecimation = 10;
    static constexpr std::size_t kProgressEvery = 50;

    ServiceConfig cfg_;
    StreamHub& hub_;
    mutable std::mutex mu_;
    std::condition_variable idle_cv_;
    std::thread worker_;
    std::atomic<bool> stop_{false};

    Phase phase_ = Phase::idle;
    int subject_ = 0, day_ = 0, block_ = 0, trial_ = 0, mode_ = 0;
    double progress_ = 0.0;
    std::size_t trials_done_ = 0, trials_total_ = 0, rows_ = 0;
    int reaction_expected_ = 0;
    SessionParams params_;
    nlohmann::json last_session_ = nullptr, last_online_ = nullptr, last_error_ = nullptr;
};

// ---------------------------------------------------------------------------
// HTTP front end

class Service {
public:
    explicit Service(ServiceConfig cfg)
        : cfg_(std::move(cfg)), hub_(cfg_.client_queue), ctl_(cfg_, hub_) {
        routes();
    }
    ~Service() { stop(); }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds (port 0 picks a free one) and serves on a background thread.
    int start() {
        const int port = cfg_.port == 0 ? http_.bind_to_any_port(cfg_.host) : (http_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
        if (port < 0) throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
        port_ = port;
        thread_ = std::thread([this] { http_.listen_after_bind(); });
        http_.wait_until_ready();
        return port_;
    }

    // Serves on the calling thread until stop().
    void run() {
        if (!thread_.joinable()) start();
        thread_.join();
    }

    void stop() {
        if (stopped_.exchange(true)) return;
        ctl_.shutdown();
        hub_.close_all();
        http_.stop();
        if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
    }

    int port() const { return port_; }
    SessionController& controller() { return ctl_; }
    StreamHub& hub() { return hub_; }

private:
    template <typename F>
    static void guarded(httplib::Response& res, F&& f) {
        auto fail = [&](int code, nlohmann::json body) {
            res.status = code;
            res.set_content(body.dump(), "application/json");
        };
        try {
            res.set_content(f().dump(), "application/json");
        } catch (const ConflictError& e) {
            fail(409, {{"error", e.what()}, {"phase", e.phase()}});
        } catch (const nlohmann::json::exception& e) {
            fail(400, {{"error", std::string("bad request body: ") + e.what()}});
        } catch (const ArgumentError& e) {
            fail(400, {{"error", e.what()}});
        } catch (const CalibrationError& e) {
            fail(400, {{"error", e.what()}});
        } catch (const ConfigError& e) {
            fail(400, {{"error", e.what()}});
        } catch (const FormatError& e) {
            fail(400, {{"error", e.what()}});
        } catch (const std::exception& e) {
            fail(500, {{"error", e.what()}});
        }
    }

    static nlohmann::json body(const httplib::Request& req) {
        if (req.body.empty()) return nlohmann::json::object();
        auto j = nlohmann::json::parse(req.body);
        if (!j.is_object()) throw ArgumentError("request body must be a JSON object");
        return j;
    }

    void routes() {
        http_.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { return ctl_.status(); });
        });
        http_.Post("/session/start", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                ctl_.start_session(recording_request_from_json(body(req)));
                return ctl_.status();
            });
        });
        http_.Post("/session/stop", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                ctl_.stop_session();
                return ctl_.status();
            });
        });
        http_.Post("/params", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                ctl_.set_params(body(req));
                return to_json(ctl_.params());
            });
        });
        http_.Post("/online/start", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                ctl_.start_online(online_request_from_json(body(req)));
                return ctl_.status();
            });
        });
        http_.Post("/reaction/start", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const int n = body(req).value("n", 20);
                ctl_.start_reaction(n);
                return nlohmann::json{{"n", n}};
            });
        });
        http_.Post("/reaction/submit", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto lat = body(req).at("latencies_s").get<std::vector<double>>();
                return nlohmann::json{{"reaction_const_s", ctl_.submit_reaction(lat)}, {"samples", lat.size()}};
            });
        });
        http_.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
            auto sub = hub_.subscribe();
            res.set_chunked_content_provider(
                "application/x-ndjson",
                [sub](std::size_t, httplib::DataSink& sink) {
                    if (!sink.is_writable()) return false;
                    if (auto m = sub->next(std::chrono::milliseconds(100))) {
                        m->push_back('\n');
                        return sink.write(m->data(), m->size());
                    }
                    if (sub->closed()) sink.done();
                    return true;
                },
                [this, sub](bool) { hub_.unsubscribe(sub); });
        });
    }

    ServiceConfig cfg_;
    StreamHub hub_;
    SessionController ctl_;
    httplib::Server http_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<bool> stopped_{false};
};

}  // namespace semg
