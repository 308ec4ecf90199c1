#include <catch_amalgamated.hpp>

#include <chrono>
#include <thread>

#include "semg/device.hpp"
#include "semg/spectral.hpp"
#include "semg/synth.hpp"

using namespace semg;

namespace {

std::array<double, kEmgChannels> channel_rms(const ChannelMatrix& m, std::size_t begin = 0, std::size_t end = 0) {
    if (end == 0) end = m.samples();
    std::array<double, kEmgChannels> r{};
    for (std::size_t c = 0; c < kEmgChannels; ++c) {
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) s += m(c, i) * m(c, i);
        r[c] = std::sqrt(s / static_cast<double>(end - begin));
    }
    return r;
}

SynthConfig clean_config() {
    auto cfg = default_synth_config();
    cfg.noise_floor_uv = 0.0;
    for (auto& [k, v] : cfg.artifact_gain_per_speed) v = 0.0;
    cfg.trial_gain_log_sd = 0.0;
    return cfg;
}

double low_band_power(const ChannelMatrix& m) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.channels(); ++c) s += psd(m.channel(c), kSampleRateHz).band_power(0.0, 20.0);
    return s;
}

}  // namespace

TEST_CASE("force mode table") {
    CHECK(ForceMode::from_id(1).is_rest());
    CHECK(ForceMode::from_id(1).label() == "rest");
    for (int id = 2; id <= 6; ++id) {
        const auto m = ForceMode::from_id(id);
        CHECK(m.fingers.count() == 1);
        CHECK(m.fingers.test(static_cast<std::size_t>(id - 2)));
    }
    for (int id = 7; id <= 12; ++id) CHECK(ForceMode::from_id(id).fingers.count() >= 2);
    CHECK(ForceMode::from_id(7).label() == "thumb + index");
    CHECK(ForceMode::from_id(12).label() == "index + ring");
    // all twelve finger sets are distinct
    std::set<unsigned long> seen;
    for (int id = 1; id <= 12; ++id) seen.insert(ForceMode::from_id(id).fingers.to_ulong());
    CHECK(seen.size() == 12);
    CHECK_THROWS_AS(ForceMode::from_id(0), ArgumentError);
    CHECK_THROWS_AS(ForceMode::from_id(13), ArgumentError);
}

TEST_CASE("default config is valid with distinct argmax rows") {
    const auto cfg = default_synth_config();
    CHECK_NOTHROW(validate(cfg));
    std::set<int> peaks;
    for (const auto& row : cfg.gain_matrix) peaks.insert(argmax_channel(row));
    CHECK(peaks.size() == kFingers);
}

TEST_CASE("config validation") {
    auto cfg = default_synth_config();
    cfg.gain_matrix[1] = cfg.gain_matrix[0];
    CHECK_THROWS_AS(validate(cfg), ConfigError);

    cfg = default_synth_config();
    cfg.artifact_gain_per_speed[6] = 50.0;  // above the 8 km/h gain
    CHECK_THROWS_AS(validate(cfg), ConfigError);

    cfg = default_synth_config();
    cfg.artifact_gain_per_speed.erase(4);
    CHECK_THROWS_AS(validate(cfg), ConfigError);

    cfg = default_synth_config();
    cfg.intensity = 1.5;
    CHECK_THROWS_AS(validate(cfg), ConfigError);

    cfg = default_synth_config();
    cfg.gain_matrix[2][3] = -1.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("config json round trip") {
    auto cfg = default_synth_config();
    cfg.seed = 77;
    cfg.intensity = 0.4;
    nlohmann::json j = cfg;
    SynthConfig back;
    from_json(j, back);
    nlohmann::json j2 = back;
    CHECK(j == j2);
    CHECK(back.seed == 77);
    CHECK(back.gain_matrix == cfg.gain_matrix);
    CHECK(back.artifact_gain_per_speed == cfg.artifact_gain_per_speed);
}

TEST_CASE("rest trial stays near the noise floor") {
    const auto cfg = default_synth_config();
    for (double intensity : {0.0, 0.5, 1.0}) {
        auto c = cfg;
        c.intensity = intensity;
        const auto sig = synth_trial(c, ForceMode::from_id(1), 0, 4.0);
        for (double r : channel_rms(sig.emg)) CHECK(r <= 3.0 * cfg.noise_floor_uv);
    }
}

TEST_CASE("thumb and little finger peak on different channels") {
    auto cfg = default_synth_config();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        cfg.seed = seed;
        const auto a = synth_trial(cfg, ForceMode::from_id(2), 0, 8.0);
        const auto b = synth_trial(cfg, ForceMode::from_id(6), 0, 8.0);
        CHECK(argmax_channel(channel_rms(a.emg)) != argmax_channel(channel_rms(b.emg)));
    }
}

TEST_CASE("walking adds low-frequency power") {
    const auto cfg = default_synth_config();
    const auto still = synth_trial(cfg, ForceMode::from_id(1), 0, 8.0);
    const auto fast = synth_trial(cfg, ForceMode::from_id(1), 8, 8.0);
    CHECK(low_band_power(fast.emg) > low_band_power(still.emg));
}

TEST_CASE("unknown speed is a config error") {
    CHECK_THROWS_AS(synth_trial(default_synth_config(), ForceMode::from_id(2), 5, 1.0), ConfigError);
    CHECK_THROWS_AS(synth_trial(default_synth_config(), ForceMode::from_id(2), 0, 0.0), ArgumentError);
}

TEST_CASE("accelerometer carries gravity and gait") {
    const auto cfg = default_synth_config();
    const auto still = synth_trial(cfg, ForceMode::from_id(1), 0, 4.0);
    double mz = 0.0;
    for (std::size_t i = 0; i < still.accel.samples(); ++i) mz += still.accel(2, i);
    CHECK(mz / static_cast<double>(still.accel.samples()) == Catch::Approx(1.0).margin(0.01));
    const auto walk = synth_trial(cfg, ForceMode::from_id(1), 6, 4.0);
    auto spread = [](std::span<const double> x) {
        auto [lo, hi] = std::minmax_element(x.begin(), x.end());
        return *hi - *lo;
    };
    CHECK(spread(walk.accel.channel(0)) > 5.0 * spread(still.accel.channel(0)));
}

TEST_CASE("generation is deterministic", "[property]") {
    const auto cfg = default_synth_config();
    const auto a = synth_trial(cfg, ForceMode::from_id(9), 6, 2.0);
    const auto b = synth_trial(cfg, ForceMode::from_id(9), 6, 2.0);
    CHECK(a.emg == b.emg);
    CHECK(a.accel == b.accel);
    auto other = cfg;
    other.seed = cfg.seed + 1;
    CHECK_FALSE(synth_trial(other, ForceMode::from_id(9), 6, 2.0).emg == a.emg);
}

TEST_CASE("full session shape and determinism") {
    const auto cfg = default_synth_config();
    const auto a = synth_session(cfg, 3, 1, 0);
    // 12 blocks x 12 trials x 10 s x 500 Hz
    CHECK(a.rows() == 720000);
    CHECK(validate_recording(a).empty());
    const auto b = synth_session(cfg, 3, 1, 0);
    CHECK(a.data == b.data);
    CHECK(a.meta == b.meta);
    CHECK(a.at(0, col::timestamp) == 0.0);
    CHECK(a.at(1, col::timestamp) == 2.0);
    CHECK(a.at(999, col::trigger) == 0.0);
    CHECK(a.at(1000, col::trigger) == 1.0);
    CHECK(a.at(5000 + 1000, col::trigger) == 2.0);
    CHECK(a.at(4 * 60000 - 1, col::block) == 4.0);
    CHECK(a.at(4 * 60000 - 1, col::speed) == 8.0);
}

TEST_CASE("wearing shift rotates the RMS profile", "[property]") {
    const auto cfg = clean_config();
    const auto sched = paradigm_schedule();
    const auto day1 = synth_session(cfg, 2, 1, 0, sched);
    const auto day2 = synth_session(cfg, 2, 2, 1, sched);
    for (int mode : {2, 4, 8}) {
        std::array<double, kEmgChannels> p1{}, p2{};
        std::size_t n = 0;
        for (std::size_t r = 0; r < day1.rows(); ++r) {
            if (day1.trigger(r) != mode) continue;
            for (int c = 0; c < kEmgChannels; ++c) {
                p1[static_cast<std::size_t>(c)] += day1.at(r, c) * day1.at(r, c);
                p2[static_cast<std::size_t>(c)] += day2.at(r, c) * day2.at(r, c);
            }
            ++n;
        }
        REQUIRE(n == 12 * 4000);
        for (int c = 0; c < kEmgChannels; ++c) {
            const double a = std::sqrt(p1[static_cast<std::size_t>(c)] / static_cast<double>(n));
            const double b = std::sqrt(p2[static_cast<std::size_t>((c + 1) % kEmgChannels)] / static_cast<double>(n));
            CHECK(b == Catch::Approx(a).epsilon(0.05));
        }
    }
}

TEST_CASE("rotate_channels moves column c to c+shift") {
    const auto g = default_gain_matrix();
    for (int s = -9; s <= 9; ++s) {
        const auto r = rotate_channels(g, s);
        for (int f = 0; f < kFingers; ++f)
            for (int c = 0; c < kEmgChannels; ++c)
                REQUIRE(r[static_cast<std::size_t>(f)][static_cast<std::size_t>(((c + s) % 8 + 8) % 8)] ==
                        g[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)]);
    }
}

TEST_CASE("active power sits in the emg band", "[property]") {
    const auto cfg = clean_config();
    for (int mode = 2; mode <= 12; ++mode) {
        const auto sig = synth_trial(cfg, ForceMode::from_id(mode), 0, 4.0, static_cast<std::uint64_t>(mode));
        double in = 0.0, total = 0.0;
        for (std::size_t c = 0; c < kEmgChannels; ++c) {
            const auto p = psd(sig.emg.channel(c), kSampleRateHz);
            in += p.band_power(20.0, 150.0, true);
            total += p.total_power();
        }
        CHECK(in / total >= 0.8);
    }
}

TEST_CASE("amplitude saturates with intensity", "[property]") {
    auto cfg = clean_config();
    std::vector<double> rms;
    for (int k = 0; k <= 5; ++k) {
        cfg.intensity = k / 5.0;
        const auto sig = synth_trial(cfg, ForceMode::from_id(3), 0, 2.0);
        double s = 0.0;
        for (double v : sig.emg.raw()) s += v * v;
        rms.push_back(std::sqrt(s / static_cast<double>(sig.emg.raw().size())));
    }
    CHECK(rms[0] == 0.0);
    for (std::size_t i = 1; i < rms.size(); ++i) CHECK(rms[i] >= rms[i - 1]);
    for (std::size_t i = 1; i + 1 < rms.size(); ++i) CHECK(rms[i + 1] - 2.0 * rms[i] + rms[i - 1] <= 1e-9);
    CHECK(intensity_effect(0.0) == 0.0);
    CHECK(intensity_effect(1.0) == Catch::Approx(1.0 - std::exp(-3.0)));
}

namespace {

struct TrialGen : SampleGenerator {
    const TrialSignal& sig;
    std::size_t pos = 0;
    explicit TrialGen(const TrialSignal& s) : sig(s) {}
    void generate(std::vector<PhysicalSample>& out, std::size_t n) override {
        out.clear();
        for (; out.size() < n && pos < sig.emg.samples(); ++pos) {
            PhysicalSample s;
            for (std::size_t c = 0; c < kEmgChannels; ++c) s.emg_uv[c] = sig.emg(c, pos);
            for (std::size_t c = 0; c < kAccelChannels; ++c) s.accel_g[c] = sig.accel(c, pos);
            out.push_back(s);
        }
    }
};

}  // namespace

TEST_CASE("fast device stream reproduces the trial within one LSB") {
    const auto cfg = default_synth_config();
    const auto sig = synth_trial(cfg, ForceMode::from_id(8), 4, 3.0);
    DeviceStream stream(std::make_shared<TrialGen>(sig), 100.0, OverflowPolicy::block);
    FrameReader reader(stream);
    std::vector<PhysicalSample> got;
    while (reader.poll(got)) {
    }
    REQUIRE(got.size() == sig.emg.samples());
    CHECK(reader.stats().frames_dropped == 0);
    for (std::size_t i = 0; i < got.size(); ++i) {
        for (std::size_t c = 0; c < kEmgChannels; ++c)
            REQUIRE(std::fabs(got[i].emg_uv[c] - sig.emg(c, i)) <= protocol::kEmgLsbMicrovolts);
        for (std::size_t c = 0; c < kAccelChannels; ++c)
            REQUIRE(std::fabs(got[i].accel_g[c] - sig.accel(c, i)) <= protocol::kAccelLsbG);
    }
}

TEST_CASE("real-time device stream paces at 500 frames per second") {
    auto gen = std::make_shared<ScheduleSubject>(default_synth_config(), 1, 1, 0, paradigm_schedule());
    DeviceStream stream(gen, 1.0, OverflowPolicy::drop_oldest);
    std::this_thread::sleep_for(std::chrono::seconds(2));
    const auto sent = stream.stats().frames_sent;
    stream.close();
    CHECK(sent >= 990);
    CHECK(sent <= 1010);
}

TEST_CASE("schedule subject matches the synthesized session") {
    const auto cfg = default_synth_config();
    const auto sched = paradigm_schedule().truncated(3);
    const auto rec = synth_session(cfg, 4, 2, 3, sched);
    ScheduleSubject subj(cfg, 4, 2, 3, sched);
    std::vector<PhysicalSample> all, chunk;
    do {
        subj.generate(chunk, 333);
        all.insert(all.end(), chunk.begin(), chunk.end());
    } while (!chunk.empty());
    REQUIRE(all.size() == rec.rows());
    for (std::size_t r = 0; r < rec.rows(); ++r)
        for (int c = 0; c < kEmgChannels; ++c) REQUIRE(all[r].emg_uv[static_cast<std::size_t>(c)] == rec.at(r, c));
}
