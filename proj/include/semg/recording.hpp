#pragma once
// Paradigm schedule and the 15-channel session file format.
//
// A session is stored as two files:
//   <name>.dat        row-major little-endian float32, 15 values per row, no header
//   <name>.meta.json  {subject_id, day_id, fs, created_at, rows, channels}
//
// Column layout (0-based):
//   0..7   sEMG, microvolts
//   8..10  accelerometer x, y, z, g
//   11     timestamp, ms since session start
//   12     trigger: active force-mode id, 0 during rest
//   13     block 1..12
//   14     treadmill speed, km/h

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "semg/errors.hpp"
#include "semg/matrix.hpp"

namespace semg {

inline constexpr int kRecordingChannels = 15;
inline constexpr std::size_t kRowBytes = kRecordingChannels * sizeof(float);
inline constexpr int kBlocks = 12;
inline constexpr int kTrialsPerBlock = 12;
inline constexpr int kForceModes = 12;
inline constexpr std::array<int, 4> kSpeedsKmh = {0, 4, 6, 8};

namespace col {
inline constexpr int emg0 = 0;
inline constexpr int accel_x = 8;
inline constexpr int timestamp = 11;
inline constexpr int trigger = 12;
inline constexpr int block = 13;
inline constexpr int speed = 14;
}  // namespace col

inline bool is_valid_speed(int kmh) {
    return std::find(kSpeedsKmh.begin(), kSpeedsKmh.end(), kmh) != kSpeedsKmh.end();
}

// ---------------------------------------------------------------------------
// Schedule

struct TrialPlan {
    int trial_id = 1;  // equals the force-mode id
    double rest_s = 2.0;
    double active_s = 8.0;

    double duration_s() const { return rest_s + active_s; }
};

struct BlockPlan {
    int block_id = 1;
    int speed_kmh = 0;
    std::vector<TrialPlan> trials;
};

struct Schedule {
    std::vector<BlockPlan> blocks;

    std::size_t trial_count() const {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.trials.size();
        return n;
    }

    std::size_t total_samples(double fs) const {
        std::size_t n = 0;
        for (const auto& b : blocks)
            for (const auto& t : b.trials) n += static_cast<std::size_t>(std::llround(t.duration_s() * fs));
        return n;
    }

    // The first `n` trials in paradigm order.
    Schedule truncated(std::size_t n) const {
        Schedule out;
        for (const auto& b : blocks) {
            if (n == 0) break;
            BlockPlan bp{b.block_id, b.speed_kmh, {}};
            for (const auto& t : b.trials) {
                if (n == 0) break;
                bp.trials.push_back(t);
                --n;
            }
            out.blocks.push_back(std::move(bp));
        }
        return out;
    }
};

// 12 blocks x 12 trials; speeds cycle 0, 4, 6, 8 km/h three times; each trial
// is 2 s rest followed by 8 s of the cued force mode.
inline Schedule paradigm_schedule() {
    Schedule s;
    for (int b = 1; b <= kBlocks; ++b) {
        BlockPlan bp;
        bp.block_id = b;
        bp.speed_kmh = kSpeedsKmh[static_cast<std::size_t>((b - 1) % 4)];
        for (int t = 1; t <= kTrialsPerBlock; ++t) bp.trials.push_back({t, 2.0, 8.0});
        s.blocks.push_back(std::move(bp));
    }
    return s;
}

inline void to_json(nlohmann::json& j, const Schedule& s) {
    j = nlohmann::json::array();
    for (const auto& b : s.blocks) {
        nlohmann::json trials = nlohmann::json::array();
        for (const auto& t : b.trials)
            trials.push_back({{"trial_id", t.trial_id}, {"rest_s", t.rest_s}, {"active_s", t.active_s}});
        j.push_back({{"block_id", b.block_id}, {"speed_kmh", b.speed_kmh}, {"trials", trials}});
    }
}

inline void from_json(const nlohmann::json& j, Schedule& s) {
    s.blocks.clear();
    for (const auto& jb : j) {
        BlockPlan b;
        b.block_id = jb.at("block_id").get<int>();
        b.speed_kmh = jb.at("speed_kmh").get<int>();
        for (const auto& jt : jb.at("trials"))
            b.trials.push_back({jt.at("trial_id").get<int>(), jt.value("rest_s", 2.0), jt.value("active_s", 8.0)});
        s.blocks.push_back(std::move(b));
    }
}

// ---------------------------------------------------------------------------
// Recording

struct RecordingMeta {
    int subject_id = 1;
    int day_id = 1;
    double fs = kSampleRateHz;
    std::string created_at;

    friend bool operator==(const RecordingMeta&, const RecordingMeta&) = default;
};

struct Recording {
    std::vector<double> data;  // rows x 15, row-major
    RecordingMeta meta;

    std::size_t rows() const noexcept { return data.size() / kRecordingChannels; }
    double& at(std::size_t r, int c) { return data[r * kRecordingChannels + static_cast<std::size_t>(c)]; }
    double at(std::size_t r, int c) const { return data[r * kRecordingChannels + static_cast<std::size_t>(c)]; }
    int trigger(std::size_t r) const { return static_cast<int>(at(r, col::trigger)); }
    int block(std::size_t r) const { return static_cast<int>(at(r, col::block)); }
    int speed(std::size_t r) const { return static_cast<int>(at(r, col::speed)); }

    // sEMG channels of rows [begin, end) as an 8 x (end - begin) matrix.
    ChannelMatrix emg(std::size_t begin, std::size_t end) const {
        ChannelMatrix m(kEmgChannels, end - begin);
        for (std::size_t r = begin; r < end; ++r)
            for (int c = 0; c < kEmgChannels; ++c) m(static_cast<std::size_t>(c), r - begin) = at(r, col::emg0 + c);
        return m;
    }
};

inline std::string utc_now_iso8601() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Every invariant violation, in row order. Empty when the recording is valid.
inline std::vector<std::string> validate_recording(const Recording& r, std::size_t max_issues = 50) {
    std::vector<std::string> issues;
    auto add = [&](std::string s) {
        if (issues.size() < max_issues) issues.push_back(std::move(s));
    };
    if (r.data.size() % kRecordingChannels != 0) add("data length is not a multiple of 15");
    std::array<int, kBlocks + 1> block_speed;
    block_speed.fill(-1);
    double prev_ts = -1e300;
    for (std::size_t i = 0; i < r.rows(); ++i) {
        const double trig = r.at(i, col::trigger);
        const double blk = r.at(i, col::block);
        const double spd = r.at(i, col::speed);
        const double ts = r.at(i, col::timestamp);
        if (trig != std::floor(trig) || trig < 0 || trig > kForceModes)
            add("row " + std::to_string(i) + ": trigger " + std::to_string(trig) + " outside {0, 1..12}");
        if (blk != std::floor(blk) || blk < 1 || blk > kBlocks) {
            add("row " + std::to_string(i) + ": block " + std::to_string(blk) + " outside 1..12");
        }
        if (spd != std::floor(spd) || !is_valid_speed(static_cast<int>(spd))) {
            add("row " + std::to_string(i) + ": speed " + std::to_string(spd) + " outside {0,4,6,8}");
        } else if (blk == std::floor(blk) && blk >= 1 && blk <= kBlocks) {
            auto& bs = block_speed[static_cast<std::size_t>(blk)];
            if (bs < 0) bs = static_cast<int>(spd);
            else if (bs != static_cast<int>(spd))
                add("row " + std::to_string(i) + ": speed changes within block " + std::to_string(static_cast<int>(blk)));
        }
        if (!(ts > prev_ts)) add("row " + std::to_string(i) + ": timestamp not increasing");
        prev_ts = ts;
    }
    return issues;
}

inline std::filesystem::path meta_path_for(const std::filesystem::path& dat) {
    return dat.parent_path() / (dat.stem().string() + ".meta.json");
}

// data/S{subject:02}/D{day}/session.dat
inline std::filesystem::path session_path(const std::filesystem::path& root, int subject, int day) {
    char sdir[16];
    std::snprintf(sdir, sizeof sdir, "S%02d", subject);
    return root / sdir / ("D" + std::to_string(day)) / "session.dat";
}

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big)
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    return v;
}

}  // namespace detail

inline void write_recording(const Recording& r, const std::filesystem::path& path) {
    if (auto issues = validate_recording(r); !issues.empty()) throw ValidationError(std::move(issues));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());

    std::vector<std::uint32_t> words(r.data.size());
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        const float f = static_cast<float>(r.data[i]);
        words[i] = detail::to_le(std::bit_cast<std::uint32_t>(f));
    }
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(words.data()),
                  static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
        if (!out) throw FormatError("write failed: " + path.string());
    }
    nlohmann::json meta = {{"subject_id", r.meta.subject_id},
                           {"day_id", r.meta.day_id},
                           {"fs", r.meta.fs},
                           {"created_at", r.meta.created_at},
                           {"rows", r.rows()},
                           {"channels", kRecordingChannels}};
    std::ofstream mout(meta_path_for(path), std::ios::trunc);
    if (!mout) throw FormatError("cannot open sidecar for " + path.string());
    mout << meta.dump(2) << '\n';
}

inline Recording read_recording(const std::filesystem::path& path) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) throw FormatError("cannot stat " + path.string() + ": " + ec.message());
    if (size % kRowBytes != 0) {
        const auto offset = size - size % kRowBytes;
        throw FormatError(path.string() + ": size " + std::to_string(size) +
                          " bytes is not a multiple of 60; truncated row at byte offset " +
                          std::to_string(offset));
    }
    Recording r;
    std::vector<std::uint32_t> words(size / sizeof(std::uint32_t));
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError("cannot open " + path.string());
        in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(size));
        if (!in) throw FormatError("short read: " + path.string());
    }
    r.data.resize(words.size());
    for (std::size_t i = 0; i < words.size(); ++i)
        r.data[i] = std::bit_cast<float>(detail::to_le(words[i]));

    const auto mpath = meta_path_for(path);
    std::ifstream min(mpath);
    if (!min) throw FormatError("missing metadata sidecar " + mpath.string());
    nlohmann::json meta;
    try {
        min >> meta;
        r.meta.subject_id = meta.at("subject_id").get<int>();
        r.meta.day_id = meta.at("day_id").get<int>();
        r.meta.fs = meta.at("fs").get<double>();
        r.meta.created_at = meta.value("created_at", std::string{});
        if (meta.contains("rows") && meta.at("rows").get<std::size_t>() != r.rows())
            throw FormatError("sidecar rows " + meta.at("rows").dump() + " disagree with file (" +
                              std::to_string(r.rows()) + ")");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad sidecar " + mpath.string() + ": " + e.what());
    }
    if (auto issues = validate_recording(r); !issues.empty()) throw ValidationError(std::move(issues));
    return r;
}

// ---------------------------------------------------------------------------
// Trial extraction

struct SampleRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
    friend bool operator==(const SampleRange&, const SampleRange&) = default;
};

struct TrialEntry {
    int trial_id = 0;
    int block = 0;
    int speed_kmh = 0;
    SampleRange baseline;  // rest rows immediately before the active run
    SampleRange active;    // rows where trigger == trial_id
};

struct TrialWarning {
    SampleRange rows;
    int trigger = 0;
    std::string reason;
};

struct TrialExtraction {
    std::vector<TrialEntry> trials;
    std::vector<TrialWarning> warnings;
};

// One entry per maximal run of a non-zero trigger. The baseline is the rest
// run directly before it, limited to the same block and to `max_baseline_s`.
// Runs shorter than `min_active_s` are reported as warnings and skipped.
inline TrialExtraction extract_trials(const Recording& r, double max_baseline_s = 2.0,
                                      double min_active_s = 1.0) {
    TrialExtraction out;
    const std::size_t n = r.rows();
    const auto max_base = static_cast<std::size_t>(std::llround(max_baseline_s * r.meta.fs));
    const auto min_active = static_cast<std::size_t>(std::llround(min_active_s * r.meta.fs));
    std::size_t i = 0;
    std::size_t prev_run_end = 0;
    while (i < n) {
        const int k = r.trigger(i);
        if (k == 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && r.trigger(j) == k) ++j;
        const SampleRange active{i, j};
        if (active.size() < min_active) {
            out.warnings.push_back({active, k, "trigger run of " + std::to_string(active.size()) +
                                                   " samples is shorter than the minimum trial length"});
        } else {
            const int blk = r.block(i);
            std::size_t b = i;
            while (b > prev_run_end && i - b < max_base && r.trigger(b - 1) == 0 && r.block(b - 1) == blk) --b;
            out.trials.push_back({k, blk, r.speed(i), {b, i}, active});
        }
        prev_run_end = j;
        i = j;
    }
    return out;
}

}  // namespace semg
