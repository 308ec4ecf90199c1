#pragma once
// Sample generators and the framed byte stream an acquisition device emits.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "semg/protocol.hpp"
#include "semg/recording.hpp"
#include "semg/synth.hpp"

namespace semg {

using protocol::PhysicalSample;

// Produces consecutive samples; an empty chunk marks the end of the signal.
class SampleGenerator {
public:
    virtual ~SampleGenerator() = default;
    virtual void generate(std::vector<PhysicalSample>& out, std::size_t max_samples) = 0;
};

// Replays the sEMG/accel columns of a recording.
class RecordingGenerator final : public SampleGenerator {
public:
    explicit RecordingGenerator(const Recording& rec) : rec_(rec) {}

    void generate(std::vector<PhysicalSample>& out, std::size_t max_samples) override {
        out.clear();
        const std::size_t end = std::min(rec_.rows(), next_ + max_samples);
        for (; next_ < end; ++next_) {
            PhysicalSample s;
            for (int c = 0; c < kEmgChannels; ++c) s.emg_uv[static_cast<std::size_t>(c)] = rec_.at(next_, col::emg0 + c);
            for (int c = 0; c < kAccelChannels; ++c) s.accel_g[static_cast<std::size_t>(c)] = rec_.at(next_, col::accel_x + c);
            out.push_back(s);
        }
    }

private:
    const Recording& rec_;
    std::size_t next_ = 0;
};

inline void append_samples(std::vector<PhysicalSample>& out, const TrialSignal& sig) {
    for (std::size_t i = 0; i < sig.emg.samples(); ++i) {
        PhysicalSample s;
        for (std::size_t c = 0; c < kEmgChannels; ++c) s.emg_uv[c] = sig.emg(c, i);
        for (std::size_t c = 0; c < kAccelChannels; ++c) s.accel_g[c] = sig.accel(c, i);
        out.push_back(protocol::quantize(s));
    }
}

// A synthetic wearer performing a paradigm schedule; yields the same samples
// as the corresponding synthesized session.
class ScheduleSubject final : public SampleGenerator {
public:
    ScheduleSubject(SynthConfig cfg, int subject_id, int day_id, int wearing_shift, Schedule schedule)
        : synth_(std::move(cfg)),
          wearer_(synth_.wearer(subject_id, wearing_shift)),
          subject_(subject_id),
          day_(day_id),
          schedule_(std::move(schedule)) {}

    void generate(std::vector<PhysicalSample>& out, std::size_t max_samples) override {
        out.clear();
        while (out.size() < max_samples) {
            if (pos_ >= pending_.size()) {
                if (block_ >= schedule_.blocks.size()) return;
                const auto& b = schedule_.blocks[block_];
                if (trial_ >= b.trials.size()) {
                    ++block_;
                    trial_ = 0;
                    continue;
                }
                pending_.clear();
                pos_ = 0;
                append_samples(pending_, synth_.session_trial(wearer_, subject_, day_, b, b.trials[trial_], row_));
                row_ += pending_.size();
                ++trial_;
            }
            const std::size_t n = std::min(max_samples - out.size(), pending_.size() - pos_);
            out.insert(out.end(), pending_.begin() + static_cast<std::ptrdiff_t>(pos_),
                       pending_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
            pos_ += n;
        }
    }

private:
    Synthesizer synth_;
    Wearer wearer_;
    int subject_, day_;
    Schedule schedule_;
    std::size_t block_ = 0, trial_ = 0, row_ = 0;
    std::vector<PhysicalSample> pending_;
    std::size_t pos_ = 0;
};

// Anything that yields raw device bytes.
class ByteSource {
public:
    virtual ~ByteSource() = default;
    // Copies up to out.size() bytes; 0 means nothing is available right now.
    virtual std::size_t read(std::span<std::uint8_t> out) = 0;
    // No further bytes will ever arrive.
    virtual bool eof() const = 0;
    virtual void close() {}
};

enum class OverflowPolicy { block, drop_oldest };

struct DeviceStreamStats {
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_dropped = 0;
};

// Encodes generated samples as frames on a producer thread, paced at
// 500 x rate_multiplier frames/s (0 = as fast as the consumer allows).
class DeviceStream final : public ByteSource {
public:
    DeviceStream(std::shared_ptr<SampleGenerator> gen, double rate_multiplier = 1.0,
                 OverflowPolicy policy = OverflowPolicy::drop_oldest, std::size_t capacity_frames = 4096)
        : gen_(std::move(gen)), rate_(rate_multiplier), policy_(policy), capacity_(capacity_frames) {
        if (rate_ < 0.0) throw ArgumentError("rate multiplier must be non-negative");
        if (capacity_ == 0) throw ArgumentError("device queue capacity must be positive");
        thread_ = std::thread([this] { run(); });
    }
    ~DeviceStream() override { close(); }

    DeviceStream(const DeviceStream&) = delete;
    DeviceStream& operator=(const DeviceStream&) = delete;

    std::size_t read(std::span<std::uint8_t> out) override {
        std::unique_lock lock(mu_);
        cv_data_.wait_for(lock, std::chrono::milliseconds(20), [&] { return !queue_.empty() || done_; });
        std::size_t n = 0;
        while (!queue_.empty() && n + protocol::kFrameSize <= out.size()) {
            std::copy(queue_.front().begin(), queue_.front().end(), out.begin() + static_cast<std::ptrdiff_t>(n));
            n += protocol::kFrameSize;
            queue_.pop_front();
        }
        if (n > 0) cv_space_.notify_one();
        return n;
    }

    bool eof() const override {
        std::lock_guard lock(mu_);
        return done_ && queue_.empty();
    }

    void close() override {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_space_.notify_all();
        cv_data_.notify_all();
        if (thread_.joinable()) thread_.join();
    }

    DeviceStreamStats stats() const {
        std::lock_guard lock(mu_);
        return stats_;
    }

private:
    void run() {
        using clock = std::chrono::steady_clock;
        const auto start = clock::now();
        std::vector<PhysicalSample> chunk;
        std::uint64_t produced = 0;
        std::uint8_t seq = 0;
        while (true) {
            {
                std::lock_guard lock(mu_);
                if (stop_) break;
            }
            gen_->generate(chunk, 25);
            if (chunk.empty()) break;
            for (const auto& s : chunk) {
                if (rate_ > 0.0) {
                    const auto due = start + std::chrono::duration_cast<clock::duration>(
                                                 std::chrono::duration<double>(static_cast<double>(produced) /
                                                                               (kSampleRateHz * rate_)));
                    std::this_thread::sleep_until(due);
                }
                const auto bytes = protocol::encode_frame(protocol::physical_to_frame(s, seq++));
                std::unique_lock lock(mu_);
                if (policy_ == OverflowPolicy::block)
                    cv_space_.wait(lock, [&] { return queue_.size() < capacity_ || stop_; });
                if (stop_) break;
                if (queue_.size() >= capacity_) {
                    queue_.pop_front();
                    ++stats_.frames_dropped;
                }
                queue_.push_back(bytes);
                ++stats_.frames_sent;
                ++produced;
                lock.unlock();
                cv_data_.notify_one();
            }
        }
        {
            std::lock_guard lock(mu_);
            done_ = true;
        }
        cv_data_.notify_all();
    }

    std::shared_ptr<SampleGenerator> gen_;
    double rate_;
    OverflowPolicy policy_;
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_data_, cv_space_;
    std::deque<protocol::FrameBytes> queue_;
    DeviceStreamStats stats_;
    bool stop_ = false;
    bool done_ = false;
    std::thread thread_;
};

// Fixed bytes, handed out in chunks of `chunk` (tests, file replay).
class MemoryByteSource final : public ByteSource {
public:
    explicit MemoryByteSource(std::vector<std::uint8_t> bytes, std::size_t chunk = 4096)
        : bytes_(std::move(bytes)), chunk_(chunk) {}
    std::size_t read(std::span<std::uint8_t> out) override {
        const std::size_t n = std::min({chunk_, out.size(), bytes_.size() - pos_});
        std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), n, out.begin());
        pos_ += n;
        return n;
    }
    bool eof() const override { return pos_ >= bytes_.size(); }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t chunk_;
    std::size_t pos_ = 0;
};

// Decodes a byte source into physical samples.
class FrameReader {
public:
    explicit FrameReader(ByteSource& src) : src_(src), buf_(64 * protocol::kFrameSize) {}

    // Appends newly decoded samples; false once the source is exhausted.
    bool poll(std::vector<PhysicalSample>& out) {
        const std::size_t n = src_.read(buf_);
        if (n == 0) return !src_.eof();
        for (const auto& f : protocol::decode_stream(state_, std::span(buf_).first(n)))
            out.push_back(protocol::counts_to_physical(f));
        return true;
    }

    const protocol::DecodeStats& stats() const { return state_.stats; }

private:
    ByteSource& src_;
    std::vector<std::uint8_t> buf_;
    protocol::DecodeState state_;
};

}  // namespace semg
