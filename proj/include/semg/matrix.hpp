#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace semg {

inline constexpr int kEmgChannels = 8;
inline constexpr int kAccelChannels = 3;
inline constexpr double kSampleRateHz = 500.0;

// Channel-major block of multichannel samples (channels x samples).
class ChannelMatrix {
public:
    ChannelMatrix() = default;
    ChannelMatrix(std::size_t channels, std::size_t samples, double fill = 0.0)
        : channels_(channels), samples_(samples), data_(channels * samples, fill) {}

    std::size_t channels() const noexcept { return channels_; }
    std::size_t samples() const noexcept { return samples_; }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> channel(std::size_t c) {
        assert(c < channels_);
        return {data_.data() + c * samples_, samples_};
    }
    std::span<const double> channel(std::size_t c) const {
        assert(c < channels_);
        return {data_.data() + c * samples_, samples_};
    }

    double& operator()(std::size_t c, std::size_t n) { return data_[c * samples_ + n]; }
    double operator()(std::size_t c, std::size_t n) const { return data_[c * samples_ + n]; }

    // Columns [begin, begin + count) of every channel.
    ChannelMatrix slice(std::size_t begin, std::size_t count) const {
        assert(begin + count <= samples_);
        ChannelMatrix out(channels_, count);
        for (std::size_t c = 0; c < channels_; ++c) {
            auto src = channel(c).subspan(begin, count);
            std::copy(src.begin(), src.end(), out.channel(c).begin());
        }
        return out;
    }

    const std::vector<double>& raw() const noexcept { return data_; }

    friend bool operator==(const ChannelMatrix&, const ChannelMatrix&) = default;

private:
    std::size_t channels_ = 0;
    std::size_t samples_ = 0;
    std::vector<double> data_;
};

}  // namespace semg
