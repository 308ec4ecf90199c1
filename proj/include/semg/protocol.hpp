#pragma once
// Wire codec for the wristband byte stream.
//
// Frame layout (35 bytes, all multi-byte fields big-endian):
//   [0]      0xAA  sync
//   [1]      0x55  sync
//   [2]      seq   wrapping 8-bit counter
//   [3..26]  8 x 24-bit two's-complement EMG counts
//   [27..32] 3 x 16-bit two's-complement accel counts (x, y, z)
//   [33..34] CRC-16/CCITT-FALSE over bytes [2..32]

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semg/errors.hpp"
#include "semg/matrix.hpp"

namespace semg::protocol {

inline constexpr std::uint8_t kSync0 = 0xAA;
inline constexpr std::uint8_t kSync1 = 0x55;
inline constexpr std::size_t kFrameSize = 35;
inline constexpr std::size_t kCrcSpan = 31;  // seq + 30 payload bytes
inline constexpr std::int32_t kEmgMin = -(1 << 23);
inline constexpr std::int32_t kEmgMax = (1 << 23) - 1;

// ADS1299-style front end: Vref 4.5 V, PGA gain 24.
inline constexpr double kEmgLsbMicrovolts = 4.5 / (24.0 * kEmgMax) * 1e6;
inline constexpr double kAccelLsbG = 1.0 / 4096.0;
inline constexpr double kFrameRateHz = kSampleRateHz;

struct Frame {
    std::uint8_t seq = 0;
    std::array<std::int32_t, kEmgChannels> emg_counts{};
    std::array<std::int16_t, kAccelChannels> accel_counts{};
    std::uint16_t crc = 0;  // filled in by the codec

    friend bool operator==(const Frame&, const Frame&) = default;
};

using FrameBytes = std::array<std::uint8_t, kFrameSize>;

namespace detail {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
    std::array<std::uint16_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint16_t crc = static_cast<std::uint16_t>(i << 8);
        for (int b = 0; b < 8; ++b)
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
        table[i] = crc;
    }
    return table;
}

inline constexpr auto kCrcTable = make_crc_table();

}  // namespace detail

// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
constexpr std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> bytes) {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t b : bytes)
        crc = static_cast<std::uint16_t>((crc << 8) ^ detail::kCrcTable[((crc >> 8) ^ b) & 0xFF]);
    return crc;
}

inline FrameBytes encode_frame(const Frame& f) {
    FrameBytes out{};
    out[0] = kSync0;
    out[1] = kSync1;
    out[2] = f.seq;
    std::size_t pos = 3;
    for (std::size_t i = 0; i < f.emg_counts.size(); ++i) {
        const std::int32_t v = f.emg_counts[i];
        if (v < kEmgMin || v > kEmgMax)
            throw RangeError("emg_counts[" + std::to_string(i) + "] = " + std::to_string(v) +
                             " outside 24-bit range");
        const auto u = static_cast<std::uint32_t>(v);
        out[pos++] = static_cast<std::uint8_t>(u >> 16);
        out[pos++] = static_cast<std::uint8_t>(u >> 8);
        out[pos++] = static_cast<std::uint8_t>(u);
    }
    for (std::int16_t a : f.accel_counts) {
        const auto u = static_cast<std::uint16_t>(a);
        out[pos++] = static_cast<std::uint8_t>(u >> 8);
        out[pos++] = static_cast<std::uint8_t>(u);
    }
    const std::uint16_t crc = crc16_ccitt_false(std::span(out).subspan(2, kCrcSpan));
    out[pos++] = static_cast<std::uint8_t>(crc >> 8);
    out[pos] = static_cast<std::uint8_t>(crc);
    return out;
}

// Parses one frame from exactly kFrameSize bytes starting at the sync word.
// Returns nullopt when the sync word or CRC does not match.
inline std::optional<Frame> parse_frame(std::span<const std::uint8_t> b) {
    if (b.size() < kFrameSize || b[0] != kSync0 || b[1] != kSync1) return std::nullopt;
    const std::uint16_t wire_crc = static_cast<std::uint16_t>((b[33] << 8) | b[34]);
    if (crc16_ccitt_false(b.subspan(2, kCrcSpan)) != wire_crc) return std::nullopt;

    Frame f;
    f.seq = b[2];
    std::size_t pos = 3;
    for (auto& v : f.emg_counts) {
        std::uint32_t u = (std::uint32_t{b[pos]} << 16) | (std::uint32_t{b[pos + 1]} << 8) | b[pos + 2];
        if (u & 0x800000u) u |= 0xFF000000u;  // sign-extend
        v = static_cast<std::int32_t>(u);
        pos += 3;
    }
    for (auto& a : f.accel_counts) {
        a = static_cast<std::int16_t>(static_cast<std::uint16_t>((b[pos] << 8) | b[pos + 1]));
        pos += 2;
    }
    f.crc = wire_crc;
    return f;
}

// Returns f with its crc field set to what encode_frame will put on the wire.
inline Frame with_crc(Frame f) {
    const FrameBytes bytes = encode_frame(f);
    f.crc = static_cast<std::uint16_t>((bytes[33] << 8) | bytes[34]);
    return f;
}

struct DecodeStats {
    std::uint64_t frames_ok = 0;
    std::uint64_t frames_dropped = 0;
    std::uint64_t resyncs = 0;
    std::uint64_t bytes_skipped = 0;

    friend bool operator==(const DecodeStats&, const DecodeStats&) = default;
};

// Per-connection decoder state. Movable, not meant to be shared between threads.
struct DecodeState {
    std::vector<std::uint8_t> buffer;
    std::size_t head = 0;  // first unconsumed byte in buffer
    std::optional<std::uint8_t> last_seq;
    DecodeStats stats;
};

// Feeds a chunk of bytes and returns every complete, CRC-valid frame found.
// On a CRC failure the scan skips one byte past the false sync word.
inline std::vector<Frame> decode_stream(DecodeState& st, std::span<const std::uint8_t> chunk) {
    std::vector<Frame> out;
    st.buffer.insert(st.buffer.end(), chunk.begin(), chunk.end());

    auto& buf = st.buffer;
    std::size_t i = st.head;
    while (true) {
        // Look for the sync word.
        std::size_t s = i;
        while (s + 1 < buf.size() && !(buf[s] == kSync0 && buf[s + 1] == kSync1)) ++s;
        if (s + 1 >= buf.size()) {
            // Keep a trailing 0xAA that may start a sync word in the next chunk.
            const std::size_t keep = (s < buf.size() && buf[s] == kSync0) ? s : buf.size();
            st.stats.bytes_skipped += keep - i;
            i = keep;
            break;
        }
        st.stats.bytes_skipped += s - i;
        i = s;
        if (buf.size() - i < kFrameSize) break;  // wait for the rest of the frame

        auto frame = parse_frame(std::span<const std::uint8_t>(buf).subspan(i, kFrameSize));
        if (!frame) {
            ++st.stats.resyncs;
            ++i;
            continue;
        }
        if (st.last_seq) {
            const auto gap = static_cast<std::uint8_t>(frame->seq - *st.last_seq - 1);
            st.stats.frames_dropped += gap;
        }
        st.last_seq = frame->seq;
        ++st.stats.frames_ok;
        out.push_back(*frame);
        i += kFrameSize;
    }

    // Compact once the consumed prefix dominates the buffer.
    if (i > 4096 || i == buf.size()) {
        buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(i));
        i = 0;
    }
    st.head = i;
    return out;
}

struct PhysicalSample {
    std::array<double, kEmgChannels> emg_uv{};
    std::array<double, kAccelChannels> accel_g{};
};

inline PhysicalSample counts_to_physical(const Frame& f) {
    PhysicalSample s;
    for (std::size_t i = 0; i < s.emg_uv.size(); ++i)
        s.emg_uv[i] = f.emg_counts[i] * kEmgLsbMicrovolts;
    for (std::size_t i = 0; i < s.accel_g.size(); ++i)
        s.accel_g[i] = f.accel_counts[i] * kAccelLsbG;
    return s;
}

// Nearest-count quantization with saturation at the converter limits.
inline std::int32_t emg_to_counts(double uv) {
    const double c = std::nearbyint(uv / kEmgLsbMicrovolts);
    if (c < kEmgMin) return kEmgMin;
    if (c > kEmgMax) return kEmgMax;
    return static_cast<std::int32_t>(c);
}

inline std::int16_t accel_to_counts(double g) {
    const double c = std::nearbyint(g / kAccelLsbG);
    if (c < -32768.0) return -32768;
    if (c > 32767.0) return 32767;
    return static_cast<std::int16_t>(c);
}

inline Frame physical_to_frame(const PhysicalSample& s, std::uint8_t seq) {
    Frame f;
    f.seq = seq;
    for (std::size_t i = 0; i < s.emg_uv.size(); ++i) f.emg_counts[i] = emg_to_counts(s.emg_uv[i]);
    for (std::size_t i = 0; i < s.accel_g.size(); ++i) f.accel_counts[i] = accel_to_counts(s.accel_g[i]);
    return with_crc(f);
}

// Rounds a physical sample onto the converter grid (what a device would report).
inline PhysicalSample quantize(const PhysicalSample& s) {
    return counts_to_physical(physical_to_frame(s, 0));
}

}  // namespace semg::protocol
