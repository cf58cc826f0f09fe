// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "avvad/error.hpp"

namespace avvad {

// Mono waveform, samples in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 0;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

inline void validate(const Waveform& w) {
    if (w.sample_rate <= 0) throw DataError("waveform: sample_rate must be positive");
    for (double s : w.samples)
        if (!std::isfinite(s)) throw DataError("waveform: non-finite sample");
}

namespace wav_detail {

inline std::uint32_t rd_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t rd_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void wr_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void wr_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace wav_detail

inline std::int16_t quantize_i16(double x) {
    const double v = std::clamp(x, -1.0, 1.0) * 32767.0;
    return static_cast<std::int16_t>(std::lround(v));
}

// Snaps samples onto the 16-bit PCM grid. The synthesizer applies this before
// returning clips so a write/read cycle through WAV is the identity.
inline void quantize_to_pcm16(Waveform& w) {
    for (double& s : w.samples) s = quantize_i16(s) / 32767.0;
}

inline std::vector<std::uint8_t> encode_wav_pcm16(const Waveform& w) {
    const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
    const std::uint32_t data_bytes = n * 2;
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    auto tag = [&out](const char* t) { out.insert(out.end(), t, t + 4); };

    tag("RIFF");
    wav_detail::wr_u32(out, 36 + data_bytes);
    tag("WAVE");
    tag("fmt ");
    wav_detail::wr_u32(out, 16);
    wav_detail::wr_u16(out, 1);  // PCM
    wav_detail::wr_u16(out, 1);  // mono
    wav_detail::wr_u32(out, static_cast<std::uint32_t>(w.sample_rate));
    wav_detail::wr_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
    wav_detail::wr_u16(out, 2);
    wav_detail::wr_u16(out, 16);
    tag("data");
    wav_detail::wr_u32(out, data_bytes);
    for (double s : w.samples) {
        const std::int16_t q = quantize_i16(s);
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
        out.push_back(static_cast<std::uint8_t>((q >> 8) & 0xff));
    }
    return out;
}

inline void write_wav(const std::string& path, const Waveform& w) {
    const auto bytes = encode_wav_pcm16(w);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write: " + path);
}

inline Waveform decode_wav_pcm16(const std::vector<std::uint8_t>& bytes, const std::string& ctx) {
    using namespace wav_detail;
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw DataError("not a RIFF/WAVE file: " + ctx);

    Waveform w;
    int channels = 0;
    int bits = 0;
    bool got_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const std::uint32_t size = rd_u32(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) throw DataError("truncated WAV chunk: " + ctx);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) throw DataError("malformed fmt chunk: " + ctx);
            const std::uint16_t format = rd_u16(bytes.data() + body);
            channels = rd_u16(bytes.data() + body + 2);
            w.sample_rate = static_cast<int>(rd_u32(bytes.data() + body + 4));
            bits = rd_u16(bytes.data() + body + 14);
            if (format != 1) throw DataError("unsupported WAV format (PCM only): " + ctx);
            got_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (!got_fmt) throw DataError("WAV data before fmt chunk: " + ctx);
            if (bits != 16) throw DataError("unsupported bit depth (16-bit only): " + ctx);
            if (channels < 1) throw DataError("malformed channel count: " + ctx);
            const std::size_t n_frames = size / (2 * static_cast<std::size_t>(channels));
            w.samples.resize(n_frames);
            for (std::size_t i = 0; i < n_frames; ++i) {
                // Downmix by taking channel 0; the corpus is mono anyway.
                const std::uint8_t* p = bytes.data() + body + i * 2 * channels;
                const std::int16_t q = static_cast<std::int16_t>(p[0] | (p[1] << 8));
                w.samples[i] = q / 32767.0;
            }
            return w;
        }
        pos = body + size + (size & 1);
    }
    throw DataError("WAV file has no data chunk: " + ctx);
}

inline Waveform read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_wav_pcm16(bytes, path);
}

// Raw little-endian float32 stream; the caller supplies the rate.
inline Waveform read_raw_f32(const std::string& path, int sample_rate) {
    if (sample_rate <= 0) throw UsageError("raw stream: sample rate must be positive");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) throw DataError("raw f32 stream length not a multiple of 4: " + path);
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(bytes.size() / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * 4, 4);
        if (!std::isfinite(f)) throw DataError("raw f32 stream: non-finite sample in " + path);
        w.samples[i] = f;
    }
    return w;
}

// Linear-interpolation resampler; adequate for ingesting foreign rates.
inline Waveform resample_linear(const Waveform& in, int target_rate) {
    if (target_rate <= 0) throw UsageError("resample: target rate must be positive");
    if (in.sample_rate == target_rate || in.samples.empty()) {
        Waveform w = in;
        w.sample_rate = target_rate ? target_rate : in.sample_rate;
        return w;
    }
    Waveform out;
    out.sample_rate = target_rate;
    const double ratio = static_cast<double>(in.sample_rate) / target_rate;
    const std::size_t n_out =
        static_cast<std::size_t>(std::floor((in.samples.size() - 1) / ratio)) + 1;
    out.samples.resize(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double t = i * ratio;
        const std::size_t i0 = static_cast<std::size_t>(t);
        const std::size_t i1 = std::min(i0 + 1, in.samples.size() - 1);
        const double frac = t - static_cast<double>(i0);
        out.samples[i] = in.samples[i0] * (1.0 - frac) + in.samples[i1] * frac;
    }
    return out;
}

}  // namespace avvad
