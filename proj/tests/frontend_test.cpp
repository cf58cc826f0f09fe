// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>

#include "avvad/features.hpp"
#include "avvad/rng.hpp"
#include "avvad/wav.hpp"

using namespace avvad;

namespace {

// Brute-force frame counter: keep emitting hop-spaced windows until the
// previous ones cover the whole signal; the tail window is zero padded.
long frame_count_oracle(long n_samples, int window, int hop) {
    if (n_samples <= 0) return 0;
    long count = 1;
    while ((count - 1) * static_cast<long>(hop) + window < n_samples) ++count;
    return count;
}

Waveform sine_wave(double freq_hz, double duration_s, int sr, double amp = 0.5) {
    Waveform w;
    w.sample_rate = sr;
    const long n = static_cast<long>(duration_s * sr);
    w.samples.resize(n);
    for (long i = 0; i < n; ++i)
        w.samples[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / sr);
    return w;
}

Waveform noise_wave(double duration_s, int sr, double amp, std::uint64_t seed) {
    Rng rng(seed);
    Waveform w;
    w.sample_rate = sr;
    w.samples.resize(static_cast<long>(duration_s * sr));
    for (auto& s : w.samples) s = amp * rng.uniform(-1.0, 1.0);
    return w;
}

}  // namespace

TEST(Framing, SixteenKilohertzGeometry) {
    EXPECT_EQ(dsp::window_samples(0.044, 16000), 704);
    EXPECT_EQ(dsp::hop_samples(704, 0.5), 352);
}

TEST(Framing, OneSecondGivesFortyFiveFrames) {
    Waveform w = noise_wave(1.0, 16000, 0.5, 7);
    ASSERT_EQ(w.samples.size(), 16000u);
    Tensor framed = frame_and_window(w, 0.044, 0.5);
    EXPECT_EQ(framed.dim(0), frame_count_oracle(16000, 704, 352));
    EXPECT_EQ(framed.dim(0), 45);
    EXPECT_EQ(framed.dim(1), 704);
}

TEST(Framing, CountMatchesOracleProperty) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const long n = rng.uniform_int(1, 40000);
        Waveform w;
        w.sample_rate = 16000;
        w.samples.assign(n, 0.1);
        Tensor framed = frame_and_window(w, 0.044, 0.5);
        EXPECT_EQ(framed.dim(0), frame_count_oracle(n, 704, 352)) << "n=" << n;
    }
}

TEST(Framing, ZeroInputGivesZeroFrames) {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(16000, 0.0);
    Tensor framed = frame_and_window(w, 0.044, 0.5);
    for (double v : framed.data) EXPECT_EQ(v, 0.0);
}

TEST(Framing, TailIsZeroPadded) {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(900, 1.0);  // more than one window, not an exact hop multiple
    Tensor framed = frame_and_window(w, 0.044, 0.5);
    ASSERT_EQ(framed.dim(0), 2);
    // Second frame starts at 352 and runs past the signal end at 900.
    const double* row = framed.ptr() + 704;
    for (int i = 900 - 352; i < 704; ++i) EXPECT_EQ(row[i], 0.0);
}

TEST(Framing, Errors) {
    Waveform empty;
    empty.sample_rate = 16000;
    EXPECT_THROW(frame_and_window(empty, 0.044, 0.5), DataError);

    Waveform w = noise_wave(0.1, 16000, 0.5, 3);
    EXPECT_THROW(frame_and_window(w, 0.044, 1.0), UsageError);
    EXPECT_THROW(frame_and_window(w, 0.044, -0.1), UsageError);

    Waveform bad = w;
    bad.samples[5] = std::nan("");
    EXPECT_THROW(frame_and_window(bad, 0.044, 0.5), DataError);
}

TEST(Framing, HammingWindowApplied) {
    const auto win = dsp::hamming_window(704);
    EXPECT_NEAR(win[0], 0.08, 1e-12);
    EXPECT_NEAR(win[703], 0.08, 1e-12);
    const double peak = *std::max_element(win.begin(), win.end());
    EXPECT_NEAR(peak, 1.0, 1e-4);

    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(704, 1.0);
    Tensor framed = frame_and_window(w, 0.044, 0.5);
    for (int i = 0; i < 704; ++i) EXPECT_DOUBLE_EQ(framed.ptr()[i], win[i]);
}

TEST(Fft, MatchesNaiveDft) {
    Rng rng(5);
    std::vector<std::complex<double>> a(64);
    for (auto& v : a) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto b = a;
    dsp::fft(b);
    for (int k = 0; k < 64; ++k) {
        std::complex<double> sum = 0.0;
        for (int n = 0; n < 64; ++n)
            sum += a[n] * std::polar(1.0, -2.0 * M_PI * k * n / 64.0);
        EXPECT_NEAR(std::abs(b[k] - sum), 0.0, 1e-9);
    }
}

TEST(LogMel, SilenceHitsTheFloor) {
    Tensor framed({3, 704});
    MelSpectrogram mel = log_mel(framed, 16000, 64, 1e-10);
    EXPECT_EQ(mel.n_bands(), 64);
    for (double v : mel.frames.data) EXPECT_DOUBLE_EQ(v, std::log(1e-10));
}

TEST(LogMel, SineAtBandCenterPeaksThere) {
    for (int band : {8, 20, 40, 55}) {
        const double center = dsp::mel_band_center_hz(band, 64, 0.0, 8000.0);
        Waveform w = sine_wave(center, 0.5, 16000);
        MelSpectrogram mel = compute_mel(w);
        for (long t = 1; t + 1 < mel.n_frames(); ++t) {  // skip edge frames
            const double* row = mel.frames.ptr() + t * 64;
            const long argmax = std::max_element(row, row + 64) - row;
            EXPECT_EQ(argmax, band) << "band " << band << " frame " << t;
        }
    }
}

TEST(LogMel, GainShiftsCellsByTwoLogG) {
    Waveform w = noise_wave(0.4, 16000, 0.2, 99);
    Waveform loud = w;
    const double g = 3.7;
    for (auto& s : loud.samples) s *= g;

    MelSpectrogram a = compute_mel(w);
    MelSpectrogram b = compute_mel(loud);
    const double floor_log = std::log(1e-10);
    for (long i = 0; i < a.frames.numel(); ++i) {
        if (a.frames.data[i] <= floor_log + 1.0) continue;  // near the floor
        EXPECT_NEAR(b.frames.data[i] - a.frames.data[i], 2.0 * std::log(g), 1e-6);
    }
}

TEST(LogMel, ScalingAdditivityProperty) {
    Rng rng(12345);
    for (int trial = 0; trial < 10; ++trial) {
        Waveform w = noise_wave(0.15, 16000, 0.3, 1000 + trial);
        const double c = std::exp(rng.uniform(-1.5, 1.0));
        Waveform scaled = w;
        for (auto& s : scaled.samples) s *= c;
        MelSpectrogram a = compute_mel(w);
        MelSpectrogram b = compute_mel(scaled);
        for (long i = 0; i < a.frames.numel(); ++i) {
            if (a.frames.data[i] < std::log(1e-10) + 2.0 ||
                b.frames.data[i] < std::log(1e-10) + 2.0)
                continue;
            EXPECT_NEAR(b.frames.data[i] - a.frames.data[i], 2.0 * std::log(c), 1e-6);
        }
    }
}

TEST(LogMel, SixtyFourBandsAlways) {
    for (double dur : {0.05, 0.33, 1.0}) {
        MelSpectrogram mel = compute_mel(noise_wave(dur, 16000, 0.4, 4));
        EXPECT_EQ(mel.n_bands(), 64);
        EXPECT_GE(mel.n_frames(), 1);
    }
}

TEST(LogMel, Errors) {
    Tensor framed({2, 704});
    EXPECT_THROW(log_mel(framed, 16000, 32, 1e-10), UsageError);
    EXPECT_THROW(log_mel(framed, 16000, 64, 0.0), UsageError);
    framed.data[3] = std::nan("");
    EXPECT_THROW(log_mel(framed, 16000, 64, 1e-10), NumericError);
}

TEST(Wav, RoundTripIsIdentityOnPcmGrid) {
    Waveform w = noise_wave(0.3, 16000, 0.8, 21);
    quantize_to_pcm16(w);
    const std::string path = (std::filesystem::temp_directory_path() / "avvad_wav_rt.wav").string();
    write_wav(path, w);
    Waveform back = read_wav(path);
    ASSERT_EQ(back.samples.size(), w.samples.size());
    EXPECT_EQ(back.sample_rate, 16000);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        EXPECT_DOUBLE_EQ(back.samples[i], w.samples[i]);
    std::filesystem::remove(path);
}

TEST(Wav, RejectsGarbage) {
    const std::string path =
        (std::filesystem::temp_directory_path() / "avvad_wav_bad.wav").string();
    std::ofstream out(path, std::ios::binary);
    out << "definitely not a wav";
    out.close();
    EXPECT_THROW(read_wav(path), DataError);
    std::filesystem::remove(path);
}

TEST(Wav, RawF32AndResample) {
    const std::string path = (std::filesystem::temp_directory_path() / "avvad_raw.f32").string();
    {
        std::ofstream out(path, std::ios::binary);
        for (float v : {0.1f, -0.2f, 0.3f}) out.write(reinterpret_cast<char*>(&v), 4);
    }
    Waveform w = read_raw_f32(path, 8000);
    ASSERT_EQ(w.samples.size(), 3u);
    EXPECT_NEAR(w.samples[1], -0.2, 1e-7);

    Waveform up = resample_linear(w, 16000);
    EXPECT_EQ(up.sample_rate, 16000);
    EXPECT_EQ(up.samples.size(), 5u);
    EXPECT_NEAR(up.samples[1], (w.samples[0] + w.samples[1]) / 2.0, 1e-12);
    std::filesystem::remove(path);
}
