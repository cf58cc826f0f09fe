// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "avvad/error.hpp"
#include "avvad/tensor.hpp"
#include "avvad/wav.hpp"

namespace avvad {

// Log-mel feature matrix, rows are frames, 64 bands wide.
struct MelSpectrogram {
    Tensor frames;         // [T, n_mels], natural-log energies
    double frame_hop = 0;  // seconds
    double frame_length = 0;

    long n_frames() const { return frames.shape.empty() ? 0 : frames.dim(0); }
    long n_bands() const { return frames.shape.size() < 2 ? 0 : frames.dim(1); }
};

struct FrontendConfig {
    int sample_rate = 16000;  // canonical rate; foreign audio is resampled on ingest
    double window_s = 0.044;
    double overlap = 0.5;
    int n_mels = 64;
    double fmin_hz = 0.0;
    double fmax_hz = 8000.0;
    double energy_floor = 1e-10;
};

namespace dsp {

inline int window_samples(double window_s, int sample_rate) {
    int n = static_cast<int>(std::floor(window_s * sample_rate));
    if (n % 2 != 0) --n;  // even length keeps the FFT bin grid tidy
    return n;
}

inline int hop_samples(int window, double overlap) {
    const int hop = static_cast<int>(std::lround(window * (1.0 - overlap)));
    return std::max(hop, 1);
}

// Frames start every `hop` samples from zero; a new frame is emitted as long
// as the previous ones have not covered the whole signal, and the tail of the
// last frame is zero padded.
inline long frame_count(long n_samples, int window, int hop) {
    if (n_samples <= 0) return 0;
    long count = 1;
    while ((count - 1) * static_cast<long>(hop) + window < n_samples) ++count;
    return count;
}

inline std::vector<double> hamming_window(int length) {
    std::vector<double> w(length);
    if (length == 1) {
        w[0] = 1.0;
        return w;
    }
    constexpr double kTau = 2.0 * 3.14159265358979323846;
    for (int n = 0; n < length; ++n)
        w[n] = 0.54 - 0.46 * std::cos(kTau * n / (length - 1));
    return w;
}

inline int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw UsageError("fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    constexpr double kPi = 3.14159265358979323846;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank over FFT bins, [n_mels, n_fft/2 + 1].
inline std::vector<std::vector<double>> mel_filterbank(int n_mels, int n_fft, int sample_rate,
                                                       double fmin, double fmax) {
    const int n_bins = n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(fmin);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> centers_hz(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        centers_hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

    std::vector<std::vector<double>> filters(n_mels, std::vector<double>(n_bins, 0.0));
    const double bin_hz = static_cast<double>(sample_rate) / n_fft;
    for (int m = 0; m < n_mels; ++m) {
        const double left = centers_hz[m];
        const double center = centers_hz[m + 1];
        const double right = centers_hz[m + 2];
        for (int b = 0; b < n_bins; ++b) {
            const double f = b * bin_hz;
            if (f <= left || f >= right) continue;
            filters[m][b] = (f <= center) ? (f - left) / (center - left)
                                          : (right - f) / (right - center);
        }
    }
    return filters;
}

inline double mel_band_center_hz(int band, int n_mels, double fmin, double fmax) {
    const double mel_lo = hz_to_mel(fmin);
    const double mel_hi = hz_to_mel(fmax);
    return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (band + 1) / (n_mels + 1));
}

}  // namespace dsp

// Slices the waveform into Hamming-windowed frames, one per row. The final
// frame is zero padded when the window overruns the signal.
inline Tensor frame_and_window(const Waveform& w, double window_s, double overlap) {
    if (w.samples.empty()) throw DataError("frame_and_window: empty waveform");
    if (w.sample_rate <= 0) throw DataError("frame_and_window: sample_rate must be positive");
    if (overlap < 0.0 || overlap >= 1.0)
        throw UsageError("frame_and_window: overlap must be in [0, 1)");
    for (double s : w.samples)
        if (!std::isfinite(s)) throw DataError("frame_and_window: non-finite sample");

    const int win = dsp::window_samples(window_s, w.sample_rate);
    if (win < 2) throw UsageError("frame_and_window: window too short for sample rate");
    const int hop = dsp::hop_samples(win, overlap);
    const long n = static_cast<long>(w.samples.size());
    const long frames = dsp::frame_count(n, win, hop);

    const std::vector<double> window = dsp::hamming_window(win);
    Tensor out({frames, win});
    for (long f = 0; f < frames; ++f) {
        const long start = f * hop;
        double* row = out.ptr() + f * win;
        for (int i = 0; i < win; ++i) {
            const long idx = start + i;
            row[i] = (idx < n) ? w.samples[idx] * window[i] : 0.0;
        }
    }
    return out;
}

// Power spectra through the triangular mel filterbank, floored and logged.
inline MelSpectrogram log_mel(const Tensor& framed, int sample_rate, int n_mels, double floor,
                              double fmin = 0.0, double fmax = -1.0) {
    if (n_mels != 64) throw UsageError("log_mel: the feature contract fixes 64 mel bands");
    if (floor <= 0.0) throw UsageError("log_mel: energy floor must be positive");
    if (framed.shape.size() != 2 || framed.dim(0) < 1)
        throw UsageError("log_mel: expected a [frames, window] matrix");
    require_finite(framed, "log_mel input");
    if (fmax <= 0.0) fmax = sample_rate / 2.0;

    const long frames = framed.dim(0);
    const int win = static_cast<int>(framed.dim(1));
    const int n_fft = dsp::next_pow2(win);
    const int n_bins = n_fft / 2 + 1;
    const auto filters = dsp::mel_filterbank(n_mels, n_fft, sample_rate, fmin, fmax);

    MelSpectrogram mel;
    mel.frames.resize({frames, n_mels});
    mel.frame_length = static_cast<double>(win) / sample_rate;
    mel.frame_hop = 0.0;  // callers that framed the signal themselves fill this in

    std::vector<std::complex<double>> buf(n_fft);
    std::vector<double> power(n_bins);
    for (long f = 0; f < frames; ++f) {
        const double* row = framed.ptr() + f * win;
        for (int i = 0; i < n_fft; ++i)
            buf[i] = (i < win) ? std::complex<double>(row[i], 0.0) : std::complex<double>(0.0, 0.0);
        dsp::fft(buf);
        for (int b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);

        double* out_row = mel.frames.ptr() + f * n_mels;
        for (int m = 0; m < n_mels; ++m) {
            double e = 0.0;
            const auto& filt = filters[m];
            for (int b = 0; b < n_bins; ++b) e += filt[b] * power[b];
            out_row[m] = std::log(std::max(e, floor));
        }
    }
    return mel;
}

// Waveform straight to log-mel features at the canonical rate.
inline MelSpectrogram compute_mel(const Waveform& input, const FrontendConfig& cfg = {}) {
    validate(input);
    const Waveform w = (input.sample_rate == cfg.sample_rate)
                           ? input
                           : resample_linear(input, cfg.sample_rate);
    Tensor framed = frame_and_window(w, cfg.window_s, cfg.overlap);
    MelSpectrogram mel =
        log_mel(framed, cfg.sample_rate, cfg.n_mels, cfg.energy_floor, cfg.fmin_hz, cfg.fmax_hz);
    const int win = dsp::window_samples(cfg.window_s, cfg.sample_rate);
    mel.frame_hop = static_cast<double>(dsp::hop_samples(win, cfg.overlap)) / cfg.sample_rate;
    return mel;
}

}  // namespace avvad
