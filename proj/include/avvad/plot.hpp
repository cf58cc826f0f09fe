// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "avvad/error.hpp"
#include "avvad/labels.hpp"
#include "avvad/tensor.hpp"

namespace avvad {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row-major

    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 250) {}

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || x >= width || y < 0 || y >= height) return;
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        pixels[i] = r;
        pixels[i + 1] = g;
        pixels[i + 2] = b;
    }
};

inline void write_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw DataError("short write: " + path);
}

namespace plot_detail {

struct Rgb {
    std::uint8_t r, g, b;
};

// Singing red, Speech blue, Others gray, Silence green; vocalizing gray,
// non-vocalizing black.
inline Rgb target_color(int cls) {
    switch (cls) {
        case 0: return {60, 160, 60};    // Silence
        case 1: return {40, 90, 200};    // Speech
        case 2: return {210, 50, 50};    // Singing
        default: return {130, 130, 130}; // Others
    }
}

inline Rgb visual_color(int cls) { return cls == 0 ? Rgb{120, 120, 120} : Rgb{10, 10, 10}; }

inline void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        img.set(x0, y0, c.r, c.g, c.b);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace plot_detail

// Renders the three stacked panels: audio heads, visual heads, A-V heads,
// with the ground-truth classes as a band along the top of each panel.
inline RgbImage render_timeline(const Tensor& audio_probs, const Tensor& visual_probs,
                                const Tensor& av_probs, const FrameLabelTrack* labels) {
    if (audio_probs.shape.size() != 2 || visual_probs.shape.size() != 2 ||
        av_probs.shape.size() != 2)
        throw UsageError("plot: tracks must be [T, heads] matrices");
    const long T = audio_probs.dim(0);
    if (T < 1) throw UsageError("plot: empty tracks");
    if (visual_probs.dim(0) != T || av_probs.dim(0) != T)
        throw UsageError("plot: track lengths differ");
    if (audio_probs.dim(1) != kNumAudioClasses || visual_probs.dim(1) != kNumVisualClasses ||
        av_probs.dim(1) != kNumTargetClasses)
        throw UsageError("plot: expected 4 audio, 2 visual and 4 target tracks");
    if (labels != nullptr && static_cast<long>(labels->n_frames()) != T)
        throw UsageError("plot: label track length differs from probability tracks");

    const int margin = 10, panel_h = 110, band_h = 6, gap = 12;
    const int plot_w = static_cast<int>(std::clamp(T, 320L, 1600L));
    const int width = margin * 2 + plot_w;
    const int height = margin * 2 + 3 * panel_h + 2 * gap;
    RgbImage img(width, height);

    auto x_of = [&](long t) {
        return margin + static_cast<int>((T == 1) ? 0 : t * (plot_w - 1) / (T - 1));
    };

    const std::array<const Tensor*, 3> panels = {&audio_probs, &visual_probs, &av_probs};
    for (int p = 0; p < 3; ++p) {
        const int top = margin + p * (panel_h + gap);
        const int bottom = top + panel_h - 1;
        // Frame.
        plot_detail::draw_line(img, margin, top, margin + plot_w - 1, top, {180, 180, 180});
        plot_detail::draw_line(img, margin, bottom, margin + plot_w - 1, bottom,
                               {180, 180, 180});

        // Ground-truth band.
        if (labels != nullptr) {
            for (long t = 0; t < T; ++t) {
                plot_detail::Rgb c{250, 250, 250};
                if (p == 0) c = plot_detail::target_color(static_cast<int>(labels->audio[t]));
                if (p == 1) c = plot_detail::visual_color(static_cast<int>(labels->visual[t]));
                if (p == 2) c = plot_detail::target_color(static_cast<int>(labels->target[t]));
                for (int y = 0; y < band_h; ++y) img.set(x_of(t), top + 1 + y, c.r, c.g, c.b);
            }
        }

        const Tensor& tracks = *panels[p];
        const long heads = tracks.dim(1);
        const int y_low = bottom - 2;
        const int y_high = top + band_h + 3;
        for (long h = 0; h < heads; ++h) {
            const plot_detail::Rgb c = (p == 1) ? plot_detail::visual_color(static_cast<int>(h))
                                                : plot_detail::target_color(static_cast<int>(h));
            for (long t = 0; t + 1 < T; ++t) {
                const double v0 = tracks.ptr()[t * heads + h];
                const double v1 = tracks.ptr()[(t + 1) * heads + h];
                const int y0 = y_low - static_cast<int>(std::lround(v0 * (y_low - y_high)));
                const int y1 = y_low - static_cast<int>(std::lround(v1 * (y_low - y_high)));
                plot_detail::draw_line(img, x_of(t), y0, x_of(t + 1), y1, c);
            }
            if (T == 1) {
                const double v = tracks.ptr()[h];
                img.set(x_of(0), y_low - static_cast<int>(std::lround(v * (y_low - y_high))),
                        c.r, c.g, c.b);
            }
        }
    }
    return img;
}

}  // namespace avvad
