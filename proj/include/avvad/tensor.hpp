// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "avvad/error.hpp"

namespace avvad {

// Dense row-major tensor of doubles. All model math runs in double so that
// finite-difference gradient checks are meaningful.
struct Tensor {
    std::vector<long> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<long> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

    static long numel_of(const std::vector<long>& s) {
        long n = 1;
        for (long d : s) n *= d;
        return n;
    }

    long numel() const { return static_cast<long>(data.size()); }
    long dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    // Keeps the existing buffer when the element count is unchanged; callers
    // that need zeroed storage use fill().
    void resize(std::vector<long> s) {
        const long n = numel_of(s);
        shape = std::move(s);
        if (static_cast<long>(data.size()) != n) data.assign(n, 0.0);
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_finite(const Tensor& t, const std::string& where) {
    if (!t.all_finite()) throw NumericError("non-finite values at " + where);
}

// 8-bit grayscale image stack, row-major [frames, height, width].
struct ImageSequence {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    ImageSequence() = default;
    ImageSequence(int n, int h, int w)
        : frames(n), height(h), width(w), pixels(static_cast<std::size_t>(n) * h * w, 0) {}

    std::uint8_t& at(int f, int y, int x) {
        return pixels[(static_cast<std::size_t>(f) * height + y) * width + x];
    }
    std::uint8_t at(int f, int y, int x) const {
        return pixels[(static_cast<std::size_t>(f) * height + y) * width + x];
    }
};

}  // namespace avvad
