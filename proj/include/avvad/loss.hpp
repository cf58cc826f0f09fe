// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cmath>
#include <string>

#include "avvad/error.hpp"
#include "avvad/labels.hpp"
#include "avvad/model.hpp"
#include "avvad/tensor.hpp"

namespace avvad {

// Scale factors for the ten per-head binary cross-entropy terms, ordered
// audio (sil, spe, sin, oth), visual (voc, non-voc), A-V (sil, spe, sin, oth).
struct LossWeights {
    std::array<double, 10> lambda{1, 1, 1, 1, 1, 1, 1, 1, 1, 1};

    static const std::array<std::string, 10>& names() {
        static const std::array<std::string, 10> n = {
            "a_sil", "a_spe", "a_sin", "a_oth", "v_voc",
            "v_nonvoc", "av_sil", "av_spe", "av_sin", "av_oth"};
        return n;
    }

    void validate() const {
        for (double l : lambda)
            if (l < 0.0 || !std::isfinite(l))
                throw UsageError("loss weights must be finite and non-negative");
    }
};

struct LossBreakdown {
    std::array<double, 10> terms{};  // unweighted per-head mean BCE
    double total = 0.0;              // sum of lambda_i * terms[i]
};

// One-hot targets per label space on the model's frame grid.
struct TargetTensors {
    Tensor audio;   // [B, T, 4]
    Tensor visual;  // [B, T, 2]
    Tensor target;  // [B, T, 4]
};

inline constexpr double kProbEps = 1e-7;

namespace loss_detail {

// Mean frame-wise BCE for one head; also writes dL/dp (unweighted) if grad
// is non-null. Probabilities are clamped to [eps, 1-eps] before the log and
// the gradient is zero in the clamped region.
inline double bce_head(const Tensor& probs, const Tensor& targets, int head, int n_heads,
                       Tensor* grad) {
    const long n = probs.numel() / n_heads;
    double sum = 0.0;
    for (long i = 0; i < n; ++i) {
        const double p_raw = probs.data[i * n_heads + head];
        const double y = targets.data[i * n_heads + head];
        const double p = std::clamp(p_raw, kProbEps, 1.0 - kProbEps);
        sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        if (grad != nullptr && p_raw > kProbEps && p_raw < 1.0 - kProbEps)
            grad->data[i * n_heads + head] = (p - y) / (p * (1.0 - p)) / static_cast<double>(n);
    }
    return sum / static_cast<double>(n);
}

}  // namespace loss_detail

// The composite multi-branch loss: ten independent sigmoid BCE terms scaled
// by their lambdas. When grads is non-null the dL/dp tensors (already
// lambda-scaled) are produced for backprop.
struct LossGrads {
    Tensor daudio, dvisual, dav;
};

inline LossBreakdown total_loss(const ModelOutput& out, const TargetTensors& targets,
                                const LossWeights& weights, LossGrads* grads = nullptr) {
    weights.validate();
    if (out.audio_probs.shape != targets.audio.shape ||
        out.visual_probs.shape != targets.visual.shape ||
        out.av_probs.shape != targets.target.shape)
        throw UsageError("total_loss: outputs and targets are not frame-aligned");

    Tensor da, dv, dt;
    Tensor* pa = nullptr;
    Tensor* pv = nullptr;
    Tensor* pt = nullptr;
    if (grads != nullptr) {
        da.resize(out.audio_probs.shape);
        dv.resize(out.visual_probs.shape);
        dt.resize(out.av_probs.shape);
        pa = &da;
        pv = &dv;
        pt = &dt;
    }

    LossBreakdown loss;
    for (int h = 0; h < kNumAudioClasses; ++h)
        loss.terms[h] = loss_detail::bce_head(out.audio_probs, targets.audio, h,
                                              kNumAudioClasses, pa);
    for (int h = 0; h < kNumVisualClasses; ++h)
        loss.terms[4 + h] = loss_detail::bce_head(out.visual_probs, targets.visual, h,
                                                  kNumVisualClasses, pv);
    for (int h = 0; h < kNumTargetClasses; ++h)
        loss.terms[6 + h] = loss_detail::bce_head(out.av_probs, targets.target, h,
                                                  kNumTargetClasses, pt);

    for (int i = 0; i < 10; ++i) loss.total += weights.lambda[i] * loss.terms[i];

    if (grads != nullptr) {
        // Scale each head's probability gradient by its lambda.
        for (long i = 0; i < da.numel(); ++i)
            da.data[i] *= weights.lambda[i % kNumAudioClasses];
        for (long i = 0; i < dv.numel(); ++i)
            dv.data[i] *= weights.lambda[4 + i % kNumVisualClasses];
        for (long i = 0; i < dt.numel(); ++i)
            dt.data[i] *= weights.lambda[6 + i % kNumTargetClasses];
        grads->daudio = std::move(da);
        grads->dvisual = std::move(dv);
        grads->dav = std::move(dt);
    }
    return loss;
}

// Each entry pairs a label track with the first frame of its chunk window.
inline TargetTensors make_targets(
    const std::vector<std::pair<const FrameLabelTrack*, long>>& tracks, long frames) {
    const long B = static_cast<long>(tracks.size());
    TargetTensors t;
    t.audio.resize({B, frames, static_cast<long>(kNumAudioClasses)});
    t.visual.resize({B, frames, static_cast<long>(kNumVisualClasses)});
    t.target.resize({B, frames, static_cast<long>(kNumTargetClasses)});
    for (long b = 0; b < B; ++b) {
        const FrameLabelTrack& lab = *tracks[b].first;
        for (long i = 0; i < frames; ++i) {
            const long src = tracks[b].second + i;
            t.audio.data[(b * frames + i) * kNumAudioClasses +
                         static_cast<int>(lab.audio[src])] = 1.0;
            t.visual.data[(b * frames + i) * kNumVisualClasses +
                          static_cast<int>(lab.visual[src])] = 1.0;
            t.target.data[(b * frames + i) * kNumTargetClasses +
                          static_cast<int>(lab.target[src])] = 1.0;
        }
    }
    return t;
}

}  // namespace avvad
