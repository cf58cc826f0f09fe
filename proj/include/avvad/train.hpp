// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "avvad/dataset.hpp"
#include "avvad/error.hpp"
#include "avvad/features.hpp"
#include "avvad/loss.hpp"
#include "avvad/model.hpp"
#include "avvad/rng.hpp"

namespace avvad {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 18;
    int batch_size = 8;
    int chunk_frames = 96;
    double dropout = 0.3;
    std::uint64_t seed = 1;
    FusionOp op = FusionOp::HP;
    LossWeights weights;

    void validate() const {
        if (lr <= 0.0 || beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0 ||
            adam_eps <= 0.0)
            throw UsageError("train config: bad optimizer hyperparameters");
        if (epochs < 1 || batch_size < 1 || chunk_frames < 1)
            throw UsageError("train config: epochs, batch size and chunk length must be positive");
        if (dropout < 0.0 || dropout >= 1.0)
            throw UsageError("train config: dropout must be in [0, 1)");
        weights.validate();
    }
};

// Adam over the model's named parameters; single-writer, step at a time.
class Adam {
  public:
    Adam(double lr, double beta1, double beta2, double eps)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(AvVadNet& net) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        net.visit_params([this, bc1, bc2](const std::string& name, Tensor& w, Tensor& g) {
            auto& state = state_[name];
            if (state.m.numel() != w.numel()) {
                state.m.resize(w.shape);
                state.v.resize(w.shape);
            }
            for (long i = 0; i < w.numel(); ++i) {
                const double grad = g.data[i];
                state.m.data[i] = b1_ * state.m.data[i] + (1.0 - b1_) * grad;
                state.v.data[i] = b2_ * state.v.data[i] + (1.0 - b2_) * grad * grad;
                const double mhat = state.m.data[i] / bc1;
                const double vhat = state.v.data[i] / bc2;
                w.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        });
    }

  private:
    struct State {
        Tensor m, v;
    };
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::map<std::string, State> state_;
};

// ---------------------------------------------------------------------------
// Chunked data pipeline
// ---------------------------------------------------------------------------

// Pre-computed per-clip features plus the label track.
struct PreparedClip {
    std::string clip_id;
    MelSpectrogram mel;
    Tensor faces;  // [Nv, S, S] in [0,1]
    FrameLabelTrack labels;
};

inline PreparedClip prepare_clip(const DatasetClip& clip, const FrontendConfig& fe) {
    PreparedClip p;
    p.clip_id = clip.clip_id;
    p.mel = compute_mel(clip.audio, fe);
    if (p.mel.n_frames() != static_cast<long>(clip.labels.n_frames()))
        throw DataError("clip '" + clip.clip_id + "': label track does not match feature frames");
    p.faces.resize({clip.faces.frames, static_cast<long>(clip.faces.height),
                    static_cast<long>(clip.faces.width)});
    for (std::size_t i = 0; i < clip.faces.pixels.size(); ++i)
        p.faces.data[i] = clip.faces.pixels[i] / 255.0;
    p.labels = clip.labels;
    return p;
}

struct ChunkRef {
    int clip = 0;
    long frame_start = 0;
};

inline std::vector<ChunkRef> make_chunks(const std::vector<PreparedClip>& clips,
                                         int chunk_frames) {
    std::vector<ChunkRef> chunks;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const long T = clips[c].mel.n_frames();
        if (T < chunk_frames) continue;  // clips shorter than one window are skipped
        long start = 0;
        while (true) {
            if (start + chunk_frames > T) start = T - chunk_frames;
            chunks.push_back({static_cast<int>(c), start});
            if (start + chunk_frames >= T) break;
            start += chunk_frames;
        }
    }
    return chunks;
}

// Builds the batched model input plus targets for a set of chunks.
inline std::pair<ModelInput, TargetTensors> assemble_batch(
    const std::vector<PreparedClip>& clips, const std::vector<ChunkRef>& refs, int chunk_frames,
    const ArchConfig& arch) {
    const long B = static_cast<long>(refs.size());
    const long T = chunk_frames;
    const int S = arch.image_size;

    const double hop = clips[refs[0].clip].mel.frame_hop;
    const double win = clips[refs[0].clip].mel.frame_length;
    const long nv_chunk = static_cast<long>(std::ceil(T * hop * arch.video_fps)) + 2;

    ModelInput in;
    in.batch = B;
    in.n_video = nv_chunk;
    in.mel.resize({B, T, static_cast<long>(arch.n_mels)});
    in.faces.resize({B * nv_chunk, static_cast<long>(S), static_cast<long>(S)});
    in.vmap.resize(B * T);

    std::vector<std::pair<const FrameLabelTrack*, long>> tracks;
    for (long b = 0; b < B; ++b) {
        const PreparedClip& clip = clips[refs[b].clip];
        const long t0 = refs[b].frame_start;
        std::copy(clip.mel.frames.ptr() + t0 * arch.n_mels,
                  clip.mel.frames.ptr() + (t0 + T) * arch.n_mels,
                  in.mel.ptr() + b * T * arch.n_mels);

        const long total_video = clip.faces.dim(0);
        const long nv = std::min(nv_chunk, total_video);
        long vstart = static_cast<long>(std::floor(t0 * hop * arch.video_fps));
        vstart = std::clamp(vstart, 0L, total_video - nv);
        for (long v = 0; v < nv_chunk; ++v) {
            const long src = std::min(vstart + std::min(v, nv - 1), total_video - 1);
            std::copy(clip.faces.ptr() + src * S * S, clip.faces.ptr() + (src + 1) * S * S,
                      in.faces.ptr() + (b * nv_chunk + v) * S * S);
        }
        for (long i = 0; i < T; ++i) {
            const double center = (t0 + i) * hop + win / 2.0;
            const long g = static_cast<long>(std::floor(center * arch.video_fps));
            const long local = std::clamp(g - vstart, 0L, nv_chunk - 1);
            in.vmap[b * T + i] = static_cast<int>(b * nv_chunk + local);
        }
        tracks.push_back({&clip.labels, t0});
    }
    return {std::move(in), make_targets(tracks, T)};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    LossBreakdown train;
    LossBreakdown val;
};

struct TrainResult {
    AvVadNet net;  // best-validation parameters
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val = 0.0;
    bool diverged = false;
};

namespace train_detail {

struct Snapshot {
    std::vector<Tensor> params, buffers;
};

inline Snapshot take_snapshot(AvVadNet& net) {
    Snapshot s;
    net.visit_params([&s](const std::string&, Tensor& v, Tensor&) { s.params.push_back(v); });
    net.visit_buffers([&s](const std::string&, Tensor& v) { s.buffers.push_back(v); });
    return s;
}

inline void restore_snapshot(AvVadNet& net, const Snapshot& s) {
    std::size_t i = 0, j = 0;
    net.visit_params([&](const std::string&, Tensor& v, Tensor&) { v = s.params[i++]; });
    net.visit_buffers([&](const std::string&, Tensor& v) { v = s.buffers[j++]; });
}

inline void accumulate(LossBreakdown& acc, const LossBreakdown& item, long weight) {
    for (int i = 0; i < 10; ++i) acc.terms[i] += item.terms[i] * weight;
    acc.total += item.total * weight;
}

inline void finish(LossBreakdown& acc, long total_weight) {
    if (total_weight == 0) return;
    for (double& t : acc.terms) t /= static_cast<double>(total_weight);
    acc.total /= static_cast<double>(total_weight);
}

}  // namespace train_detail

// Joint training of the three branches on the composite loss. Deterministic
// under a fixed seed (single-threaded math path). Divergence aborts with the
// last finite parameters restored.
inline TrainResult train(const std::vector<PreparedClip>& train_clips,
                         const std::vector<PreparedClip>& val_clips, const ArchConfig& arch,
                         const TrainConfig& cfg,
                         const FusionConfig* fusion_override = nullptr) {
    cfg.validate();
    if (train_clips.empty() || val_clips.empty())
        throw UsageError("train: need non-empty train and validation splits");

    FusionConfig fusion = fusion_override ? *fusion_override : FusionConfig::defaults(cfg.op);
    fusion.op = cfg.op;

    TrainResult result;
    result.net = AvVadNet(arch, fusion, cfg.dropout);
    result.net.init(cfg.seed);
    AvVadNet& net = result.net;

    const auto train_chunks = make_chunks(train_clips, cfg.chunk_frames);
    const auto val_chunks = make_chunks(val_clips, cfg.chunk_frames);
    if (train_chunks.empty() || val_chunks.empty())
        throw UsageError("train: clips are shorter than one training chunk");

    Adam opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    Rng dropout_rng(mix_seed(cfg.seed, 0xD80));

    auto eval_split = [&](const std::vector<PreparedClip>& clips,
                          const std::vector<ChunkRef>& chunks) {
        LossBreakdown acc;
        long weight = 0;
        for (std::size_t i = 0; i < chunks.size(); i += cfg.batch_size) {
            const std::vector<ChunkRef> batch_refs(
                chunks.begin() + i,
                chunks.begin() + std::min(chunks.size(), i + cfg.batch_size));
            auto [input, targets] = assemble_batch(clips, batch_refs, cfg.chunk_frames, arch);
            const ModelOutput out = net.forward(input, nn::Mode::Eval, nullptr);
            const LossBreakdown loss = total_loss(out, targets, cfg.weights);
            train_detail::accumulate(acc, loss, static_cast<long>(batch_refs.size()));
            weight += static_cast<long>(batch_refs.size());
        }
        train_detail::finish(acc, weight);
        return acc;
    };

    train_detail::Snapshot best = train_detail::take_snapshot(net);
    train_detail::Snapshot last_good = best;
    result.best_val = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_chunks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5A00 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i - 1))]);

        LossBreakdown train_acc;
        long train_weight = 0;
        bool finite = true;
        for (std::size_t i = 0; i < order.size() && finite; i += cfg.batch_size) {
            std::vector<ChunkRef> batch_refs;
            for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch_size); ++j)
                batch_refs.push_back(train_chunks[order[j]]);
            auto [input, targets] =
                assemble_batch(train_clips, batch_refs, cfg.chunk_frames, arch);

            net.zero_grad();
            LossGrads grads;
            LossBreakdown loss;
            try {
                const ModelOutput out = net.forward(input, nn::Mode::Train, &dropout_rng);
                loss = total_loss(out, targets, cfg.weights, &grads);
            } catch (const NumericError&) {
                finite = false;
                break;
            }
            if (!std::isfinite(loss.total)) {
                finite = false;
                break;
            }
            net.backward(grads.daudio, grads.dvisual, grads.dav);
            opt.step(net);
            train_detail::accumulate(train_acc, loss, static_cast<long>(batch_refs.size()));
            train_weight += static_cast<long>(batch_refs.size());
        }

        if (!finite) {
            result.diverged = true;
            train_detail::restore_snapshot(net, last_good);
            break;
        }
        last_good = train_detail::take_snapshot(net);
        train_detail::finish(train_acc, train_weight);

        EpochStats stats;
        stats.epoch = epoch;
        stats.train = train_acc;
        try {
            stats.val = eval_split(val_clips, val_chunks);
        } catch (const NumericError&) {
            stats.val.total = std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isfinite(stats.val.total)) {
            result.diverged = true;
            train_detail::restore_snapshot(net, last_good);
            break;
        }
        result.history.push_back(stats);

        if (stats.val.total < result.best_val) {
            result.best_val = stats.val.total;
            result.best_epoch = epoch;
            best = train_detail::take_snapshot(net);
        }
    }

    train_detail::restore_snapshot(net, best);
    return result;
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
    std::ostringstream out;
    out << "epoch";
    for (const auto& n : LossWeights::names()) out << ",train_" << n;
    out << ",train_total";
    for (const auto& n : LossWeights::names()) out << ",val_" << n;
    out << ",val_total\n";
    out.precision(10);
    for (const auto& e : history) {
        out << e.epoch;
        for (double t : e.train.terms) out << ',' << t;
        out << ',' << e.train.total;
        for (double t : e.val.terms) out << ',' << t;
        out << ',' << e.val.total << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

// Central finite differences against the analytic gradients on a down-scaled
// model. Returns the max relative error over the probed parameters.
inline double gradient_check(AvVadNet& net, const ModelInput& input, const TargetTensors& targets,
                             const LossWeights& weights, int probes_per_tensor = 3,
                             double step = 1e-5) {
    auto loss_value = [&]() {
        const ModelOutput out = net.forward(input, nn::Mode::Train, nullptr);
        return total_loss(out, targets, weights).total;
    };

    net.zero_grad();
    {
        LossGrads grads;
        const ModelOutput out = net.forward(input, nn::Mode::Train, nullptr);
        total_loss(out, targets, weights, &grads);
        net.backward(grads.daudio, grads.dvisual, grads.dav);
    }

    struct Probe {
        std::string name;
        long index;
        double analytic;
    };
    std::vector<Probe> probes;
    Rng pick(0xC0FFEE);
    net.visit_params([&](const std::string& name, Tensor& v, Tensor& g) {
        for (int k = 0; k < probes_per_tensor; ++k) {
            const long idx = static_cast<long>(pick.uniform_int(0, v.numel() - 1));
            probes.push_back({name, idx, g.data[idx]});
        }
    });

    double max_rel = 0.0;
    for (const auto& probe : probes) {
        double* slot = nullptr;
        net.visit_params([&](const std::string& name, Tensor& v, Tensor&) {
            if (name == probe.name) slot = &v.data[probe.index];
        });
        const double saved = *slot;
        *slot = saved + step;
        const double up = loss_value();
        *slot = saved - step;
        const double down = loss_value();
        *slot = saved;
        const double fd = (up - down) / (2.0 * step);
        const double rel = std::abs(fd - probe.analytic) /
                           std::max({std::abs(fd), std::abs(probe.analytic), 1e-4});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace avvad
