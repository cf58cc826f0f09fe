// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avvad/error.hpp"
#include "avvad/features.hpp"
#include "avvad/labels.hpp"
#include "avvad/nn.hpp"
#include "avvad/rng.hpp"
#include "avvad/sha256.hpp"
#include "avvad/tensor.hpp"
#include "avvad/tensor_archive.hpp"

namespace avvad {

// ---------------------------------------------------------------------------
// Fusion operators
// ---------------------------------------------------------------------------

enum class FusionOp : int { SC = 0, MM = 1, HP = 2, LuT = 3 };

inline const char* to_string(FusionOp op) {
    switch (op) {
        case FusionOp::SC: return "sc";
        case FusionOp::MM: return "mm";
        case FusionOp::HP: return "hp";
        case FusionOp::LuT: return "lut";
    }
    return "?";
}

inline FusionOp fusion_op_from_string(const std::string& s) {
    if (s == "sc") return FusionOp::SC;
    if (s == "mm") return FusionOp::MM;
    if (s == "hp") return FusionOp::HP;
    if (s == "lut") return FusionOp::LuT;
    throw UsageError("unknown fusion operator '" + s + "' (expected sc|mm|hp|lut)");
}

inline long fused_dim(FusionOp op, long emb_dim) {
    switch (op) {
        case FusionOp::SC: return 2 * emb_dim;
        case FusionOp::MM: return emb_dim * emb_dim;
        case FusionOp::HP: return emb_dim;
        case FusionOp::LuT: break;
    }
    throw UsageError("lut bypasses embedding fusion; use lut_combine");
}

// Fuses one acoustic and one visual embedding. SC concatenates, MM is the
// flattened outer product (row-major, acoustic index major), HP the Hadamard
// product.
inline std::vector<double> fuse(const std::vector<double>& a, const std::vector<double>& v,
                                FusionOp op) {
    if (a.size() != v.size()) throw UsageError("fuse: embedding dimensions differ");
    const std::size_t e = a.size();
    switch (op) {
        case FusionOp::SC: {
            std::vector<double> out(2 * e);
            std::copy(a.begin(), a.end(), out.begin());
            std::copy(v.begin(), v.end(), out.begin() + static_cast<long>(e));
            return out;
        }
        case FusionOp::MM: {
            std::vector<double> out(e * e);
            for (std::size_t i = 0; i < e; ++i)
                for (std::size_t j = 0; j < e; ++j) out[i * e + j] = a[i] * v[j];
            return out;
        }
        case FusionOp::HP: {
            std::vector<double> out(e);
            for (std::size_t i = 0; i < e; ++i) out[i] = a[i] * v[i];
            return out;
        }
        case FusionOp::LuT: break;
    }
    throw UsageError("lut bypasses embedding fusion; use lut_combine");
}

// Maps each target-class head to the (audio head, visual head) embedding
// pairs it consumes. The default mirrors the canonical rule table cell for
// cell; any other wiring can be configured.
struct FusionConfig {
    FusionOp op = FusionOp::HP;
    std::array<std::vector<std::pair<int, int>>, kNumTargetClasses> wiring;
    double lut_threshold = 0.5;

    static FusionConfig defaults(FusionOp op = FusionOp::HP) {
        FusionConfig cfg;
        cfg.op = op;
        const int sil = 0, spe = 1, sin = 2, oth = 3;
        const int voc = 0, nonvoc = 1;
        cfg.wiring[sil] = {{sil, voc}, {sil, nonvoc}};
        // The speech head also sees the singing cell: frame labels give
        // singing priority when both voices are up, so speech attribution
        // needs singing evidence available for inhibition.
        cfg.wiring[spe] = {{spe, voc}, {sin, voc}};
        cfg.wiring[sin] = {{sin, voc}};
        cfg.wiring[oth] = {{oth, voc}, {oth, nonvoc}, {spe, nonvoc}, {sin, nonvoc}};
        return cfg;
    }

    void validate() const {
        if (lut_threshold <= 0.0 || lut_threshold >= 1.0)
            throw UsageError("fusion config: lut threshold must be in (0, 1)");
        for (int h = 0; h < kNumTargetClasses; ++h) {
            if (wiring[h].empty())
                throw UsageError(std::string("fusion config: target head '") +
                                 to_string(static_cast<TargetClass>(h)) + "' has no wired pairs");
            for (const auto& [a, v] : wiring[h])
                if (a < 0 || a >= kNumAudioClasses || v < 0 || v >= kNumVisualClasses)
                    throw UsageError("fusion config: wired pair index out of range");
        }
    }
};

// Rule lookup over branch decisions: argmax of the audio heads, thresholded
// Vocalizing probability, one-hot of the rule table cell. No learned
// parameters, so disagreements flip frame by frame.
inline Tensor lut_combine(const Tensor& audio_probs, const Tensor& visual_probs,
                          double threshold, const RuleTable& rule = RuleTable::canonical()) {
    if (audio_probs.shape.size() != 2 || audio_probs.dim(1) != kNumAudioClasses)
        throw UsageError("lut_combine: audio probs must be [T, 4]");
    if (visual_probs.shape.size() != 2 || visual_probs.dim(0) != audio_probs.dim(0))
        throw UsageError("lut_combine: visual probs must align with audio frames");
    const long T = audio_probs.dim(0);
    Tensor out({T, kNumTargetClasses});
    for (long t = 0; t < T; ++t) {
        const double* ap = audio_probs.ptr() + t * kNumAudioClasses;
        int best = 0;
        for (int c = 1; c < kNumAudioClasses; ++c)
            if (ap[c] > ap[best]) best = c;  // ties keep the lowest index
        const double voc = visual_probs.ptr()[t * visual_probs.dim(1)];
        const VisualClass v =
            voc >= threshold ? VisualClass::Vocalizing : VisualClass::NonVocalizing;
        const TargetClass target = rule.apply(static_cast<AudioClass>(best), v);
        out.ptr()[t * kNumTargetClasses + static_cast<int>(target)] = 1.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

struct ArchConfig {
    int n_mels = 64;
    std::vector<int> audio_channels = {16, 32, 64};
    int gru_hidden = 128;
    int embedding_dim = 128;
    std::vector<int> image_channels = {12, 24, 48};
    int image_size = 64;
    double video_fps = 25.0;
    // Consecutive face frames stacked as input channels per video step, so
    // the branch sees mouth motion, not just a single pose.
    int visual_context = 7;
    // Width of each A-V head's dense layer over the fused vectors.
    int av_hidden = 12;

    void validate() const {
        if (n_mels != 64) throw UsageError("arch: feature contract fixes 64 mel bands");
        if (audio_channels.empty() || image_channels.empty())
            throw UsageError("arch: need at least one conv block per branch");
        for (int c : audio_channels)
            if (c < 1) throw UsageError("arch: bad audio channel width");
        for (int c : image_channels)
            if (c < 1) throw UsageError("arch: bad image channel width");
        if (gru_hidden < 1 || embedding_dim < 1) throw UsageError("arch: bad head sizes");
        if (image_size < 8) throw UsageError("arch: image size too small");
        if (video_fps <= 0.0) throw UsageError("arch: video fps must be positive");
        if (visual_context < 1 || visual_context % 2 == 0)
            throw UsageError("arch: visual context must be a positive odd frame count");
        if (av_hidden < 1) throw UsageError("arch: av head width must be positive");
    }

    long audio_freq_out() const {
        long f = n_mels;
        for (std::size_t i = 0; i < audio_channels.size(); ++i) f = (f + 1) / 2;
        return f;
    }

    long gru_input_dim() const { return audio_freq_out() * audio_channels.back(); }
};

// Nearest-neighbor map from an audio frame center to a video frame index.
inline int video_index_for_time(double t_s, double fps, long n_video) {
    if (n_video <= 0) throw UsageError("alignment: no video frames");
    const long v = static_cast<long>(std::floor(t_s * fps));
    return static_cast<int>(std::clamp(v, 0L, n_video - 1));
}

// ---------------------------------------------------------------------------
// Branch modules
// ---------------------------------------------------------------------------

namespace detail {

// Gated linear unit block: conv_linear(x) * sigmoid(conv_gate(x)), time and
// frequency extents preserved.
class GluBlock {
  public:
    GluBlock() = default;
    GluBlock(const std::string& name, int cin, int cout)
        : lin_(name + ".lin", cin, cout, 3, 3, 1, 1, 1, 1),
          gate_(name + ".gate", cin, cout, 3, 3, 1, 1, 1, 1) {}

    void init(std::uint64_t seed) {
        lin_.init(seed);
        gate_.init(seed);
    }

    Tensor forward(const Tensor& x) {
        lin_out_ = lin_.forward(x);
        Tensor gate = gate_.forward(x);
        sig_.resize(gate.shape);
        Tensor y(gate.shape);
        for (long i = 0; i < gate.numel(); ++i) {
            sig_.data[i] = nn::sigmoid(gate.data[i]);
            y.data[i] = lin_out_.data[i] * sig_.data[i];
        }
        return y;
    }

    Tensor backward(const Tensor& dy) {
        Tensor dlin(dy.shape), dgate(dy.shape);
        for (long i = 0; i < dy.numel(); ++i) {
            dlin.data[i] = dy.data[i] * sig_.data[i];
            dgate.data[i] = dy.data[i] * lin_out_.data[i] * sig_.data[i] * (1.0 - sig_.data[i]);
        }
        Tensor dx = lin_.backward(dlin);
        Tensor dx2 = gate_.backward(dgate);
        for (long i = 0; i < dx.numel(); ++i) dx.data[i] += dx2.data[i];
        return dx;
    }

    void visit(const nn::ParamVisitor& f) {
        lin_.visit(f);
        gate_.visit(f);
    }

    nn::Conv2d& linear_conv() { return lin_; }
    nn::Conv2d& gate_conv() { return gate_; }

  private:
    nn::Conv2d lin_, gate_;
    Tensor lin_out_, sig_;
};

struct AudioHead {
    nn::Gru gru;
    nn::Dropout drop;
    nn::Dense emb;
    nn::Dense logit;
};

struct ImageHead {
    nn::Dense emb;
    nn::Dense logit;
};

}  // namespace detail

// Pooling by strided convolution: stride 1 in time keeps the frame rate,
// stride 2 in frequency halves the bands (ceil).
inline nn::Conv2d make_pool_conv(const std::string& name, int channels) {
    return nn::Conv2d(name, channels, channels, 3, 3, 1, 2, 1, 1);
}

inline Tensor pool_conv_forward(nn::Conv2d& pool, const Tensor& x) {
    if (x.shape.size() != 4 || x.dim(2) < 2)
        throw UsageError("pool conv: frequency dimension must be at least 2");
    return pool.forward(x);
}

class AudioBranch {
  public:
    AudioBranch() = default;
    AudioBranch(const ArchConfig& arch, double dropout) : arch_(arch) {
        int cin = 1;
        for (std::size_t k = 0; k < arch.audio_channels.size(); ++k) {
            const int cout = arch.audio_channels[k];
            const std::string base = "audio.block" + std::to_string(k);
            glu_.emplace_back(base + ".glu", cin, cout);
            bn_.emplace_back(base + ".bn", cout);
            pool_.push_back(make_pool_conv(base + ".pool", cout));
            drop_.emplace_back(dropout);
            cin = cout;
        }
        const long gru_in = arch.gru_input_dim();
        for (int h = 0; h < kNumAudioClasses; ++h) {
            const std::string base =
                std::string("audio.head_") + to_string(static_cast<AudioClass>(h));
            heads_.push_back({nn::Gru(base + ".gru", static_cast<int>(gru_in), arch.gru_hidden),
                              nn::Dropout(dropout),
                              nn::Dense(base + ".emb", arch.gru_hidden, arch.embedding_dim),
                              nn::Dense(base + ".logit", arch.embedding_dim, 1)});
        }
    }

    void init(std::uint64_t seed) {
        for (auto& g : glu_) g.init(seed);
        for (auto& p : pool_) p.init(seed);
        for (auto& h : heads_) {
            h.gru.init(seed);
            h.emb.init(seed);
            h.logit.init(seed);
        }
    }

    // mel: [B, T, n_mels] -> probs [B, T, 4]; embeddings cached per head.
    Tensor forward(const Tensor& mel, nn::Mode mode, Rng* rng) {
        if (mel.shape.size() != 3 || mel.dim(2) != arch_.n_mels)
            throw UsageError("audio branch: expected [B, T, " + std::to_string(arch_.n_mels) +
                             "] input (64 mel bands)");
        require_finite(mel, "audio.input");
        const long B = mel.dim(0), T = mel.dim(1);

        Tensor x = mel;
        x.shape = {B, T, arch_.n_mels, 1};
        for (std::size_t k = 0; k < glu_.size(); ++k) {
            const std::string where = "audio.block" + std::to_string(k);
            x = glu_[k].forward(x);
            require_finite(x, where + ".glu");
            x = bn_[k].forward(x, mode);
            x = pool_conv_forward(pool_[k], x);
            require_finite(x, where + ".pool");
            x = drop_[k].forward(x, mode, rng);
        }
        conv_out_shape_ = x.shape;
        x.shape = {B, T, arch_.gru_input_dim()};

        probs_.resize({B, T, kNumAudioClasses});
        embs_.assign(kNumAudioClasses, Tensor());
        for (int h = 0; h < kNumAudioClasses; ++h) {
            auto& head = heads_[h];
            Tensor g = head.gru.forward(x);
            require_finite(g, head_name(h) + ".gru");
            g = head.drop.forward(g, mode, rng);
            embs_[h] = head.emb.forward(g);
            require_finite(embs_[h], head_name(h) + ".emb");
            Tensor logit = head.logit.forward(embs_[h]);  // [B, T, 1]
            for (long i = 0; i < B * T; ++i)
                probs_.data[i * kNumAudioClasses + h] = nn::sigmoid(logit.data[i]);
        }
        return probs_;
    }

    // dprobs: [B, T, 4]; demb: extra embedding gradients from the A-V branch.
    Tensor backward(const Tensor& dprobs, const std::vector<Tensor>& demb_extra) {
        const long B = dprobs.dim(0), T = dprobs.dim(1);
        Tensor dfeat({B, T, arch_.gru_input_dim()});
        for (int h = 0; h < kNumAudioClasses; ++h) {
            auto& head = heads_[h];
            Tensor dlogit({B, T, 1L});
            for (long i = 0; i < B * T; ++i) {
                const double p = probs_.data[i * kNumAudioClasses + h];
                dlogit.data[i] = dprobs.data[i * kNumAudioClasses + h] * p * (1.0 - p);
            }
            Tensor demb = head.logit.backward(dlogit);
            if (!demb_extra.empty() && demb_extra[h].numel() == demb.numel())
                for (long i = 0; i < demb.numel(); ++i) demb.data[i] += demb_extra[h].data[i];
            Tensor dg = head.emb.backward(demb);
            dg = head.drop.backward(dg);
            Tensor dx = head.gru.backward(dg);
            for (long i = 0; i < dfeat.numel(); ++i) dfeat.data[i] += dx.data[i];
        }

        Tensor dx = dfeat;
        dx.shape = conv_out_shape_;
        for (long k = static_cast<long>(glu_.size()) - 1; k >= 0; --k) {
            dx = drop_[k].backward(dx);
            dx = pool_[k].backward(dx);
            dx = bn_[k].backward(dx);
            dx = glu_[k].backward(dx);
        }
        dx.shape = {dx.dim(0), dx.dim(1), arch_.n_mels};
        return dx;
    }

    const Tensor& probs() const { return probs_; }
    const std::vector<Tensor>& embeddings() const { return embs_; }

    void visit(const nn::ParamVisitor& f) {
        for (auto& g : glu_) g.visit(f);
        for (auto& b : bn_) b.visit(f);
        for (auto& p : pool_) p.visit(f);
        for (auto& h : heads_) {
            h.gru.visit(f);
            h.emb.visit(f);
            h.logit.visit(f);
        }
    }

    void visit_buffers(const nn::BufferVisitor& f) {
        for (auto& b : bn_) b.visit_buffers(f);
    }

  private:
    static std::string head_name(int h) {
        return std::string("audio.head_") + to_string(static_cast<AudioClass>(h));
    }

    ArchConfig arch_;
    std::vector<detail::GluBlock> glu_;
    std::vector<nn::BatchNorm> bn_;
    std::vector<nn::Conv2d> pool_;
    std::vector<nn::Dropout> drop_;
    std::vector<detail::AudioHead> heads_;
    std::vector<long> conv_out_shape_;
    Tensor probs_;
    std::vector<Tensor> embs_;
};

// Replicate-padded temporal stack: output row v of each sequence holds the
// frames v-R .. v+R as channels.
inline Tensor stack_face_context(const Tensor& faces, long batch, long n_video, int context) {
    if (faces.shape.size() != 3) throw UsageError("face stack: expected [N, S, S] frames");
    const long S = faces.dim(1);
    const long n = faces.dim(0);
    if (n != batch * n_video) throw UsageError("face stack: frame count mismatch");
    const int r = context / 2;
    Tensor out({n, S, S, context});
    for (long b = 0; b < batch; ++b)
        for (long v = 0; v < n_video; ++v)
            for (int c = 0; c < context; ++c) {
                const long src = b * n_video + std::clamp(v + c - r, 0L, n_video - 1);
                const double* sp = faces.ptr() + src * S * S;
                double* dp = out.ptr() + (b * n_video + v) * S * S * context + c;
                for (long i = 0; i < S * S; ++i) dp[i * context] = sp[i];
            }
    return out;
}

class ImageBranch {
  public:
    ImageBranch() = default;
    // The pooled feature is a narrow bottleneck; dropping it out starves the
    // heads, so dropout stays on the audio side only.
    ImageBranch(const ArchConfig& arch, double /*dropout*/) : arch_(arch), drop_(0.0) {
        int cin = arch.visual_context;
        for (std::size_t k = 0; k < arch.image_channels.size(); ++k) {
            const int cout = arch.image_channels[k];
            const std::string base = "image.block" + std::to_string(k);
            conv_.emplace_back(base + ".conv", cin, cout, 3, 3, 2, 2, 1, 1);
            bn_.emplace_back(base + ".bn", cout);
            act_.emplace_back();
            cin = cout;
        }
        for (int h = 0; h < kNumVisualClasses; ++h) {
            const std::string base =
                std::string("image.head_") + to_string(static_cast<VisualClass>(h));
            heads_.push_back({nn::Dense(base + ".emb", arch.image_channels.back(),
                                        arch.embedding_dim),
                              nn::Dense(base + ".logit", arch.embedding_dim, 1)});
        }
    }

    void init(std::uint64_t seed) {
        for (auto& c : conv_) c.init(seed);
        for (auto& h : heads_) {
            h.emb.init(seed);
            h.logit.init(seed);
        }
    }

    // stacked: [N, S, S, context] in [0,1] -> per-video-frame probs [N, 2].
    Tensor forward(const Tensor& stacked, nn::Mode mode, Rng* rng) {
        if (stacked.shape.size() != 4 || stacked.dim(1) != arch_.image_size ||
            stacked.dim(2) != arch_.image_size || stacked.dim(3) != arch_.visual_context)
            throw UsageError("image branch: expected [N, " + std::to_string(arch_.image_size) +
                             ", " + std::to_string(arch_.image_size) + ", " +
                             std::to_string(arch_.visual_context) + "] stacked face frames");
        require_finite(stacked, "image.input");
        const long N = stacked.dim(0);

        Tensor x = stacked;
        for (std::size_t k = 0; k < conv_.size(); ++k) {
            x = conv_[k].forward(x);
            x = bn_[k].forward(x, mode);
            x = act_[k].forward(x);
            require_finite(x, "image.block" + std::to_string(k));
        }

        // Global spatial average per frame.
        gap_shape_ = x.shape;
        const long C = x.shape.back();
        const long cells = x.dim(1) * x.dim(2);
        Tensor pooled({N, C});
        for (long n = 0; n < N; ++n)
            for (long i = 0; i < cells; ++i)
                for (long c = 0; c < C; ++c)
                    pooled.data[n * C + c] += x.data[(n * cells + i) * C + c];
        for (double& v : pooled.data) v /= static_cast<double>(cells);

        pooled = drop_.forward(pooled, mode, rng);

        probs_.resize({N, kNumVisualClasses});
        embs_.assign(kNumVisualClasses, Tensor());
        for (int h = 0; h < kNumVisualClasses; ++h) {
            embs_[h] = heads_[h].emb.forward(pooled);
            require_finite(embs_[h], head_name(h) + ".emb");
            Tensor logit = heads_[h].logit.forward(embs_[h]);
            for (long n = 0; n < N; ++n)
                probs_.data[n * kNumVisualClasses + h] = nn::sigmoid(logit.data[n]);
        }
        return probs_;
    }

    // Convenience for single sequences: stacks the temporal context itself.
    Tensor forward_frames(const Tensor& faces, nn::Mode mode, Rng* rng) {
        if (faces.shape.size() != 3)
            throw UsageError("image branch: expected [N, S, S] face frames");
        if (faces.dim(1) != arch_.image_size || faces.dim(2) != arch_.image_size)
            throw UsageError("image branch: expected " + std::to_string(arch_.image_size) + "x" +
                             std::to_string(arch_.image_size) + " face frames");
        return forward(stack_face_context(faces, 1, faces.dim(0), arch_.visual_context), mode,
                       rng);
    }

    void backward(const Tensor& dprobs, const std::vector<Tensor>& demb_extra) {
        const long N = dprobs.dim(0);
        const long C = gap_shape_.back();
        Tensor dpooled({N, C});
        for (int h = 0; h < kNumVisualClasses; ++h) {
            Tensor dlogit({N, 1L});
            for (long n = 0; n < N; ++n) {
                const double p = probs_.data[n * kNumVisualClasses + h];
                dlogit.data[n] = dprobs.data[n * kNumVisualClasses + h] * p * (1.0 - p);
            }
            Tensor demb = heads_[h].logit.backward(dlogit);
            if (!demb_extra.empty() && demb_extra[h].numel() == demb.numel())
                for (long i = 0; i < demb.numel(); ++i) demb.data[i] += demb_extra[h].data[i];
            Tensor dp = heads_[h].emb.backward(demb);
            for (long i = 0; i < dpooled.numel(); ++i) dpooled.data[i] += dp.data[i];
        }

        dpooled = drop_.backward(dpooled);

        const long cells = gap_shape_[1] * gap_shape_[2];
        Tensor dx(gap_shape_);
        for (long n = 0; n < N; ++n)
            for (long i = 0; i < cells; ++i)
                for (long c = 0; c < C; ++c)
                    dx.data[(n * cells + i) * C + c] =
                        dpooled.data[n * C + c] / static_cast<double>(cells);

        for (long k = static_cast<long>(conv_.size()) - 1; k >= 0; --k) {
            dx = act_[k].backward(dx);
            dx = bn_[k].backward(dx);
            dx = conv_[k].backward(dx);
        }
    }

    const Tensor& probs() const { return probs_; }
    const std::vector<Tensor>& embeddings() const { return embs_; }

    void visit(const nn::ParamVisitor& f) {
        for (auto& c : conv_) c.visit(f);
        for (auto& b : bn_) b.visit(f);
        for (auto& h : heads_) {
            h.emb.visit(f);
            h.logit.visit(f);
        }
    }

    void visit_buffers(const nn::BufferVisitor& f) {
        for (auto& b : bn_) b.visit_buffers(f);
    }

  private:
    static std::string head_name(int h) {
        return std::string("image.head_") + to_string(static_cast<VisualClass>(h));
    }

    ArchConfig arch_;
    std::vector<nn::Conv2d> conv_;
    std::vector<nn::BatchNorm> bn_;
    std::vector<nn::Tanh> act_;
    nn::Dropout drop_;
    std::vector<detail::ImageHead> heads_;
    std::vector<long> gap_shape_;
    Tensor probs_;
    std::vector<Tensor> embs_;
};

// One A-V head: a dense layer with tanh units over the concatenation of the
// wired pairs' fused vectors, then a dense sigmoid unit. The fused vectors
// are never materialized; each operator's dot product is computed directly,
// which for MM turns every 16384-wide row into a bilinear form.
class AvHead {
  public:
    AvHead() = default;
    AvHead(std::string name, const std::vector<std::pair<int, int>>& pairs, FusionOp op, int emb,
           int hidden)
        : name_(std::move(name)), pairs_(pairs), op_(op), emb_(emb), hidden_units_(hidden) {
        const long n_pairs = static_cast<long>(pairs.size());
        w1_.resize({hidden * n_pairs, fused_dim(op, emb)});  // row (h * pairs + p)
        c1_.resize({hidden});
        w2_.resize({hidden});
        b_.resize({1});
        gw1_.resize(w1_.shape);
        gc1_.resize(c1_.shape);
        gw2_.resize(w2_.shape);
        gb_.resize(b_.shape);
    }

    void init(std::uint64_t seed) {
        Rng rng(mix_seed(seed, hash64(name_)));
        nn::glorot_init(w1_, w1_.dim(1), 1, rng);
        nn::glorot_init(w2_, hidden_units_, 1, rng);
        c1_.fill(0.0);
        b_.fill(0.0);
    }

    // a_embs: 4 x [B,T,E]; v_embs: 2 x [N,E]; vmap: audio frame -> video row.
    Tensor forward(const std::vector<Tensor>& a_embs, const std::vector<Tensor>& v_embs,
                   const std::vector<int>& vmap) {
        const long B = a_embs[0].dim(0), T = a_embs[0].dim(1);
        const long n_pairs = static_cast<long>(pairs_.size());
        const long H = hidden_units_;
        hidden_.resize({B * T, H});
        logits_.resize({B, T});
        for (long i = 0; i < B * T; ++i) {
            double acc = b_.data[0];
            for (long h = 0; h < H; ++h) {
                double pre = c1_.data[h];
                for (long p = 0; p < n_pairs; ++p) {
                    const double* a = a_embs[pairs_[p].first].ptr() + i * emb_;
                    const double* v = v_embs[pairs_[p].second].ptr() +
                                      static_cast<long>(vmap[i]) * emb_;
                    pre += pair_dot(h * n_pairs + p, a, v);
                }
                const double act = std::tanh(pre);
                hidden_.data[i * H + h] = act;
                acc += w2_.data[h] * act;
            }
            logits_.data[i] = acc;
        }
        probs_.resize({B, T});
        for (long i = 0; i < B * T; ++i) probs_.data[i] = nn::sigmoid(logits_.data[i]);
        return probs_;
    }

    // dprobs: [B,T]; accumulates into the branch embedding gradients.
    void backward(const Tensor& dprobs, const std::vector<Tensor>& a_embs,
                  const std::vector<Tensor>& v_embs, const std::vector<int>& vmap,
                  std::vector<Tensor>& da_embs, std::vector<Tensor>& dv_embs) {
        const long BT = dprobs.numel();
        const long n_pairs = static_cast<long>(pairs_.size());
        const long H = hidden_units_;
        for (long i = 0; i < BT; ++i) {
            const double p = probs_.data[i];
            const double g = dprobs.data[i] * p * (1.0 - p);
            if (g == 0.0) continue;
            gb_.data[0] += g;
            for (long h = 0; h < H; ++h) {
                const double act = hidden_.data[i * H + h];
                gw2_.data[h] += g * act;
                const double dpre = g * w2_.data[h] * (1.0 - act * act);
                gc1_.data[h] += dpre;
                for (long p_idx = 0; p_idx < n_pairs; ++p_idx) {
                    const long vrow = static_cast<long>(vmap[i]) * emb_;
                    const double* a = a_embs[pairs_[p_idx].first].ptr() + i * emb_;
                    const double* v = v_embs[pairs_[p_idx].second].ptr() + vrow;
                    double* da = da_embs[pairs_[p_idx].first].ptr() + i * emb_;
                    double* dv = dv_embs[pairs_[p_idx].second].ptr() + vrow;
                    pair_backward(h * n_pairs + p_idx, dpre, a, v, da, dv);
                }
            }
        }
    }

    void visit(const nn::ParamVisitor& f) {
        f(name_ + ".w1", w1_, gw1_);
        f(name_ + ".c1", c1_, gc1_);
        f(name_ + ".w2", w2_, gw2_);
        f(name_ + ".b", b_, gb_);
    }

  private:
    double pair_dot(long row, const double* a, const double* v) const {
        const double* w = w1_.ptr() + row * w1_.dim(1);
        switch (op_) {
            case FusionOp::HP: {
                double s = 0.0;
                for (int i = 0; i < emb_; ++i) s += w[i] * a[i] * v[i];
                return s;
            }
            case FusionOp::SC: {
                double s = 0.0;
                for (int i = 0; i < emb_; ++i) s += w[i] * a[i];
                for (int i = 0; i < emb_; ++i) s += w[emb_ + i] * v[i];
                return s;
            }
            case FusionOp::MM: {
                // a^T W v without forming a v^T.
                using CMap = nn::blas::CMap;
                CMap W(w, emb_, emb_);
                Eigen::Map<const Eigen::VectorXd> av(a, emb_), vv(v, emb_);
                return av.dot(W * vv);
            }
            case FusionOp::LuT: break;
        }
        throw UsageError("lut has no learned fusion head");
    }

    void pair_backward(long row, double g, const double* a, const double* v, double* da,
                       double* dv) {
        double* w = w1_.ptr() + row * w1_.dim(1);
        double* gw = gw1_.ptr() + row * w1_.dim(1);
        switch (op_) {
            case FusionOp::HP:
                for (int i = 0; i < emb_; ++i) {
                    gw[i] += g * a[i] * v[i];
                    da[i] += g * w[i] * v[i];
                    dv[i] += g * w[i] * a[i];
                }
                return;
            case FusionOp::SC:
                for (int i = 0; i < emb_; ++i) {
                    gw[i] += g * a[i];
                    da[i] += g * w[i];
                }
                for (int i = 0; i < emb_; ++i) {
                    gw[emb_ + i] += g * v[i];
                    dv[i] += g * w[emb_ + i];
                }
                return;
            case FusionOp::MM: {
                using CMap = nn::blas::CMap;
                using VMap = Eigen::Map<Eigen::VectorXd>;
                using CVMap = Eigen::Map<const Eigen::VectorXd>;
                CMap W(w, emb_, emb_);
                nn::blas::Map GW(gw, emb_, emb_);
                CVMap av(a, emb_), vv(v, emb_);
                VMap dav(da, emb_), dvv(dv, emb_);
                GW.noalias() += g * av * vv.transpose();
                dav.noalias() += g * (W * vv);
                dvv.noalias() += g * (W.transpose() * av);
                return;
            }
            case FusionOp::LuT: break;
        }
        throw UsageError("lut has no learned fusion head");
    }

    std::string name_;
    std::vector<std::pair<int, int>> pairs_;
    FusionOp op_ = FusionOp::HP;
    int emb_ = 0;
    int hidden_units_ = 0;
    Tensor w1_, c1_, w2_, b_;
    Tensor gw1_, gc1_, gw2_, gb_;
    Tensor hidden_, logits_, probs_;
};

// ---------------------------------------------------------------------------
// The full three-branch network
// ---------------------------------------------------------------------------

struct ModelInput {
    Tensor mel;             // [B, T, n_mels]
    Tensor faces;           // [B * Nv, S, S], values in [0, 1]
    std::vector<int> vmap;  // B*T entries, audio frame -> row in faces
    long batch = 1;
    long n_video = 0;  // frames per batch item
};

struct ModelOutput {
    Tensor audio_probs;   // [B, T, 4]
    Tensor visual_probs;  // [B, T, 2], upsampled to the audio grid
    Tensor av_probs;      // [B, T, 4]
};

class AvVadNet {
  public:
    AvVadNet() = default;
    AvVadNet(const ArchConfig& arch, const FusionConfig& fusion, double dropout = 0.0)
        : arch_(arch), fusion_(fusion), audio_(arch, dropout), image_(arch, dropout) {
        arch_.validate();
        fusion_.validate();
        if (fusion_.op != FusionOp::LuT) {
            for (int h = 0; h < kNumTargetClasses; ++h)
                av_heads_.emplace_back(
                    std::string("av.head_") + to_string(static_cast<TargetClass>(h)),
                    fusion_.wiring[h], fusion_.op, arch_.embedding_dim, arch_.av_hidden);
        }
    }

    void init(std::uint64_t seed) {
        audio_.init(seed);
        image_.init(seed);
        for (auto& h : av_heads_) h.init(seed);
    }

    ModelOutput forward(const ModelInput& in, nn::Mode mode, Rng* rng) {
        const long B = in.mel.dim(0), T = in.mel.dim(1);
        if (static_cast<long>(in.vmap.size()) != B * T)
            throw UsageError("model: vmap must have one entry per audio frame");
        vmap_ = in.vmap;

        ModelOutput out;
        out.audio_probs = audio_.forward(in.mel, mode, rng);
        const Tensor vframe_probs = image_.forward(
            stack_face_context(in.faces, in.batch, in.n_video, arch_.visual_context), mode, rng);

        out.visual_probs.resize({B, T, kNumVisualClasses});
        for (long i = 0; i < B * T; ++i)
            for (int h = 0; h < kNumVisualClasses; ++h)
                out.visual_probs.data[i * kNumVisualClasses + h] =
                    vframe_probs.data[static_cast<long>(vmap_[i]) * kNumVisualClasses + h];

        out.av_probs.resize({B, T, kNumTargetClasses});
        if (fusion_.op == FusionOp::LuT) {
            out.av_probs.fill(0.0);
            for (long i = 0; i < B * T; ++i) {
                const double* ap = out.audio_probs.ptr() + i * kNumAudioClasses;
                int best = 0;
                for (int c = 1; c < kNumAudioClasses; ++c)
                    if (ap[c] > ap[best]) best = c;
                const double voc = out.visual_probs.data[i * kNumVisualClasses];
                const VisualClass v = voc >= fusion_.lut_threshold ? VisualClass::Vocalizing
                                                                   : VisualClass::NonVocalizing;
                const TargetClass tgt = rule_.apply(static_cast<AudioClass>(best), v);
                out.av_probs.data[i * kNumTargetClasses + static_cast<int>(tgt)] = 1.0;
            }
        } else {
            for (int h = 0; h < kNumTargetClasses; ++h) {
                Tensor p = av_heads_[h].forward(audio_.embeddings(), image_.embeddings(), vmap_);
                require_finite(p, "av.head" + std::to_string(h));
                for (long i = 0; i < B * T; ++i)
                    out.av_probs.data[i * kNumTargetClasses + h] = p.data[i];
            }
        }
        last_out_ = out;
        return out;
    }

    // Gradients w.r.t. the three probability tensors; av gradients are
    // ignored under LuT, which has no learned fusion path.
    void backward(const Tensor& daudio, const Tensor& dvisual, const Tensor& dav) {
        const long B = daudio.dim(0), T = daudio.dim(1);
        const long n_vrows = image_.probs().dim(0);

        std::vector<Tensor> da_embs(kNumAudioClasses), dv_embs(kNumVisualClasses);
        for (int h = 0; h < kNumAudioClasses; ++h)
            da_embs[h].resize({B, T, static_cast<long>(arch_.embedding_dim)});
        for (int h = 0; h < kNumVisualClasses; ++h)
            dv_embs[h].resize({n_vrows, static_cast<long>(arch_.embedding_dim)});

        if (fusion_.op != FusionOp::LuT) {
            for (int h = 0; h < kNumTargetClasses; ++h) {
                Tensor dp({B, T});
                for (long i = 0; i < B * T; ++i)
                    dp.data[i] = dav.data[i * kNumTargetClasses + h];
                av_heads_[h].backward(dp, audio_.embeddings(), image_.embeddings(), vmap_,
                                      da_embs, dv_embs);
            }
        }

        // Down-sample the visual probability gradient onto video frames.
        Tensor dvframe({n_vrows, static_cast<long>(kNumVisualClasses)});
        for (long i = 0; i < B * T; ++i)
            for (int h = 0; h < kNumVisualClasses; ++h)
                dvframe.data[static_cast<long>(vmap_[i]) * kNumVisualClasses + h] +=
                    dvisual.data[i * kNumVisualClasses + h];

        audio_.backward(daudio, da_embs);
        image_.backward(dvframe, dv_embs);
    }

    void visit_params(const nn::ParamVisitor& f) {
        audio_.visit(f);
        image_.visit(f);
        for (auto& h : av_heads_) h.visit(f);
    }

    void visit_buffers(const nn::BufferVisitor& f) {
        audio_.visit_buffers(f);
        image_.visit_buffers(f);
    }

    void zero_grad() {
        visit_params([](const std::string&, Tensor&, Tensor& g) { g.fill(0.0); });
    }

    long param_count() {
        long n = 0;
        visit_params([&n](const std::string&, Tensor& v, Tensor&) { n += v.numel(); });
        return n;
    }

    const ArchConfig& arch() const { return arch_; }
    const FusionConfig& fusion() const { return fusion_; }
    const RuleTable& rule() const { return rule_; }
    void set_rule(const RuleTable& r) { rule_ = r; }
    AudioBranch& audio_branch() { return audio_; }
    ImageBranch& image_branch() { return image_; }
    std::vector<AvHead>& av_heads() { return av_heads_; }

  private:
    ArchConfig arch_;
    FusionConfig fusion_;
    RuleTable rule_ = RuleTable::canonical();
    AudioBranch audio_;
    ImageBranch image_;
    std::vector<AvHead> av_heads_;
    std::vector<int> vmap_;
    ModelOutput last_out_;
};

// ---------------------------------------------------------------------------
// Single-clip inference
// ---------------------------------------------------------------------------

// Per-head frame-wise probabilities and penultimate-dense embeddings.
struct BranchOutput {
    Tensor probs;              // [T, heads]
    std::vector<Tensor> embs;  // per head, [T, emb]
};

inline ModelInput make_clip_input(const MelSpectrogram& mel, const ImageSequence& faces,
                                  const ArchConfig& arch) {
    ModelInput in;
    const long T = mel.n_frames();
    in.mel.resize({1, T, mel.n_bands()});
    std::copy(mel.frames.data.begin(), mel.frames.data.end(), in.mel.data.begin());
    in.batch = 1;
    in.n_video = faces.frames;
    in.faces.resize({faces.frames, static_cast<long>(faces.height),
                     static_cast<long>(faces.width)});
    for (std::size_t i = 0; i < faces.pixels.size(); ++i)
        in.faces.data[i] = faces.pixels[i] / 255.0;
    in.vmap.resize(T);
    for (long t = 0; t < T; ++t) {
        const double center = t * mel.frame_hop + mel.frame_length / 2.0;
        in.vmap[t] = video_index_for_time(center, arch.video_fps, faces.frames);
    }
    return in;
}

inline BranchOutput audio_branch_forward(AvVadNet& net, const MelSpectrogram& mel) {
    Tensor x({1, mel.n_frames(), mel.n_bands()});
    std::copy(mel.frames.data.begin(), mel.frames.data.end(), x.data.begin());
    Tensor p = net.audio_branch().forward(x, nn::Mode::Eval, nullptr);
    BranchOutput out;
    out.probs.resize({mel.n_frames(), static_cast<long>(kNumAudioClasses)});
    std::copy(p.data.begin(), p.data.end(), out.probs.data.begin());
    for (const Tensor& e : net.audio_branch().embeddings()) {
        Tensor emb({mel.n_frames(), e.shape.back()});
        std::copy(e.data.begin(), e.data.end(), emb.data.begin());
        out.embs.push_back(std::move(emb));
    }
    return out;
}

// Runs the image branch per video frame and upsamples to the audio frame grid
// by nearest neighbor.
inline BranchOutput image_branch_forward(AvVadNet& net, const ImageSequence& faces,
                                         const MelSpectrogram& mel) {
    if (faces.frames < 1) throw DataError("image branch: clip has no face frames");
    Tensor x({faces.frames, static_cast<long>(faces.height), static_cast<long>(faces.width)});
    for (std::size_t i = 0; i < faces.pixels.size(); ++i) x.data[i] = faces.pixels[i] / 255.0;
    Tensor p = net.image_branch().forward_frames(x, nn::Mode::Eval, nullptr);

    const long T = mel.n_frames();
    BranchOutput out;
    out.probs.resize({T, static_cast<long>(kNumVisualClasses)});
    out.embs.assign(kNumVisualClasses, Tensor());
    const auto& embs = net.image_branch().embeddings();
    const long E = embs[0].shape.back();
    for (int h = 0; h < kNumVisualClasses; ++h) out.embs[h].resize({T, E});
    for (long t = 0; t < T; ++t) {
        const double center = t * mel.frame_hop + mel.frame_length / 2.0;
        const int v = video_index_for_time(center, net.arch().video_fps, faces.frames);
        for (int h = 0; h < kNumVisualClasses; ++h) {
            out.probs.data[t * kNumVisualClasses + h] = p.data[v * kNumVisualClasses + h];
            std::copy(embs[h].ptr() + static_cast<long>(v) * E,
                      embs[h].ptr() + static_cast<long>(v + 1) * E,
                      out.embs[h].ptr() + t * E);
        }
    }
    return out;
}

// Fused A-V heads over aligned branch outputs; LuT has no learned branch.
inline Tensor av_branch_forward(AvVadNet& net, const BranchOutput& audio,
                                const BranchOutput& visual) {
    if (net.fusion().op == FusionOp::LuT)
        throw UsageError("operator lut bypasses embedding fusion; use lut_combine");
    const long T = audio.probs.dim(0);
    if (visual.probs.dim(0) != T)
        throw UsageError("av branch: audio and visual frame counts differ");

    std::vector<Tensor> a_embs, v_embs;
    for (const Tensor& e : audio.embs) {
        Tensor t({1, T, e.shape.back()});
        std::copy(e.data.begin(), e.data.end(), t.data.begin());
        a_embs.push_back(std::move(t));
    }
    for (const Tensor& e : visual.embs) v_embs.push_back(e);  // already [T, E]
    std::vector<int> vmap(T);
    for (long t = 0; t < T; ++t) vmap[t] = static_cast<int>(t);

    Tensor out({T, static_cast<long>(kNumTargetClasses)});
    for (int h = 0; h < kNumTargetClasses; ++h) {
        Tensor p = net.av_heads()[h].forward(a_embs, v_embs, vmap);
        for (long t = 0; t < T; ++t) out.data[t * kNumTargetClasses + h] = p.data[t];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json arch_to_json(const ArchConfig& a) {
    return {{"n_mels", a.n_mels},           {"audio_channels", a.audio_channels},
            {"gru_hidden", a.gru_hidden},   {"embedding_dim", a.embedding_dim},
            {"image_channels", a.image_channels}, {"image_size", a.image_size},
            {"video_fps", a.video_fps},     {"visual_context", a.visual_context},
            {"av_hidden", a.av_hidden}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig a;
    a.n_mels = j.value("n_mels", a.n_mels);
    if (j.contains("audio_channels")) a.audio_channels = j.at("audio_channels").get<std::vector<int>>();
    a.gru_hidden = j.value("gru_hidden", a.gru_hidden);
    a.embedding_dim = j.value("embedding_dim", a.embedding_dim);
    if (j.contains("image_channels")) a.image_channels = j.at("image_channels").get<std::vector<int>>();
    a.image_size = j.value("image_size", a.image_size);
    a.video_fps = j.value("video_fps", a.video_fps);
    a.visual_context = j.value("visual_context", a.visual_context);
    a.av_hidden = j.value("av_hidden", a.av_hidden);
    a.validate();
    return a;
}

inline nlohmann::json fusion_to_json(const FusionConfig& f) {
    nlohmann::json wiring;
    for (int h = 0; h < kNumTargetClasses; ++h) {
        nlohmann::json pairs = nlohmann::json::array();
        for (const auto& [a, v] : f.wiring[h]) pairs.push_back({a, v});
        wiring[to_string(static_cast<TargetClass>(h))] = pairs;
    }
    return {{"operator", to_string(f.op)}, {"lut_threshold", f.lut_threshold},
            {"wiring", wiring}};
}

inline FusionConfig fusion_from_json(const nlohmann::json& j) {
    FusionConfig f = FusionConfig::defaults();
    if (j.contains("operator")) f.op = fusion_op_from_string(j.at("operator").get<std::string>());
    f.lut_threshold = j.value("lut_threshold", f.lut_threshold);
    if (j.contains("wiring")) {
        for (int h = 0; h < kNumTargetClasses; ++h) {
            const std::string key = to_string(static_cast<TargetClass>(h));
            if (!j.at("wiring").contains(key)) continue;
            f.wiring[h].clear();
            for (const auto& pair : j.at("wiring").at(key))
                f.wiring[h].push_back({pair.at(0).get<int>(), pair.at(1).get<int>()});
        }
    }
    f.validate();
    return f;
}

// Checkpoint = key-value manifest (arch + fusion + tensor listing) plus one
// tensor archive with every parameter and normalization buffer.
inline void save_checkpoint(const std::string& dir, AvVadNet& net) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::vector<archive::Record> records;
    net.visit_params([&records](const std::string& name, Tensor& v, Tensor&) {
        records.push_back(archive::from_tensor(name, v));
    });
    net.visit_buffers([&records](const std::string& name, Tensor& v) {
        records.push_back(archive::from_tensor("buffer." + name, v));
    });
    const std::string params_path = (fs::path(dir) / "params.avt").string();
    archive::write_file(params_path, records);

    nlohmann::json manifest;
    manifest["format"] = "avvad-checkpoint-v1";
    manifest["arch"] = arch_to_json(net.arch());
    manifest["fusion"] = fusion_to_json(net.fusion());
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json t;
        t["name"] = r.name;
        t["dims"] = r.dims;
        tensors.push_back(t);
    }
    manifest["tensors"] = tensors;
    manifest["params_sha256"] = Sha256::of(archive::encode(records));

    std::ofstream out(fs::path(dir) / "checkpoint.json");
    if (!out) throw DataError("cannot write checkpoint manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

inline AvVadNet load_checkpoint(const std::string& dir, double dropout = 0.0) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "checkpoint.json").string();
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open checkpoint manifest: " + manifest_path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint manifest " + manifest_path + ": " + e.what());
    }
    if (manifest.value("format", "") != "avvad-checkpoint-v1")
        throw DataError("unknown checkpoint format in " + manifest_path);

    AvVadNet net(arch_from_json(manifest.at("arch")), fusion_from_json(manifest.at("fusion")),
                 dropout);

    const std::string params_path = (fs::path(dir) / "params.avt").string();
    std::ifstream params_in(params_path, std::ios::binary);
    if (!params_in) throw DataError("cannot open checkpoint parameters: " + params_path);
    const std::string params_bytes((std::istreambuf_iterator<char>(params_in)),
                                   std::istreambuf_iterator<char>());
    if (manifest.contains("params_sha256") &&
        manifest.at("params_sha256").get<std::string>() != Sha256::of(params_bytes))
        throw DataError("checkpoint parameter archive hash mismatch in " + dir);
    const auto records =
        archive::decode(reinterpret_cast<const std::uint8_t*>(params_bytes.data()),
                        params_bytes.size(), params_path);

    auto find = [&records](const std::string& name) -> const archive::Record* {
        for (const auto& r : records)
            if (r.name == name) return &r;
        return nullptr;
    };
    net.visit_params([&](const std::string& name, Tensor& v, Tensor&) {
        const archive::Record* r = find(name);
        if (r == nullptr) throw DataError("checkpoint missing tensor '" + name + "'");
        Tensor loaded = archive::to_tensor(*r);
        if (loaded.shape != v.shape)
            throw DataError("checkpoint tensor '" + name + "' has mismatched shape");
        v = std::move(loaded);
    });
    net.visit_buffers([&](const std::string& name, Tensor& v) {
        const archive::Record* r = find("buffer." + name);
        if (r == nullptr) throw DataError("checkpoint missing buffer '" + name + "'");
        Tensor loaded = archive::to_tensor(*r);
        if (loaded.shape != v.shape)
            throw DataError("checkpoint buffer '" + name + "' has mismatched shape");
        v = std::move(loaded);
    });
    return net;
}

inline std::string checkpoint_content_hash(const std::string& dir) {
    namespace fs = std::filesystem;
    Sha256 h;
    for (const char* file : {"checkpoint.json", "params.avt"}) {
        std::ifstream in(fs::path(dir) / file, std::ios::binary);
        if (!in) throw DataError(std::string("checkpoint incomplete, missing ") + file);
        const std::string bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        h.update(bytes);
    }
    return h.hex_digest();
}

}  // namespace avvad
