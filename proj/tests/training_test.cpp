// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>

#include "avvad/loss.hpp"
#include "avvad/synth.hpp"
#include "avvad/train.hpp"

using namespace avvad;

namespace {

ArchConfig tiny_arch() {
    ArchConfig arch;
    arch.audio_channels = {2, 2};
    arch.gru_hidden = 3;
    arch.embedding_dim = 4;
    arch.image_channels = {2, 2};
    arch.image_size = 16;
    return arch;
}

ArchConfig small_arch() {
    ArchConfig arch;
    arch.audio_channels = {4, 8};
    arch.gru_hidden = 16;
    arch.embedding_dim = 16;
    arch.image_channels = {4, 8};
    arch.image_size = 32;
    return arch;
}

ModelOutput constant_output(long B, long T, double p) {
    ModelOutput out;
    out.audio_probs.resize({B, T, 4});
    out.visual_probs.resize({B, T, 2});
    out.av_probs.resize({B, T, 4});
    out.audio_probs.fill(p);
    out.visual_probs.fill(p);
    out.av_probs.fill(p);
    return out;
}

TargetTensors random_onehot_targets(long B, long T, std::uint64_t seed) {
    TargetTensors t;
    t.audio.resize({B, T, 4});
    t.visual.resize({B, T, 2});
    t.target.resize({B, T, 4});
    Rng rng(seed);
    for (long i = 0; i < B * T; ++i) {
        t.audio.data[i * 4 + rng.uniform_int(0, 3)] = 1.0;
        t.visual.data[i * 2 + rng.uniform_int(0, 1)] = 1.0;
        t.target.data[i * 4 + rng.uniform_int(0, 3)] = 1.0;
    }
    return t;
}

ModelOutput perfect_output(const TargetTensors& t) {
    ModelOutput out;
    out.audio_probs = t.audio;
    out.visual_probs = t.visual;
    out.av_probs = t.target;
    return out;
}

std::vector<PreparedClip> make_clips(int count, double duration, std::uint64_t seed,
                                     const ArchConfig& arch,
                                     const ScenarioConfig& base = ScenarioConfig{}) {
    std::vector<PreparedClip> clips;
    for (int i = 0; i < count; ++i) {
        ScenarioConfig scenario = base;
        scenario.duration_s = duration;
        SynthClip clip = synth_clip(sample_clip_spec(scenario, mix_seed(seed, i)), {},
                                    {arch.video_fps, arch.image_size});
        DatasetClip d;
        d.clip_id = "clip-" + std::to_string(i);
        d.audio = std::move(clip.audio);
        d.faces = std::move(clip.faces);
        d.labels = std::move(clip.labels);
        d.spec = clip.spec;
        clips.push_back(prepare_clip(d, {}));
    }
    return clips;
}

}  // namespace

TEST(TotalLoss, PerfectPredictionsHitTheClampFloor) {
    const TargetTensors targets = random_onehot_targets(2, 7, 3);
    const LossBreakdown loss = total_loss(perfect_output(targets), targets, {});
    const double eps_term = -std::log(1.0 - kProbEps);
    for (double term : loss.terms) EXPECT_NEAR(term, eps_term, 1e-12);
    EXPECT_NEAR(loss.total, 10 * eps_term, 1e-11);
    EXPECT_LT(loss.total, 2e-6);
}

TEST(TotalLoss, UniformHalfIsLogTwoPerHead) {
    const TargetTensors targets = random_onehot_targets(1, 11, 9);
    const LossBreakdown loss = total_loss(constant_output(1, 11, 0.5), targets, {});
    for (double term : loss.terms) EXPECT_NEAR(term, std::log(2.0), 1e-12);
    EXPECT_NEAR(loss.total, 10 * std::log(2.0), 1e-11);
}

TEST(TotalLoss, MatchesScalarRecomputation) {
    const long B = 2, T = 9;
    const TargetTensors targets = random_onehot_targets(B, T, 17);
    ModelOutput out;
    Rng rng(55);
    out.audio_probs.resize({B, T, 4});
    out.visual_probs.resize({B, T, 2});
    out.av_probs.resize({B, T, 4});
    for (auto& v : out.audio_probs.data) v = rng.uniform();
    for (auto& v : out.visual_probs.data) v = rng.uniform();
    for (auto& v : out.av_probs.data) v = rng.uniform();

    LossWeights weights;
    for (int i = 0; i < 10; ++i) weights.lambda[i] = 0.25 * (i + 1);
    const LossBreakdown loss = total_loss(out, targets, weights);

    // Brute force: plain loops over every head and frame.
    auto bce = [](const Tensor& p, const Tensor& y, int head, int heads) {
        double sum = 0.0;
        const long n = p.numel() / heads;
        for (long i = 0; i < n; ++i) {
            const double pc = std::clamp(p.data[i * heads + head], kProbEps, 1 - kProbEps);
            sum += -(y.data[i * heads + head] * std::log(pc) +
                     (1 - y.data[i * heads + head]) * std::log(1 - pc));
        }
        return sum / n;
    };
    double expected_total = 0.0;
    for (int h = 0; h < 4; ++h) {
        const double term = bce(out.audio_probs, targets.audio, h, 4);
        EXPECT_NEAR(loss.terms[h], term, 1e-9);
        expected_total += weights.lambda[h] * term;
    }
    for (int h = 0; h < 2; ++h) {
        const double term = bce(out.visual_probs, targets.visual, h, 2);
        EXPECT_NEAR(loss.terms[4 + h], term, 1e-9);
        expected_total += weights.lambda[4 + h] * term;
    }
    for (int h = 0; h < 4; ++h) {
        const double term = bce(out.av_probs, targets.target, h, 4);
        EXPECT_NEAR(loss.terms[6 + h], term, 1e-9);
        expected_total += weights.lambda[6 + h] * term;
    }
    EXPECT_NEAR(loss.total, expected_total, 1e-9);
}

TEST(TotalLoss, TotalRecomposesFromTerms) {
    const TargetTensors targets = random_onehot_targets(1, 20, 4);
    ModelOutput out = constant_output(1, 20, 0.3);
    LossWeights weights;
    Rng rng(2);
    for (auto& l : weights.lambda) l = rng.uniform(0.0, 3.0);
    const LossBreakdown loss = total_loss(out, targets, weights);
    double total = 0.0;
    for (int i = 0; i < 10; ++i) total += weights.lambda[i] * loss.terms[i];
    EXPECT_NEAR(loss.total, total, 1e-12 * std::max(1.0, std::abs(total)));
}

TEST(TotalLoss, ZeroLambdaMakesTotalInvariantToThatHead) {
    const TargetTensors targets = random_onehot_targets(1, 15, 8);
    LossWeights weights;
    weights.lambda[2] = 0.0;  // audio singing head

    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        ModelOutput a = constant_output(1, 15, 0.4);
        ModelOutput b = a;
        for (long t = 0; t < 15; ++t) b.audio_probs.data[t * 4 + 2] = rng.uniform();
        EXPECT_DOUBLE_EQ(total_loss(a, targets, weights).total,
                         total_loss(b, targets, weights).total);
    }
}

TEST(TotalLoss, MisalignedShapesRejected) {
    const TargetTensors targets = random_onehot_targets(1, 5, 1);
    EXPECT_THROW(total_loss(constant_output(1, 6, 0.5), targets, {}), UsageError);
}

TEST(GradientCheck, SmallModelAllOperators) {
    ArchConfig arch = tiny_arch();

    // One short synthetic chunk as the probe sample.
    auto clips = make_clips(1, 1.2, 99, arch);
    const auto chunks = make_chunks(clips, 20);
    ASSERT_FALSE(chunks.empty());
    auto [input, targets] = assemble_batch(clips, {chunks[0]}, 20, arch);

    for (FusionOp op : {FusionOp::SC, FusionOp::MM, FusionOp::HP, FusionOp::LuT}) {
        AvVadNet net(arch, FusionConfig::defaults(op), 0.0);
        net.init(mix_seed(1234, static_cast<std::uint64_t>(op)));
        EXPECT_LE(net.param_count(), 5000) << to_string(op);
        const double err = gradient_check(net, input, targets, {}, 3, 1e-5);
        EXPECT_LT(err, 1e-4) << "operator " << to_string(op);
    }
}

TEST(GradientCheck, LambdaMaskZeroesImageGradients) {
    ArchConfig arch = tiny_arch();
    auto clips = make_clips(1, 1.2, 5, arch);
    const auto chunks = make_chunks(clips, 16);
    auto [input, targets] = assemble_batch(clips, {chunks[0]}, 16, arch);

    LossWeights weights;  // audio terms only
    for (int i = 4; i < 10; ++i) weights.lambda[i] = 0.0;

    AvVadNet net(arch, FusionConfig::defaults(FusionOp::HP), 0.0);
    net.init(3);
    net.zero_grad();
    LossGrads grads;
    const ModelOutput out = net.forward(input, nn::Mode::Train, nullptr);
    total_loss(out, targets, weights, &grads);
    net.backward(grads.daudio, grads.dvisual, grads.dav);

    net.visit_params([](const std::string& name, Tensor&, Tensor& g) {
        if (name.rfind("image.", 0) == 0) {
            for (double v : g.data) ASSERT_EQ(v, 0.0) << name;
        }
    });
}

TEST(Train, LossDecreasesOnTwentyClips) {
    ArchConfig arch = small_arch();
    auto train_clips = make_clips(20, 3.0, 11, arch);
    auto val_clips = make_clips(3, 3.0, 121, arch);

    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 7;
    cfg.dropout = 0.1;
    cfg.op = FusionOp::HP;
    const TrainResult result = train(train_clips, val_clips, arch, cfg);

    ASSERT_EQ(result.history.size(), 10u);
    EXPECT_FALSE(result.diverged);
    EXPECT_LT(result.history.back().train.total, result.history.front().train.total);
    EXPECT_GE(result.best_epoch, 1);
}

TEST(Train, DeterministicUnderEqualSeeds) {
    ArchConfig arch = tiny_arch();
    auto train_clips = make_clips(4, 2.5, 31, arch);
    auto val_clips = make_clips(2, 2.5, 32, arch);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 99;
    cfg.dropout = 0.3;

    const TrainResult a = train(train_clips, val_clips, arch, cfg);
    const TrainResult b = train(train_clips, val_clips, arch, cfg);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].train.total, b.history[i].train.total);
        EXPECT_EQ(a.history[i].val.total, b.history[i].val.total);
    }

    TrainConfig other = cfg;
    other.seed = 100;
    const TrainResult c = train(train_clips, val_clips, arch, other);
    EXPECT_NE(a.history[0].train.total, c.history[0].train.total);
}

TEST(Train, DivergenceAbortsWithFiniteParams) {
    ArchConfig arch = tiny_arch();
    auto train_clips = make_clips(2, 2.5, 41, arch);
    auto val_clips = make_clips(1, 2.5, 42, arch);

    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.lr = 1e200;  // drives activations past double range within a step or two
    cfg.dropout = 0.0;
    TrainResult result = train(train_clips, val_clips, arch, cfg);
    EXPECT_TRUE(result.diverged);
    bool finite = true;
    result.net.visit_params([&finite](const std::string&, Tensor& v, Tensor&) {
        finite = finite && v.all_finite();
    });
    EXPECT_TRUE(finite);
}

TEST(Train, HistoryCsvShape) {
    std::vector<EpochStats> history(2);
    history[0].epoch = 1;
    history[1].epoch = 2;
    const std::string csv = history_csv(history);
    EXPECT_NE(csv.find("epoch,train_a_sil"), std::string::npos);
    EXPECT_NE(csv.find("val_av_oth,val_total"), std::string::npos);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Adam, StepMovesAgainstGradient) {
    ArchConfig arch = tiny_arch();
    AvVadNet net(arch, FusionConfig::defaults(FusionOp::HP));
    net.init(1);
    double w_before = 0.0, g_sign = 0.0;
    net.visit_params([&](const std::string& name, Tensor& v, Tensor& g) {
        if (name == "audio.head_Speech.logit.b") {
            w_before = v.data[0];
            g.data[0] = 2.5;
            g_sign = 1.0;
        }
    });
    ASSERT_EQ(g_sign, 1.0);
    Adam opt(1e-3, 0.9, 0.999, 1e-8);
    opt.step(net);
    net.visit_params([&](const std::string& name, Tensor& v, Tensor&) {
        if (name == "audio.head_Speech.logit.b") EXPECT_LT(v.data[0], w_before);
    });
}
