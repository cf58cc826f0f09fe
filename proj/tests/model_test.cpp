// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <filesystem>

#include "avvad/features.hpp"
#include "avvad/model.hpp"
#include "avvad/rng.hpp"
#include "avvad/synth.hpp"

using namespace avvad;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(std::vector<long> shape, std::uint64_t seed, double scale = 1.0) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

std::vector<double> random_vec(int n, std::uint64_t seed) {
    std::vector<double> v(n);
    Rng rng(seed);
    for (auto& x : v) x = rng.normal();
    return v;
}

// Straight-line scalar convolution, the oracle for the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int cin, int cout, int sh,
                  int sw) {
    const long B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const long Ho = (H + 2 - 3) / sh + 1;
    const long Wo = (W + 2 - 3) / sw + 1;
    Tensor y({B, Ho, Wo, cout});
    for (long bb = 0; bb < B; ++bb)
        for (long ho = 0; ho < Ho; ++ho)
            for (long wo = 0; wo < Wo; ++wo)
                for (int co = 0; co < cout; ++co) {
                    double acc = b.data[co];
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            const long h = ho * sh - 1 + i;
                            const long ww = wo * sw - 1 + j;
                            if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
                            for (int ci = 0; ci < cin; ++ci)
                                acc += x.data[((bb * H + h) * W + ww) * cin + ci] *
                                       w.data[(static_cast<long>(co) * 9 + i * 3L + j) * cin + ci];
                        }
                    y.data[((bb * Ho + ho) * Wo + wo) * cout + co] = acc;
                }
    return y;
}

ArchConfig tiny_arch() {
    ArchConfig arch;
    arch.audio_channels = {2, 3};
    arch.gru_hidden = 4;
    arch.embedding_dim = 5;
    arch.image_channels = {2, 3};
    arch.image_size = 16;
    return arch;
}

}  // namespace

TEST(GluBlock, NeutralGateHalvesLinearPath) {
    detail::GluBlock glu("glu", 2, 3);
    glu.init(7);
    glu.gate_conv().weight().fill(0.0);
    glu.gate_conv().bias().fill(0.0);

    const Tensor x = random_tensor({1, 4, 6, 2}, 11);
    const Tensor lin = glu.linear_conv().forward(x);
    const Tensor y = glu.forward(x);
    ASSERT_EQ(y.shape, lin.shape);
    for (long i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data[i], 0.5 * lin.data[i], 1e-12);
}

TEST(GluBlock, ClosedGateZeroesOutput) {
    detail::GluBlock glu("glu", 1, 2);
    glu.init(3);
    glu.gate_conv().weight().fill(0.0);
    glu.gate_conv().bias().fill(-1e9);
    const Tensor y = glu.forward(random_tensor({1, 5, 5, 1}, 2));
    for (double v : y.data) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(GluBlock, MatchesScalarOracle) {
    detail::GluBlock glu("glu", 4, 4);
    glu.init(19);
    const Tensor x = random_tensor({1, 8, 8, 4}, 23);

    const Tensor lin = naive_conv(x, glu.linear_conv().weight(), glu.linear_conv().bias(), 4, 4,
                                  1, 1);
    const Tensor gate = naive_conv(x, glu.gate_conv().weight(), glu.gate_conv().bias(), 4, 4, 1,
                                   1);
    const Tensor y = glu.forward(x);
    double max_diff = 0.0;
    for (long i = 0; i < y.numel(); ++i) {
        const double expected = lin.data[i] / (1.0 + std::exp(-gate.data[i])) ;
        max_diff = std::max(max_diff, std::abs(y.data[i] - expected));
    }
    EXPECT_LT(max_diff, 1e-5);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
    nn::Conv2d conv("conv", 2, 3, 3, 3, 1, 2, 1, 1);
    conv.init(5);
    Tensor x = random_tensor({2, 4, 5, 2}, 6);

    Tensor y = conv.forward(x);
    Tensor dy(y.shape);
    Rng rng(8);
    for (auto& v : dy.data) v = rng.normal();
    Tensor dx = conv.backward(dy);

    const double h = 1e-6;
    for (long probe : {0L, 7L, dx.numel() - 1}) {
        Tensor xp = x, xm = x;
        xp.data[probe] += h;
        xm.data[probe] -= h;
        const Tensor yp = conv.forward(xp);
        const Tensor ym = conv.forward(xm);
        double fd = 0.0;
        for (long i = 0; i < yp.numel(); ++i)
            fd += dy.data[i] * (yp.data[i] - ym.data[i]) / (2 * h);
        EXPECT_NEAR(dx.data[probe], fd, 1e-5) << "probe " << probe;
    }
}

TEST(PoolConv, HalvesFrequencyCeil) {
    nn::Conv2d pool = make_pool_conv("pool", 2);
    pool.init(4);
    EXPECT_EQ(pool_conv_forward(pool, random_tensor({1, 7, 64, 2}, 1)).dim(2), 32);
    EXPECT_EQ(pool_conv_forward(pool, random_tensor({1, 7, 64, 2}, 1)).dim(1), 7);
    EXPECT_EQ(pool_conv_forward(pool, random_tensor({1, 3, 5, 2}, 2)).dim(2), 3);
    EXPECT_THROW(pool_conv_forward(pool, random_tensor({1, 3, 1, 2}, 3)), UsageError);
}

TEST(AudioBranch, ContractAndDeterminism) {
    ArchConfig arch;  // paper-default sizes
    AvVadNet net(arch, FusionConfig::defaults(FusionOp::HP));
    net.init(1);

    const long T = 30;
    Tensor mel = random_tensor({1, T, 64}, 9, 2.0);
    Tensor p1 = net.audio_branch().forward(mel, nn::Mode::Eval, nullptr);
    Tensor p2 = net.audio_branch().forward(mel, nn::Mode::Eval, nullptr);
    ASSERT_EQ(p1.shape, (std::vector<long>{1, T, 4}));
    for (long i = 0; i < p1.numel(); ++i) {
        EXPECT_GE(p1.data[i], 0.0);
        EXPECT_LE(p1.data[i], 1.0);
        EXPECT_EQ(p1.data[i], p2.data[i]);
    }
    for (const Tensor& emb : net.audio_branch().embeddings()) {
        EXPECT_EQ(emb.shape.back(), 128);  // embeddings live in R^128
        EXPECT_TRUE(emb.all_finite());
    }
}

TEST(AudioBranch, TimeResolutionPreservedProperty) {
    Rng rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        ArchConfig arch = tiny_arch();
        arch.audio_channels.resize(1 + trial % 3, 2);
        AvVadNet net(arch, FusionConfig::defaults(FusionOp::HP));
        net.init(trial);
        const long T = rng.uniform_int(2, 40);
        Tensor p = net.audio_branch().forward(random_tensor({1, T, 64}, trial + 50),
                                              nn::Mode::Eval, nullptr);
        EXPECT_EQ(p.dim(1), T);
    }
}

TEST(AudioBranch, Errors) {
    AvVadNet net(tiny_arch(), FusionConfig::defaults(FusionOp::HP));
    net.init(2);
    EXPECT_THROW(net.audio_branch().forward(random_tensor({1, 5, 32}, 1), nn::Mode::Eval, nullptr),
                 UsageError);
    Tensor bad = random_tensor({1, 5, 64}, 1);
    bad.data[17] = std::nan("");
    try {
        net.audio_branch().forward(bad, nn::Mode::Eval, nullptr);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("audio."), std::string::npos);
    }
}

TEST(ImageBranch, ZeroInputGivesHalfProbabilities) {
    ArchConfig arch = tiny_arch();
    AvVadNet net(arch, FusionConfig::defaults(FusionOp::HP));
    net.init(3);  // biases are zero at init
    Tensor black({4, arch.image_size, arch.image_size});
    Tensor p = net.image_branch().forward_frames(black, nn::Mode::Eval, nullptr);
    for (long i = 0; i < p.numel(); ++i) EXPECT_NEAR(p.data[i], 0.5, 1e-12);
}

TEST(ImageBranch, WrongSizeRejected) {
    AvVadNet net(tiny_arch(), FusionConfig::defaults(FusionOp::HP));
    net.init(3);
    EXPECT_THROW(net.image_branch().forward_frames(Tensor({2, 20, 20}), nn::Mode::Eval, nullptr),
                 UsageError);
}

TEST(ImageBranch, ContextStackReplicatesAtEdges) {
    Tensor faces({3, 2, 2});
    for (long i = 0; i < faces.numel(); ++i) faces.data[i] = static_cast<double>(i / 4);
    const Tensor stacked = stack_face_context(faces, 1, 3, 3);
    ASSERT_EQ(stacked.shape, (std::vector<long>{3, 2, 2, 3}));
    // Frame 0: neighbors clamp to {0, 0, 1}; frame 1: {0, 1, 2}.
    EXPECT_EQ(stacked.ptr()[0], 0.0);
    EXPECT_EQ(stacked.ptr()[1], 0.0);
    EXPECT_EQ(stacked.ptr()[2], 1.0);
    const double* f1 = stacked.ptr() + 1 * 2 * 2 * 3;
    EXPECT_EQ(f1[0], 0.0);
    EXPECT_EQ(f1[1], 1.0);
    EXPECT_EQ(f1[2], 2.0);
}

TEST(ImageBranch, AlignmentMatchesAudioGrid) {
    ArchConfig arch = tiny_arch();
    AvVadNet net(arch, FusionConfig::defaults(FusionOp::HP));
    net.init(4);

    ClipSpec spec;
    spec.duration_s = 2.0;
    spec.seed = 6;
    spec.events.push_back({0.3, 1.6, SourceKind::AnchorSpeech});
    SynthClip clip = synth_clip(spec, {}, {arch.video_fps, arch.image_size});
    MelSpectrogram mel = compute_mel(clip.audio);

    BranchOutput visual = image_branch_forward(net, clip.faces, mel);
    EXPECT_EQ(visual.probs.dim(0), mel.n_frames());
    EXPECT_EQ(visual.embs[0].dim(0), mel.n_frames());

    // Oracle: nearest video frame for each audio frame center, clamped.
    for (long t = 0; t < mel.n_frames(); ++t) {
        const double center = t * mel.frame_hop + mel.frame_length / 2.0;
        long v = static_cast<long>(std::floor(center * 25.0));
        v = std::clamp(v, 0L, static_cast<long>(clip.faces.frames) - 1);
        EXPECT_EQ(video_index_for_time(center, 25.0, clip.faces.frames), static_cast<int>(v));
    }
}

TEST(Fuse, OperatorContracts) {
    const auto a = random_vec(128, 1);
    const auto v = random_vec(128, 2);

    const auto sc = fuse(a, v, FusionOp::SC);
    ASSERT_EQ(sc.size(), 256u);
    for (int i = 0; i < 128; ++i) {
        EXPECT_EQ(sc[i], a[i]);
        EXPECT_EQ(sc[128 + i], v[i]);
    }

    const auto mm = fuse(a, v, FusionOp::MM);
    ASSERT_EQ(mm.size(), 16384u);
    EXPECT_EQ(mm[5 * 128 + 9], a[5] * v[9]);

    const auto hp = fuse(a, v, FusionOp::HP);
    ASSERT_EQ(hp.size(), 128u);
    EXPECT_EQ(hp[3], a[3] * v[3]);

    EXPECT_THROW(fuse(a, v, FusionOp::LuT), UsageError);
    EXPECT_THROW(fuse(a, random_vec(64, 3), FusionOp::HP), UsageError);
}

TEST(Fuse, HadamardMaskIdentities) {
    const auto a = random_vec(128, 4);
    const std::vector<double> ones(128, 1.0), zeros(128, 0.0);
    EXPECT_EQ(fuse(a, ones, FusionOp::HP), a);
    EXPECT_EQ(fuse(a, zeros, FusionOp::HP), zeros);
}

TEST(Fuse, OuterProductIsRankOne) {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        Eigen::VectorXd a(128), v(128);
        for (int i = 0; i < 128; ++i) {
            a[i] = rng.normal();
            v[i] = rng.normal();
        }
        std::vector<double> av(a.data(), a.data() + 128), vv(v.data(), v.data() + 128);
        const auto flat = fuse(av, vv, FusionOp::MM);
        Eigen::MatrixXd M(128, 128);
        for (int i = 0; i < 128; ++i)
            for (int j = 0; j < 128; ++j) M(i, j) = flat[i * 128 + j];
        Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
        const auto& s = svd.singularValues();
        int rank = 0;
        for (int i = 0; i < s.size(); ++i)
            if (s[i] > 1e-6 * s[0]) ++rank;
        EXPECT_LE(rank, 1);
    }
}

TEST(FusionConfig, DefaultWiringMirrorsRuleTable) {
    const FusionConfig cfg = FusionConfig::defaults();
    const int sil = 0, spe = 1, sin = 2, oth = 3, voc = 0, nonvoc = 1;
    using Pairs = std::vector<std::pair<int, int>>;
    // The Speech/Voc cell feeds the speech head; the singing cell rides along
    // for inhibition because frame labels give singing priority.
    EXPECT_EQ(cfg.wiring[spe], (Pairs{{spe, voc}, {sin, voc}}));
    EXPECT_EQ(cfg.wiring[sin], (Pairs{{sin, voc}}));
    EXPECT_EQ(cfg.wiring[sil], (Pairs{{sil, voc}, {sil, nonvoc}}));
    EXPECT_EQ(cfg.wiring[oth], (Pairs{{oth, voc}, {oth, nonvoc}, {spe, nonvoc}, {sin, nonvoc}}));
}

TEST(FusionConfig, UnwiredHeadRejected) {
    FusionConfig cfg = FusionConfig::defaults();
    cfg.wiring[2].clear();
    EXPECT_THROW(cfg.validate(), UsageError);
    EXPECT_THROW(AvVadNet(tiny_arch(), cfg), UsageError);

    FusionConfig thr = FusionConfig::defaults();
    thr.lut_threshold = 1.0;
    EXPECT_THROW(thr.validate(), UsageError);
}

TEST(AvBranch, MatchesExplicitFusePlusDenseOracle) {
    for (FusionOp op : {FusionOp::SC, FusionOp::MM, FusionOp::HP}) {
        ArchConfig arch = tiny_arch();
        AvVadNet net(arch, FusionConfig::defaults(op));
        net.init(21);

        ClipSpec spec;
        spec.duration_s = 1.0;
        spec.seed = 8;
        spec.events.push_back({0.1, 0.8, SourceKind::AnchorSinging});
        SynthClip clip = synth_clip(spec, {}, {arch.video_fps, arch.image_size});
        MelSpectrogram mel = compute_mel(clip.audio);

        BranchOutput audio = audio_branch_forward(net, mel);
        BranchOutput visual = image_branch_forward(net, clip.faces, mel);
        Tensor av = av_branch_forward(net, audio, visual);
        ASSERT_EQ(av.shape, (std::vector<long>{mel.n_frames(), 4}));

        // Oracle: materialize fuse() for every wired pair, concatenate the
        // pairs into the head's dense layer, tanh, combine, sigmoid.
        for (int h = 0; h < 4; ++h) {
            Tensor w1, c1, w2, b;
            net.visit_params([&](const std::string& name, Tensor& v, Tensor&) {
                const std::string base =
                    std::string("av.head_") + to_string(static_cast<TargetClass>(h));
                if (name == base + ".w1") w1 = v;
                if (name == base + ".c1") c1 = v;
                if (name == base + ".w2") w2 = v;
                if (name == base + ".b") b = v;
            });
            const auto& pairs = net.fusion().wiring[h];
            for (long t = 0; t < mel.n_frames(); ++t) {
                std::vector<std::vector<double>> fused_per_pair;
                for (std::size_t p = 0; p < pairs.size(); ++p) {
                    std::vector<double> ea(arch.embedding_dim), ev(arch.embedding_dim);
                    for (int i = 0; i < arch.embedding_dim; ++i) {
                        ea[i] = audio.embs[pairs[p].first].ptr()[t * arch.embedding_dim + i];
                        ev[i] = visual.embs[pairs[p].second].ptr()[t * arch.embedding_dim + i];
                    }
                    fused_per_pair.push_back(fuse(ea, ev, op));
                }
                double logit = b.data[0];
                for (int hu = 0; hu < arch.av_hidden; ++hu) {
                    double pre = c1.data[hu];
                    for (std::size_t p = 0; p < pairs.size(); ++p) {
                        const double* row =
                            w1.ptr() + (static_cast<long>(hu) * pairs.size() + p) * w1.dim(1);
                        for (std::size_t i = 0; i < fused_per_pair[p].size(); ++i)
                            pre += row[i] * fused_per_pair[p][i];
                    }
                    logit += w2.data[hu] * std::tanh(pre);
                }
                const double expected = 1.0 / (1.0 + std::exp(-logit));
                EXPECT_NEAR(av.ptr()[t * 4 + h], expected, 1e-9)
                    << "op " << to_string(op) << " head " << h << " frame " << t;
            }
        }
    }
}

TEST(AvBranch, LutOperatorHasNoLearnedBranch) {
    ArchConfig arch = tiny_arch();
    AvVadNet net(arch, FusionConfig::defaults(FusionOp::LuT));
    net.init(5);
    BranchOutput audio, visual;
    audio.probs.resize({3, 4});
    visual.probs.resize({3, 2});
    EXPECT_THROW(av_branch_forward(net, audio, visual), UsageError);
}

TEST(LutCombine, SpecCases) {
    Tensor audio({1, 4});
    audio.data = {0.1, 0.9, 0.2, 0.3};
    Tensor voc({1, 2});
    voc.data = {0.8, 0.2};
    Tensor out = lut_combine(audio, voc, 0.5);
    EXPECT_EQ(out.data, (std::vector<double>{0, 1, 0, 0}));  // Speech

    voc.data = {0.2, 0.8};
    out = lut_combine(audio, voc, 0.5);
    EXPECT_EQ(out.data, (std::vector<double>{0, 0, 0, 1}));  // Others

    audio.data = {0.95, 0.1, 0.2, 0.3};
    for (double v : {0.1, 0.9}) {
        Tensor vis({1, 2});
        vis.data = {v, 1 - v};
        out = lut_combine(audio, vis, 0.5);
        EXPECT_EQ(out.data, (std::vector<double>{1, 0, 0, 0}));  // Silence row
    }
}

TEST(LutCombine, EqualsRuleOracleExhaustivelyAndOnRandoms) {
    // Exhaustive over the 4x2 one-hot grid.
    for (int a = 0; a < 4; ++a)
        for (int v = 0; v < 2; ++v) {
            Tensor ap({1, 4}), vp({1, 2});
            ap.data[a] = 1.0;
            vp.data[0] = v == 0 ? 1.0 : 0.0;
            vp.data[1] = 1.0 - vp.data[0];
            const Tensor out = lut_combine(ap, vp, 0.5);
            const TargetClass expected =
                apply_rule(static_cast<AudioClass>(a), static_cast<VisualClass>(v));
            for (int c = 0; c < 4; ++c)
                EXPECT_EQ(out.data[c], c == static_cast<int>(expected) ? 1.0 : 0.0);
        }

    // Property: equals one_hot(rule(argmax, threshold)) on random vectors.
    Rng rng(31337);
    const double threshold = 0.5;
    for (int trial = 0; trial < 2000; ++trial) {
        Tensor ap({1, 4}), vp({1, 2});
        for (auto& x : ap.data) x = rng.uniform();
        vp.data[0] = rng.uniform();
        vp.data[1] = 1 - vp.data[0];
        const Tensor out = lut_combine(ap, vp, threshold);

        int argmax = 0;
        for (int c = 1; c < 4; ++c)
            if (ap.data[c] > ap.data[argmax]) argmax = c;
        const VisualClass v = vp.data[0] >= threshold ? VisualClass::Vocalizing
                                                      : VisualClass::NonVocalizing;
        const TargetClass expected = apply_rule(static_cast<AudioClass>(argmax), v);
        for (int c = 0; c < 4; ++c)
            ASSERT_EQ(out.data[c], c == static_cast<int>(expected) ? 1.0 : 0.0);
    }
}

TEST(Model, ForwardIsPureInEvalMode) {
    ArchConfig arch = tiny_arch();
    AvVadNet net(arch, FusionConfig::defaults(FusionOp::HP), 0.4);
    net.init(10);

    ClipSpec spec;
    spec.duration_s = 1.0;
    spec.seed = 3;
    spec.events.push_back({0.2, 0.9, SourceKind::AnchorSpeech});
    SynthClip clip = synth_clip(spec, {}, {arch.video_fps, arch.image_size});
    MelSpectrogram mel = compute_mel(clip.audio);
    ModelInput in = make_clip_input(mel, clip.faces, arch);

    const ModelOutput a = net.forward(in, nn::Mode::Eval, nullptr);
    const ModelOutput b = net.forward(in, nn::Mode::Eval, nullptr);
    EXPECT_EQ(a.audio_probs.data, b.audio_probs.data);
    EXPECT_EQ(a.visual_probs.data, b.visual_probs.data);
    EXPECT_EQ(a.av_probs.data, b.av_probs.data);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
    const std::string dir = (fs::temp_directory_path() / "avvad_ckpt").string();
    fs::remove_all(dir);

    ArchConfig arch = tiny_arch();
    AvVadNet net(arch, FusionConfig::defaults(FusionOp::SC));
    net.init(42);
    save_checkpoint(dir, net);

    AvVadNet loaded = load_checkpoint(dir);
    EXPECT_EQ(loaded.fusion().op, FusionOp::SC);
    EXPECT_EQ(loaded.arch().embedding_dim, arch.embedding_dim);

    bool all_equal = true;
    std::vector<std::pair<std::string, Tensor>> original;
    net.visit_params([&original](const std::string& n, Tensor& v, Tensor&) {
        original.push_back({n, v});
    });
    std::size_t i = 0;
    loaded.visit_params([&](const std::string& n, Tensor& v, Tensor&) {
        if (original[i].first != n || original[i].second.data != v.data) all_equal = false;
        ++i;
    });
    EXPECT_TRUE(all_equal);
    EXPECT_EQ(i, original.size());

    // Same outputs after reload.
    Tensor mel = random_tensor({1, 8, 64}, 5);
    const Tensor p1 = net.audio_branch().forward(mel, nn::Mode::Eval, nullptr);
    const Tensor p2 = loaded.audio_branch().forward(mel, nn::Mode::Eval, nullptr);
    EXPECT_EQ(p1.data, p2.data);

    // Tampering is detected.
    {
        std::ofstream out(fs::path(dir) / "params.avt", std::ios::binary | std::ios::app);
        out << "x";
    }
    EXPECT_THROW(load_checkpoint(dir), DataError);
    fs::remove_all(dir);
}

TEST(Checkpoint, ContentHashTracksContent) {
    const std::string dir_a = (fs::temp_directory_path() / "avvad_ckpt_a").string();
    const std::string dir_b = (fs::temp_directory_path() / "avvad_ckpt_b").string();
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    AvVadNet net(tiny_arch(), FusionConfig::defaults(FusionOp::HP));
    net.init(1);
    save_checkpoint(dir_a, net);
    save_checkpoint(dir_b, net);
    EXPECT_EQ(checkpoint_content_hash(dir_a), checkpoint_content_hash(dir_b));

    AvVadNet other(tiny_arch(), FusionConfig::defaults(FusionOp::HP));
    other.init(2);
    save_checkpoint(dir_b, other);
    EXPECT_NE(checkpoint_content_hash(dir_a), checkpoint_content_hash(dir_b));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}
