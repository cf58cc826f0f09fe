// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0
//
// Command-line front end: corpus synthesis, training, prediction, scoring
// and timeline plotting, driven by one config file with flag overrides.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "avvad/avvad.hpp"

namespace fs = std::filesystem;
using namespace avvad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

AppConfig load_or_default(const std::string& path) {
    if (path.empty()) return AppConfig{};
    return load_config(path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << text;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    bool force = false;
};

int cmd_synth(const SynthArgs& args) {
    AppConfig cfg = load_or_default(args.config_path);
    if (args.seed) cfg.synth.seed = *args.seed;

    const int total = cfg.synth.train_clips + cfg.synth.val_clips + cfg.synth.test_clips;
    if (total <= 0) throw UsageError("synth: config requests zero clips");

    if (fs::exists(args.out_dir) && !fs::is_empty(args.out_dir) && !args.force)
        throw UsageError("synth: output directory " + args.out_dir +
                         " is not empty (pass --force to overwrite)");

    std::vector<DatasetClip> clips;
    auto make_split = [&](const std::string& split, int count, const ScenarioConfig& scenario,
                          std::uint64_t split_tag) {
        for (int i = 0; i < count; ++i) {
            const std::uint64_t clip_seed =
                mix_seed(mix_seed(cfg.synth.seed, split_tag), static_cast<std::uint64_t>(i));
            DatasetClip clip;
            std::ostringstream id;
            id << split << "-" << std::setw(4) << std::setfill('0') << i;
            clip.clip_id = id.str();
            clip.split = split;
            const ClipSpec spec = sample_clip_spec(scenario, clip_seed);
            SynthClip synth = synth_clip(spec, cfg.frontend, {cfg.arch.video_fps,
                                         cfg.arch.image_size}, cfg.rule);
            clip.spec = synth.spec;
            clip.audio = std::move(synth.audio);
            clip.faces = std::move(synth.faces);
            clip.labels = std::move(synth.labels);
            clips.push_back(std::move(clip));
        }
    };
    make_split("train", cfg.synth.train_clips, cfg.synth.train_scenario, 1);
    make_split("val", cfg.synth.val_clips, cfg.synth.val_scenario, 2);
    make_split("test", cfg.synth.test_clips, cfg.synth.test_scenario, 3);

    write_dataset(clips, args.out_dir);

    for (const std::string split : {"train", "val", "test"}) {
        std::vector<DatasetClip> subset;
        for (auto& c : clips)
            if (c.split == split) subset.push_back(c);
        if (subset.empty()) continue;
        std::cout << "split " << split << ": " << subset.size() << " clips\n";
        for (const auto& [key, seconds] : class_duration_summary(subset))
            std::cout << "  " << key << ": " << std::fixed << std::setprecision(1) << seconds
                      << " s\n";
        std::cout.unsetf(std::ios::fixed);
    }

    RunManifest manifest;
    manifest.command = "synth";
    manifest.config = config_to_json(cfg);
    manifest.seed = cfg.synth.seed;
    manifest.outputs = {{"dataset", args.out_dir}};
    manifest.write((fs::path(args.out_dir) / "run_manifest.json").string());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string op;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
};

int cmd_train(const TrainArgs& args) {
    AppConfig cfg = load_or_default(args.config_path);
    if (!args.op.empty()) cfg.train.op = fusion_op_from_string(args.op);
    if (args.seed) cfg.train.seed = *args.seed;
    if (args.epochs) cfg.train.epochs = *args.epochs;

    const auto train_set = read_dataset(args.data_dir, "train");
    const auto val_set = read_dataset(args.data_dir, "val");
    if (train_set.empty() || val_set.empty())
        throw DataError("train: dataset needs non-empty train and val splits");

    std::vector<PreparedClip> train_clips, val_clips;
    for (const auto& c : train_set) train_clips.push_back(prepare_clip(c, cfg.frontend));
    for (const auto& c : val_set) val_clips.push_back(prepare_clip(c, cfg.frontend));

    FusionConfig fusion = FusionConfig::defaults(cfg.train.op);
    fusion.lut_threshold = cfg.lut_threshold;
    TrainResult result = train(train_clips, val_clips, cfg.arch, cfg.train, &fusion);
    result.net.set_rule(cfg.rule);

    fs::create_directories(args.out_dir);
    save_checkpoint(args.out_dir, result.net);
    write_file((fs::path(args.out_dir) / "history.csv").string(), history_csv(result.history));

    RunManifest manifest;
    manifest.command = "train";
    manifest.config = config_to_json(cfg);
    manifest.seed = cfg.train.seed;
    manifest.inputs = {{"dataset", args.data_dir}};
    manifest.outputs = {{"checkpoint", args.out_dir},
                        {"history", (fs::path(args.out_dir) / "history.csv").string()},
                        {"best_epoch", result.best_epoch},
                        {"best_val_loss", result.best_val}};
    manifest.checkpoint_hash = checkpoint_content_hash(args.out_dir);
    manifest.write((fs::path(args.out_dir) / "run_manifest.json").string());

    if (result.diverged) {
        std::cerr << "train: loss became non-finite; kept the last finite checkpoint\n";
        return kExitNumeric;
    }
    std::cout << "trained " << result.history.size() << " epochs, best epoch "
              << result.best_epoch << " (val loss " << result.best_val << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string config_path;
    std::string checkpoint;
    std::string clip_dir;
    std::string branch = "av";
    std::string out_dir;
    bool dump_features = false;
};

std::string tracks_csv(const Tensor& probs, double hop, const std::vector<std::string>& names) {
    std::ostringstream out;
    out.precision(9);
    out << "frame,time_s";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    const long T = probs.dim(0);
    const long H = probs.dim(1);
    for (long t = 0; t < T; ++t) {
        out << t << ',' << t * hop;
        for (long h = 0; h < H; ++h) out << ',' << probs.ptr()[t * H + h];
        out << '\n';
    }
    return out.str();
}

int cmd_predict(const PredictArgs& args) {
    if (args.branch != "audio" && args.branch != "av" && args.branch != "lut")
        throw UsageError("predict: --branch must be audio, av or lut");
    AppConfig cfg = load_or_default(args.config_path);

    AvVadNet net = load_checkpoint(args.checkpoint);
    net.set_rule(cfg.rule);

    const std::string audio_path = (fs::path(args.clip_dir) / "audio.wav").string();
    const Waveform wave = read_wav(audio_path);
    const MelSpectrogram mel = compute_mel(wave, cfg.frontend);
    fs::create_directories(args.out_dir);

    if (args.dump_features)
        archive::write_file((fs::path(args.out_dir) / "mel.avt").string(),
                            {archive::from_tensor("mel", mel.frames)});

    BranchOutput audio_out = audio_branch_forward(net, mel);

    Tensor branch_probs;       // what gets decoded for this branch
    Tensor visual_probs;       // upsampled, only with faces
    Tensor av_probs;
    bool have_visual = false;

    if (args.branch == "av" || args.branch == "lut") {
        const std::string faces_path = (fs::path(args.clip_dir) / "faces.avt").string();
        if (!fs::exists(faces_path))
            throw DataError("predict: branch '" + args.branch + "' needs face frames, but " +
                            faces_path + " is missing");
        const auto records = archive::read_file(faces_path);
        if (records.empty()) throw DataError("predict: empty faces archive " + faces_path);
        const ImageSequence faces = archive::to_images(records.front());
        BranchOutput visual_out = image_branch_forward(net, faces, mel);
        visual_probs = visual_out.probs;
        have_visual = true;

        if (args.branch == "av") {
            if (net.fusion().op == FusionOp::LuT)
                throw UsageError("predict: checkpoint was trained with operator lut, which has "
                                 "no learned fusion branch; use --branch lut");
            av_probs = av_branch_forward(net, audio_out, visual_out);
        } else {
            av_probs = lut_combine(audio_out.probs, visual_out.probs,
                                   net.fusion().lut_threshold, net.rule());
        }
        branch_probs = av_probs;
    } else {
        branch_probs = audio_out.probs;
    }

    const double hop = mel.frame_hop;
    const std::vector<std::string> audio_names = {"a_sil", "a_spe", "a_sin", "a_oth"};
    const std::vector<std::string> av_names = {"av_sil", "av_spe", "av_sin", "av_oth"};
    const auto& names = args.branch == "audio" ? audio_names : av_names;
    write_file((fs::path(args.out_dir) / ("probs_" + args.branch + ".csv")).string(),
               tracks_csv(branch_probs, hop, names));

    const EventList events = probs_to_events(branch_probs, hop, cfg.decode);
    write_events_csv((fs::path(args.out_dir) / ("events_" + args.branch + ".csv")).string(),
                     events);

    if (have_visual) {
        // Combined 10-track file for plotting.
        std::ostringstream out;
        out.precision(9);
        out << "frame,time_s,a_sil,a_spe,a_sin,a_oth,v_voc,v_nonvoc,av_sil,av_spe,av_sin,av_oth\n";
        const long T = branch_probs.dim(0);
        for (long t = 0; t < T; ++t) {
            out << t << ',' << t * hop;
            for (int h = 0; h < kNumAudioClasses; ++h)
                out << ',' << audio_out.probs.ptr()[t * kNumAudioClasses + h];
            for (int h = 0; h < kNumVisualClasses; ++h)
                out << ',' << visual_probs.ptr()[t * kNumVisualClasses + h];
            for (int h = 0; h < kNumTargetClasses; ++h)
                out << ',' << av_probs.ptr()[t * kNumTargetClasses + h];
            out << '\n';
        }
        write_file((fs::path(args.out_dir) / "tracks.csv").string(), out.str());
    }

    RunManifest manifest;
    manifest.command = "predict";
    manifest.config = config_to_json(cfg);
    manifest.seed = 0;
    manifest.inputs = {{"checkpoint", args.checkpoint}, {"clip", args.clip_dir},
                       {"branch", args.branch}};
    manifest.outputs = {{"dir", args.out_dir}};
    manifest.checkpoint_hash = checkpoint_content_hash(args.checkpoint);
    manifest.write((fs::path(args.out_dir) / "run_manifest.json").string());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreArgs {
    std::string config_path;
    std::string ref_path;
    std::string hyp_path;
    std::string mode = "event";
    std::optional<double> collar;
    std::optional<double> segment_len;
    double label_hop_s = 0.022;
    std::string out_path;
};

EventList load_reference(const ScoreArgs& args, FrameLabelTrack* track_out) {
    if (args.ref_path.size() > 6 &&
        args.ref_path.substr(args.ref_path.size() - 6) == ".jsonl") {
        FrameLabelTrack track;
        track.hop = args.label_hop_s;
        dataset_detail::labels_from_jsonl(read_file(args.ref_path), track, args.ref_path);
        track.validate();
        if (track_out != nullptr) *track_out = track;
        return label_track_to_events(track);
    }
    return read_events_csv(args.ref_path);
}

int cmd_score(const ScoreArgs& args) {
    if (args.mode != "event" && args.mode != "segment")
        throw UsageError("score: --mode must be event or segment");
    AppConfig cfg = load_or_default(args.config_path);
    if (args.collar) cfg.score.collar_s = *args.collar;
    if (args.segment_len) cfg.score.segment_len_s = *args.segment_len;

    FrameLabelTrack ref_track;
    ref_track.hop = 0.0;
    const EventList ref = load_reference(args, &ref_track);
    const EventList hyp = read_events_csv(args.hyp_path);

    MetricReport report;
    if (args.mode == "event") {
        report = event_based_metrics(ref, hyp, cfg.score.collar_s);
    } else {
        double duration = 0.0;
        if (ref_track.hop > 0.0) {
            duration = static_cast<double>(ref_track.n_frames()) * ref_track.hop;
        } else {
            for (const auto& e : ref) duration = std::max(duration, e.offset_s);
            for (const auto& e : hyp) duration = std::max(duration, e.offset_s);
        }
        if (duration <= 0.0) duration = cfg.score.segment_len_s;
        report = segment_based_metrics(ref, hyp, duration, cfg.score.segment_len_s);
    }

    nlohmann::json j = report_to_json(report);
    j["mode"] = args.mode;
    std::cout << j.dump(2) << "\n";
    if (!args.out_path.empty()) {
        write_file(args.out_path, j.dump(2) + "\n");
        RunManifest manifest;
        manifest.command = "score";
        manifest.config = config_to_json(cfg);
        manifest.inputs = {{"ref", args.ref_path}, {"hyp", args.hyp_path},
                           {"mode", args.mode}};
        manifest.outputs = {{"report", args.out_path}};
        manifest.write(args.out_path + ".manifest.json");
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
    std::string tracks_path;
    std::string labels_path;
    std::string out_path;
    double label_hop_s = 0.022;
};

int cmd_plot(const PlotArgs& args) {
    const std::string text = read_file(args.tracks_path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("plot: empty tracks file");

    std::vector<std::array<double, 10>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
        if (values.size() != 12)
            throw DataError("plot: expected 12 columns (frame, time, 10 tracks) in " +
                            args.tracks_path);
        std::array<double, 10> tracks{};
        std::copy(values.begin() + 2, values.end(), tracks.begin());
        rows.push_back(tracks);
    }
    if (rows.empty()) throw UsageError("plot: tracks file has no frames");

    const long T = static_cast<long>(rows.size());
    Tensor audio({T, 4}), visual({T, 2}), av({T, 4});
    for (long t = 0; t < T; ++t) {
        for (int h = 0; h < 4; ++h) audio.data[t * 4 + h] = rows[t][h];
        for (int h = 0; h < 2; ++h) visual.data[t * 2 + h] = rows[t][4 + h];
        for (int h = 0; h < 4; ++h) av.data[t * 4 + h] = rows[t][6 + h];
    }

    FrameLabelTrack labels;
    const FrameLabelTrack* labels_ptr = nullptr;
    if (!args.labels_path.empty()) {
        labels.hop = args.label_hop_s;
        dataset_detail::labels_from_jsonl(read_file(args.labels_path), labels, args.labels_path);
        labels.validate();
        labels_ptr = &labels;
    }

    const RgbImage img = render_timeline(audio, visual, av, labels_ptr);
    write_ppm(args.out_path, img);

    RunManifest manifest;
    manifest.command = "plot";
    manifest.inputs = {{"tracks", args.tracks_path}, {"labels", args.labels_path}};
    manifest.outputs = {{"image", args.out_path}};
    manifest.write(args.out_path + ".manifest.json");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rule-embedded audio-visual voice activity detection toolkit"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
    synth->add_option("--config", synth_args.config_path, "Config file (JSON)");
    synth->add_option("--out", synth_args.out_dir, "Output dataset directory")->required();
    std::uint64_t synth_seed = 0;
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "Master seed override");
    synth->add_flag("--force", synth_args.force, "Overwrite a non-empty output directory");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train the three-branch detector");
    train_cmd->add_option("--config", train_args.config_path, "Config file (JSON)");
    train_cmd->add_option("--data", train_args.data_dir, "Dataset directory")->required();
    train_cmd->add_option("--out", train_args.out_dir, "Checkpoint output directory")->required();
    train_cmd->add_option("--operator", train_args.op, "Fusion operator: sc|mm|hp|lut");
    std::uint64_t train_seed = 0;
    auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Training seed override");
    int train_epochs = 0;
    auto* train_epochs_opt = train_cmd->add_option("--epochs", train_epochs, "Epoch override");

    PredictArgs predict_args;
    auto* predict = app.add_subcommand("predict", "Run a checkpoint over one clip");
    predict->add_option("--config", predict_args.config_path, "Config file (JSON)");
    predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint directory")
        ->required();
    predict->add_option("--clip", predict_args.clip_dir, "Clip directory (audio.wav [, faces.avt])")
        ->required();
    predict->add_option("--branch", predict_args.branch, "Branch: audio|av|lut");
    predict->add_option("--out", predict_args.out_dir, "Output directory")->required();
    predict->add_flag("--dump-features", predict_args.dump_features,
                      "Also write the log-mel features as a tensor archive");

    ScoreArgs score_args;
    auto* score = app.add_subcommand("score", "Score hypothesis events against a reference");
    score->add_option("--config", score_args.config_path, "Config file (JSON)");
    score->add_option("--ref", score_args.ref_path, "Reference events CSV or labels JSONL")
        ->required();
    score->add_option("--hyp", score_args.hyp_path, "Hypothesis events CSV")->required();
    score->add_option("--mode", score_args.mode, "event|segment");
    double collar = 0.0, seglen = 0.0;
    auto* collar_opt = score->add_option("--collar", collar, "Onset collar in seconds");
    auto* seglen_opt = score->add_option("--segment-len", seglen, "Segment length in seconds");
    score->add_option("--label-hop-s", score_args.label_hop_s,
                      "Frame hop when the reference is a labels JSONL");
    score->add_option("--out", score_args.out_path, "Also write the JSON report here");

    PlotArgs plot_args;
    auto* plot = app.add_subcommand("plot", "Render probability tracks as a timeline image");
    plot->add_option("--tracks", plot_args.tracks_path, "tracks.csv from predict")->required();
    plot->add_option("--labels", plot_args.labels_path, "Ground-truth labels JSONL (optional)");
    plot->add_option("--label-hop-s", plot_args.label_hop_s, "Frame hop of the labels file");
    plot->add_option("--out", plot_args.out_path, "Output image (PPM)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            if (*synth_seed_opt) synth_args.seed = synth_seed;
            return cmd_synth(synth_args);
        }
        if (train_cmd->parsed()) {
            if (*train_seed_opt) train_args.seed = train_seed;
            if (*train_epochs_opt) train_args.epochs = train_epochs;
            return cmd_train(train_args);
        }
        if (predict->parsed()) return cmd_predict(predict_args);
        if (score->parsed()) {
            if (*collar_opt) score_args.collar = collar;
            if (*seglen_opt) score_args.segment_len = seglen;
            return cmd_score(score_args);
        }
        if (plot->parsed()) return cmd_plot(plot_args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
