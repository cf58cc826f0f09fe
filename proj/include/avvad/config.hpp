// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "avvad/error.hpp"
#include "avvad/events.hpp"
#include "avvad/features.hpp"
#include "avvad/labels.hpp"
#include "avvad/model.hpp"
#include "avvad/synth.hpp"
#include "avvad/train.hpp"

namespace avvad {

struct SynthConfig {
    int train_clips = 28;
    int val_clips = 4;
    int test_clips = 60;
    std::uint64_t seed = 1234;
    ScenarioConfig train_scenario;
    ScenarioConfig val_scenario;
    // The test scenario leans on background voice so that attribution, not
    // detection, is what separates the branches.
    ScenarioConfig test_scenario;

    SynthConfig() {
        test_scenario.anchor_voice_density = 0.30;
        test_scenario.background_voice_density = 0.60;
    }
};

struct ScoreConfig {
    double collar_s = 0.2;
    double segment_len_s = 1.0;
};

// Everything a run needs, loadable from one JSON file; flags override fields.
struct AppConfig {
    FrontendConfig frontend;
    ArchConfig arch;
    TrainConfig train;
    DecodeConfig decode;
    ScoreConfig score;
    SynthConfig synth;
    RuleTable rule = RuleTable::canonical();
    double lut_threshold = 0.5;
};

namespace config_detail {

inline void read_scenario(const nlohmann::json& j, ScenarioConfig& s) {
    s.duration_s = j.value("duration_s", s.duration_s);
    s.anchor_voice_density = j.value("anchor_voice_density", s.anchor_voice_density);
    s.background_voice_density = j.value("background_voice_density", s.background_voice_density);
    s.music_density = j.value("music_density", s.music_density);
    s.noise_density = j.value("noise_density", s.noise_density);
    s.nonverbal_density = j.value("nonverbal_density", s.nonverbal_density);
    s.singing_fraction = j.value("singing_fraction", s.singing_fraction);
    s.min_event_s = j.value("min_event_s", s.min_event_s);
    s.max_event_s = j.value("max_event_s", s.max_event_s);
    s.mouth_noise_density = j.value("mouth_noise_density", s.mouth_noise_density);
    s.visual_dropout_density =
        j.value("visual_dropout_density", s.visual_dropout_density);
}

inline nlohmann::json scenario_to_json(const ScenarioConfig& s) {
    return {{"duration_s", s.duration_s},
            {"anchor_voice_density", s.anchor_voice_density},
            {"background_voice_density", s.background_voice_density},
            {"music_density", s.music_density},
            {"noise_density", s.noise_density},
            {"nonverbal_density", s.nonverbal_density},
            {"singing_fraction", s.singing_fraction},
            {"min_event_s", s.min_event_s},
            {"max_event_s", s.max_event_s},
            {"mouth_noise_density", s.mouth_noise_density},
            {"visual_dropout_density", s.visual_dropout_density}};
}

}  // namespace config_detail

inline AppConfig config_from_json(const nlohmann::json& j) {
    AppConfig cfg;
    if (j.contains("frontend")) {
        const auto& f = j.at("frontend");
        cfg.frontend.sample_rate = f.value("sample_rate", cfg.frontend.sample_rate);
        cfg.frontend.window_s = f.value("window_s", cfg.frontend.window_s);
        cfg.frontend.overlap = f.value("overlap", cfg.frontend.overlap);
        cfg.frontend.fmin_hz = f.value("fmin_hz", cfg.frontend.fmin_hz);
        cfg.frontend.fmax_hz = f.value("fmax_hz", cfg.frontend.fmax_hz);
        cfg.frontend.energy_floor = f.value("energy_floor", cfg.frontend.energy_floor);
    }
    if (j.contains("arch")) cfg.arch = arch_from_json(j.at("arch"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        cfg.train.lr = t.value("lr", cfg.train.lr);
        cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
        cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.chunk_frames = t.value("chunk_frames", cfg.train.chunk_frames);
        cfg.train.dropout = t.value("dropout", cfg.train.dropout);
        cfg.train.seed = t.value("seed", cfg.train.seed);
        if (t.contains("operator"))
            cfg.train.op = fusion_op_from_string(t.at("operator").get<std::string>());
        if (t.contains("loss_weights")) {
            const auto w = t.at("loss_weights").get<std::vector<double>>();
            if (w.size() != 10)
                throw UsageError("config: loss_weights must have exactly 10 entries");
            std::copy(w.begin(), w.end(), cfg.train.weights.lambda.begin());
        }
    }
    if (j.contains("decode")) {
        const auto& d = j.at("decode");
        cfg.decode.threshold = d.value("threshold", cfg.decode.threshold);
        cfg.decode.median_len = d.value("median_len", cfg.decode.median_len);
        cfg.decode.min_dur_s = d.value("min_dur_s", cfg.decode.min_dur_s);
    }
    if (j.contains("score")) {
        const auto& s = j.at("score");
        cfg.score.collar_s = s.value("collar_s", cfg.score.collar_s);
        cfg.score.segment_len_s = s.value("segment_len_s", cfg.score.segment_len_s);
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        cfg.synth.train_clips = s.value("train_clips", cfg.synth.train_clips);
        cfg.synth.val_clips = s.value("val_clips", cfg.synth.val_clips);
        cfg.synth.test_clips = s.value("test_clips", cfg.synth.test_clips);
        cfg.synth.seed = s.value("seed", cfg.synth.seed);
        if (s.contains("scenario")) {
            config_detail::read_scenario(s.at("scenario"), cfg.synth.train_scenario);
            config_detail::read_scenario(s.at("scenario"), cfg.synth.val_scenario);
            config_detail::read_scenario(s.at("scenario"), cfg.synth.test_scenario);
        }
        if (s.contains("train_scenario"))
            config_detail::read_scenario(s.at("train_scenario"), cfg.synth.train_scenario);
        if (s.contains("val_scenario"))
            config_detail::read_scenario(s.at("val_scenario"), cfg.synth.val_scenario);
        if (s.contains("test_scenario"))
            config_detail::read_scenario(s.at("test_scenario"), cfg.synth.test_scenario);
    }
    if (j.contains("rule_table")) {
        for (const auto& [key, value] : j.at("rule_table").items()) {
            const auto sep = key.find('|');
            if (sep == std::string::npos)
                throw UsageError("config: rule_table keys look like 'Speech|NonVocalizing'");
            const AudioClass a = audio_class_from_string(key.substr(0, sep));
            const VisualClass v = visual_class_from_string(key.substr(sep + 1));
            cfg.rule.cells[static_cast<int>(a)][static_cast<int>(v)] =
                target_class_from_string(value.get<std::string>());
        }
    }
    cfg.lut_threshold = j.value("lut_threshold", cfg.lut_threshold);
    return cfg;
}

inline nlohmann::json config_to_json(const AppConfig& cfg) {
    nlohmann::json j;
    j["frontend"] = {{"sample_rate", cfg.frontend.sample_rate},
                     {"window_s", cfg.frontend.window_s},
                     {"overlap", cfg.frontend.overlap},
                     {"fmin_hz", cfg.frontend.fmin_hz},
                     {"fmax_hz", cfg.frontend.fmax_hz},
                     {"energy_floor", cfg.frontend.energy_floor}};
    j["arch"] = arch_to_json(cfg.arch);
    std::vector<double> weights(cfg.train.weights.lambda.begin(),
                                cfg.train.weights.lambda.end());
    j["train"] = {{"lr", cfg.train.lr},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"chunk_frames", cfg.train.chunk_frames},
                  {"dropout", cfg.train.dropout},
                  {"seed", cfg.train.seed},
                  {"operator", to_string(cfg.train.op)},
                  {"loss_weights", weights}};
    j["decode"] = {{"threshold", cfg.decode.threshold},
                   {"median_len", cfg.decode.median_len},
                   {"min_dur_s", cfg.decode.min_dur_s}};
    j["score"] = {{"collar_s", cfg.score.collar_s},
                  {"segment_len_s", cfg.score.segment_len_s}};
    j["synth"] = {{"train_clips", cfg.synth.train_clips},
                  {"val_clips", cfg.synth.val_clips},
                  {"test_clips", cfg.synth.test_clips},
                  {"seed", cfg.synth.seed},
                  {"train_scenario", config_detail::scenario_to_json(cfg.synth.train_scenario)},
                  {"val_scenario", config_detail::scenario_to_json(cfg.synth.val_scenario)},
                  {"test_scenario", config_detail::scenario_to_json(cfg.synth.test_scenario)}};
    nlohmann::json rule;
    for (int a = 0; a < kNumAudioClasses; ++a)
        for (int v = 0; v < kNumVisualClasses; ++v)
            rule[std::string(to_string(static_cast<AudioClass>(a))) + "|" +
                 to_string(static_cast<VisualClass>(v))] =
                to_string(cfg.rule.cells[a][v]);
    j["rule_table"] = rule;
    j["lut_threshold"] = cfg.lut_threshold;
    return j;
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace avvad
