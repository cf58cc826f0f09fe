// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "avvad/error.hpp"
#include "avvad/sha256.hpp"
#include "avvad/synth.hpp"
#include "avvad/tensor_archive.hpp"
#include "avvad/wav.hpp"

namespace avvad {

// One directory per clip: WAV audio, face-frame tensor archive and JSON-lines
// labels, all listed (with content hashes) in a top-level manifest.
struct DatasetClip {
    std::string clip_id;
    std::string split;  // train | val | test
    ClipSpec spec;
    Waveform audio;
    ImageSequence faces;
    FrameLabelTrack labels;
};

namespace dataset_detail {

inline nlohmann::json spec_to_json(const ClipSpec& spec) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : spec.events)
        events.push_back({{"onset_s", e.onset_s}, {"offset_s", e.offset_s},
                          {"source", to_string(e.source)}});
    return {{"duration_s", spec.duration_s}, {"seed", spec.seed},
            {"mouth_noise_density", spec.mouth_noise_density},
            {"visual_dropout_density", spec.visual_dropout_density}, {"events", events}};
}

inline ClipSpec spec_from_json(const nlohmann::json& j) {
    ClipSpec spec;
    spec.duration_s = j.at("duration_s").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.mouth_noise_density = j.value("mouth_noise_density", spec.mouth_noise_density);
    spec.visual_dropout_density =
        j.value("visual_dropout_density", spec.visual_dropout_density);
    for (const auto& e : j.at("events")) {
        spec.events.push_back({e.at("onset_s").get<double>(), e.at("offset_s").get<double>(),
                               source_kind_from_string(e.at("source").get<std::string>())});
    }
    return spec;
}

inline std::string labels_to_jsonl(const FrameLabelTrack& labels) {
    std::string out;
    for (std::size_t i = 0; i < labels.n_frames(); ++i) {
        nlohmann::json line = {{"frame", i},
                               {"audio", to_string(labels.audio[i])},
                               {"visual", to_string(labels.visual[i])},
                               {"target", to_string(labels.target[i])}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

inline void labels_from_jsonl(const std::string& text, FrameLabelTrack& labels,
                              const std::string& ctx) {
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad label line in " + ctx + ": " + e.what());
        }
        labels.audio.push_back(audio_class_from_string(j.at("audio").get<std::string>()));
        labels.visual.push_back(visual_class_from_string(j.at("visual").get<std::string>()));
        labels.target.push_back(target_class_from_string(j.at("target").get<std::string>()));
    }
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("short write: " + path);
}

inline std::string file_sha256(const std::string& path) {
    return Sha256::of(read_text_file(path));
}

}  // namespace dataset_detail

// Writes every clip plus manifest.json; returns the manifest document.
inline nlohmann::json write_dataset(const std::vector<DatasetClip>& clips,
                                    const std::string& dir) {
    namespace fs = std::filesystem;
    using namespace dataset_detail;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format"] = "avvad-dataset-v1";
    nlohmann::json clip_list = nlohmann::json::array();

    for (const auto& clip : clips) {
        clip.labels.validate();
        const fs::path clip_dir = fs::path(dir) / "clips" / clip.clip_id;
        fs::create_directories(clip_dir);

        const std::string audio_rel = "clips/" + clip.clip_id + "/audio.wav";
        const std::string faces_rel = "clips/" + clip.clip_id + "/faces.avt";
        const std::string labels_rel = "clips/" + clip.clip_id + "/labels.jsonl";

        write_wav((fs::path(dir) / audio_rel).string(), clip.audio);
        archive::write_file((fs::path(dir) / faces_rel).string(),
                            {archive::from_images("faces", clip.faces)});
        write_text_file((fs::path(dir) / labels_rel).string(), labels_to_jsonl(clip.labels));

        nlohmann::json entry;
        entry["clip_id"] = clip.clip_id;
        entry["duration_s"] = clip.spec.duration_s;
        entry["seed"] = clip.spec.seed;
        entry["split"] = clip.split;
        entry["label_hop_s"] = clip.labels.hop;
        entry["sample_rate"] = clip.audio.sample_rate;
        entry["spec"] = spec_to_json(clip.spec);
        entry["paths"] = {{"audio", audio_rel}, {"faces", faces_rel}, {"labels", labels_rel}};
        entry["sha256"] = {{"audio", file_sha256((fs::path(dir) / audio_rel).string())},
                           {"faces", file_sha256((fs::path(dir) / faces_rel).string())},
                           {"labels", file_sha256((fs::path(dir) / labels_rel).string())}};
        clip_list.push_back(entry);
    }
    manifest["clips"] = clip_list;
    write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
    return manifest;
}

inline std::vector<DatasetClip> read_dataset(const std::string& dir,
                                             const std::string& split_filter = "") {
    namespace fs = std::filesystem;
    using namespace dataset_detail;

    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad dataset manifest " + manifest_path + ": " + e.what());
    }
    if (manifest.value("format", "") != "avvad-dataset-v1")
        throw DataError("unknown dataset format in " + manifest_path);

    std::vector<DatasetClip> clips;
    for (const auto& entry : manifest.at("clips")) {
        DatasetClip clip;
        clip.clip_id = entry.at("clip_id").get<std::string>();
        clip.split = entry.at("split").get<std::string>();
        if (!split_filter.empty() && clip.split != split_filter) continue;
        clip.spec = spec_from_json(entry.at("spec"));

        const auto& paths = entry.at("paths");
        const auto& hashes = entry.at("sha256");
        auto resolve = [&](const char* key) {
            const std::string rel = paths.at(key).get<std::string>();
            const std::string full = (fs::path(dir) / rel).string();
            if (!fs::exists(full))
                throw DataError("clip '" + clip.clip_id + "': missing file " + rel);
            if (file_sha256(full) != hashes.at(key).get<std::string>())
                throw DataError("clip '" + clip.clip_id + "': checksum mismatch on " + rel);
            return full;
        };

        clip.audio = read_wav(resolve("audio"));
        const auto records = archive::read_file(resolve("faces"));
        if (records.empty()) throw DataError("clip '" + clip.clip_id + "': empty faces archive");
        clip.faces = archive::to_images(records.front());
        clip.labels.hop = entry.at("label_hop_s").get<double>();
        labels_from_jsonl(read_text_file(resolve("labels")), clip.labels, clip.clip_id);
        clip.labels.validate();
        clips.push_back(std::move(clip));
    }
    return clips;
}

// Seconds of each audio / target class across a set of clips, for synth-time
// summaries.
inline std::map<std::string, double> class_duration_summary(const std::vector<DatasetClip>& clips) {
    std::map<std::string, double> seconds;
    for (const auto& clip : clips) {
        for (std::size_t i = 0; i < clip.labels.n_frames(); ++i) {
            seconds[std::string("audio.") + to_string(clip.labels.audio[i])] += clip.labels.hop;
            seconds[std::string("target.") + to_string(clip.labels.target[i])] += clip.labels.hop;
        }
    }
    return seconds;
}

}  // namespace avvad
