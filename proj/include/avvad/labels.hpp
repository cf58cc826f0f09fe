// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "avvad/error.hpp"

namespace avvad {

// Frame classes on the three label spaces. Audio classes cover every voice in
// the mix; target classes attribute Speech/Singing to the on-camera anchor
// only, everything else collapsing into Others.
enum class AudioClass : int { Silence = 0, Speech = 1, Singing = 2, Others = 3 };
enum class VisualClass : int { Vocalizing = 0, NonVocalizing = 1 };
enum class TargetClass : int { Silence = 0, Speech = 1, Singing = 2, Others = 3 };

inline constexpr int kNumAudioClasses = 4;
inline constexpr int kNumVisualClasses = 2;
inline constexpr int kNumTargetClasses = 4;

inline const char* to_string(AudioClass c) {
    switch (c) {
        case AudioClass::Silence: return "Silence";
        case AudioClass::Speech: return "Speech";
        case AudioClass::Singing: return "Singing";
        case AudioClass::Others: return "Others";
    }
    return "?";
}

inline const char* to_string(VisualClass c) {
    return c == VisualClass::Vocalizing ? "Vocalizing" : "NonVocalizing";
}

inline const char* to_string(TargetClass c) {
    switch (c) {
        case TargetClass::Silence: return "Silence";
        case TargetClass::Speech: return "Speech";
        case TargetClass::Singing: return "Singing";
        case TargetClass::Others: return "Others";
    }
    return "?";
}

inline AudioClass audio_class_from_string(const std::string& s) {
    if (s == "Silence") return AudioClass::Silence;
    if (s == "Speech") return AudioClass::Speech;
    if (s == "Singing") return AudioClass::Singing;
    if (s == "Others") return AudioClass::Others;
    throw DataError("unknown audio class: " + s);
}

inline VisualClass visual_class_from_string(const std::string& s) {
    if (s == "Vocalizing") return VisualClass::Vocalizing;
    if (s == "NonVocalizing") return VisualClass::NonVocalizing;
    throw DataError("unknown visual class: " + s);
}

inline TargetClass target_class_from_string(const std::string& s) {
    if (s == "Silence") return TargetClass::Silence;
    if (s == "Speech") return TargetClass::Speech;
    if (s == "Singing") return TargetClass::Singing;
    if (s == "Others") return TargetClass::Others;
    throw DataError("unknown target class: " + s);
}

// The (audio, visual) -> target mapping. The canonical wiring treats the
// visual state as a mask over voice attribution: voice with a non-vocalizing
// anchor cannot be the anchor's and lands in Others. The table is data so a
// different wiring can be loaded from configuration.
struct RuleTable {
    std::array<std::array<TargetClass, kNumVisualClasses>, kNumAudioClasses> cells;

    static RuleTable canonical() {
        RuleTable t;
        auto set = [&t](AudioClass a, VisualClass v, TargetClass out) {
            t.cells[static_cast<int>(a)][static_cast<int>(v)] = out;
        };
        set(AudioClass::Silence, VisualClass::Vocalizing, TargetClass::Silence);
        set(AudioClass::Silence, VisualClass::NonVocalizing, TargetClass::Silence);
        set(AudioClass::Speech, VisualClass::Vocalizing, TargetClass::Speech);
        set(AudioClass::Speech, VisualClass::NonVocalizing, TargetClass::Others);
        set(AudioClass::Singing, VisualClass::Vocalizing, TargetClass::Singing);
        set(AudioClass::Singing, VisualClass::NonVocalizing, TargetClass::Others);
        set(AudioClass::Others, VisualClass::Vocalizing, TargetClass::Others);
        set(AudioClass::Others, VisualClass::NonVocalizing, TargetClass::Others);
        return t;
    }

    TargetClass apply(AudioClass a, VisualClass v) const {
        return cells[static_cast<int>(a)][static_cast<int>(v)];
    }
};

// Total on all 8 (audio, visual) pairs; pure.
inline TargetClass apply_rule(AudioClass a, VisualClass v,
                              const RuleTable& table = RuleTable::canonical()) {
    return table.apply(a, v);
}

// Per-frame annotations on all three label spaces, one shared frame grid.
struct FrameLabelTrack {
    double hop = 0.0;  // seconds between frames
    std::vector<AudioClass> audio;
    std::vector<VisualClass> visual;
    std::vector<TargetClass> target;

    std::size_t n_frames() const { return audio.size(); }

    void validate() const {
        if (audio.size() != visual.size() || audio.size() != target.size())
            throw DataError("label track: audio/visual/target lengths differ");
        if (hop <= 0.0) throw DataError("label track: hop must be positive");
    }
};

}  // namespace avvad
