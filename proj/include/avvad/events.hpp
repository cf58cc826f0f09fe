// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "avvad/error.hpp"
#include "avvad/labels.hpp"
#include "avvad/tensor.hpp"

namespace avvad {

// One detected or annotated interval. Silence never appears as an event.
struct Event {
    double onset_s = 0.0;
    double offset_s = 0.0;
    TargetClass cls = TargetClass::Others;
};

using EventList = std::vector<Event>;

inline void validate(const EventList& events) {
    for (const auto& e : events) {
        if (e.onset_s >= e.offset_s) throw DataError("event list: onset must precede offset");
        if (e.cls == TargetClass::Silence)
            throw DataError("event list: Silence is implicit, not an event");
    }
    for (std::size_t i = 1; i < events.size(); ++i)
        if (events[i].onset_s < events[i - 1].onset_s)
            throw DataError("event list: events must be sorted by onset");
}

inline void sort_events(EventList& events) {
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
        return static_cast<int>(a.cls) < static_cast<int>(b.cls);
    });
}

struct DecodeConfig {
    double threshold = 0.5;
    int median_len = 5;   // frames, odd
    double min_dur_s = 0.12;
};

namespace event_detail {

// Majority filter on a bit string, window centered, edges replicate.
inline std::vector<std::uint8_t> median_filter_bits(const std::vector<std::uint8_t>& bits,
                                                    int window) {
    if (window <= 1 || bits.empty()) return bits;
    if (window % 2 == 0) throw UsageError("median filter length must be odd");
    const long n = static_cast<long>(bits.size());
    const int half = window / 2;
    std::vector<std::uint8_t> out(bits.size());
    for (long i = 0; i < n; ++i) {
        int ones = 0;
        for (int k = -half; k <= half; ++k) {
            const long j = std::clamp(i + k, 0L, n - 1);
            ones += bits[j];
        }
        out[i] = ones * 2 > window ? 1 : 0;
    }
    return out;
}

}  // namespace event_detail

// Decodes one class's frame probabilities: threshold, median filter, merge
// runs, drop events shorter than min_dur.
inline EventList decode_track(const std::vector<double>& probs, TargetClass cls, double hop,
                              const DecodeConfig& cfg) {
    for (double p : probs)
        if (p < 0.0 || p > 1.0) throw UsageError("decode: probabilities must be in [0, 1]");
    std::vector<std::uint8_t> bits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) bits[i] = probs[i] >= cfg.threshold ? 1 : 0;
    bits = event_detail::median_filter_bits(bits, cfg.median_len);

    EventList events;
    const long n = static_cast<long>(bits.size());
    long i = 0;
    while (i < n) {
        if (!bits[i]) {
            ++i;
            continue;
        }
        long j = i;
        while (j < n && bits[j]) ++j;
        const double onset = i * hop;
        const double offset = j * hop;
        if (offset - onset >= cfg.min_dur_s - 1e-12)
            events.push_back({onset, offset, cls});
        i = j;
    }
    return events;
}

// Multi-class tracks [T, C] in target-class order; Silence (column 0) is
// implicit and never decoded.
inline EventList probs_to_events(const Tensor& tracks, double hop, const DecodeConfig& cfg) {
    if (tracks.shape.size() != 2 || tracks.dim(1) != kNumTargetClasses)
        throw UsageError("probs_to_events: expected [T, 4] target-class tracks");
    if (hop <= 0.0) throw UsageError("probs_to_events: hop must be positive");
    EventList all;
    const long T = tracks.dim(0);
    for (int c = 1; c < kNumTargetClasses; ++c) {
        std::vector<double> track(T);
        for (long t = 0; t < T; ++t) track[t] = tracks.ptr()[t * kNumTargetClasses + c];
        EventList events = decode_track(track, static_cast<TargetClass>(c), hop, cfg);
        all.insert(all.end(), events.begin(), events.end());
    }
    sort_events(all);
    return all;
}

// Ground-truth events from a label track: merged runs of each non-Silence
// target class.
inline EventList label_track_to_events(const FrameLabelTrack& labels) {
    labels.validate();
    EventList events;
    const long n = static_cast<long>(labels.n_frames());
    long i = 0;
    while (i < n) {
        const TargetClass cls = labels.target[i];
        long j = i;
        while (j < n && labels.target[j] == cls) ++j;
        if (cls != TargetClass::Silence)
            events.push_back({i * labels.hop, j * labels.hop, cls});
        i = j;
    }
    sort_events(events);
    return events;
}

// CSV serialization: "onset_s,offset_s,class" with a header line.
inline std::string events_to_csv(const EventList& events) {
    std::ostringstream out;
    out.precision(9);
    out << "onset_s,offset_s,class\n";
    for (const auto& e : events)
        out << e.onset_s << ',' << e.offset_s << ',' << to_string(e.cls) << '\n';
    return out.str();
}

inline EventList events_from_csv(const std::string& text, const std::string& ctx) {
    EventList events;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first && line.rfind("onset_s", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        std::istringstream row(line);
        std::string onset, offset, cls;
        if (!std::getline(row, onset, ',') || !std::getline(row, offset, ',') ||
            !std::getline(row, cls))
            throw DataError("bad event row in " + ctx + ": " + line);
        try {
            events.push_back({std::stod(onset), std::stod(offset), target_class_from_string(cls)});
        } catch (const std::invalid_argument&) {
            throw DataError("bad event row in " + ctx + ": " + line);
        }
    }
    sort_events(events);
    validate(events);
    return events;
}

inline void write_events_csv(const std::string& path, const EventList& events) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << events_to_csv(events);
}

inline EventList read_events_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return events_from_csv(text, path);
}

}  // namespace avvad
