// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "avvad/error.hpp"
#include "avvad/events.hpp"
#include "avvad/labels.hpp"

namespace avvad {

// Event- or segment-based scores. Percentages follow the convention of the
// sound event detection literature; ER is a plain ratio.
struct MetricReport {
    double er = 0.0;
    bool er_defined = true;
    std::string note;
    double precision_pct = 0.0;
    double recall_pct = 0.0;
    double f_pct = 0.0;
    long tp = 0, fp = 0, fn = 0;
    long substitutions = 0, deletions = 0, insertions = 0;
    long n_ref = 0, n_hyp = 0;
};

inline double f_score_pct(double precision_pct, double recall_pct) {
    const double s = precision_pct + recall_pct;
    return s > 0.0 ? 2.0 * precision_pct * recall_pct / s : 0.0;
}

namespace metric_detail {

// Greedy one-to-one onset matching within the collar; with both sides sorted
// by onset every feasible neighborhood is an interval, so taking the earliest
// unmatched candidate is a maximum matching.
inline long greedy_onset_match(const std::vector<double>& ref_onsets,
                               const std::vector<double>& hyp_onsets, double collar,
                               std::vector<char>* hyp_used_out = nullptr) {
    std::vector<char> used(hyp_onsets.size(), 0);
    long matched = 0;
    std::size_t cursor = 0;
    for (const double r : ref_onsets) {
        while (cursor < hyp_onsets.size() &&
               (used[cursor] || hyp_onsets[cursor] < r - collar))
            ++cursor;
        std::size_t j = cursor;
        while (j < hyp_onsets.size() && hyp_onsets[j] <= r + collar) {
            if (!used[j]) {
                used[j] = 1;
                ++matched;
                break;
            }
            ++j;
        }
    }
    if (hyp_used_out != nullptr) *hyp_used_out = std::move(used);
    return matched;
}

}  // namespace metric_detail

// Event-based scoring: a hypothesis event is correct when its class matches
// and its onset lies within the collar of an unmatched reference onset.
// Leftover refs and hyps that align in time but not class count as
// substitutions; ER = (S + D + I) / N over N reference events.
inline MetricReport event_based_metrics(EventList ref, EventList hyp,
                                        double onset_collar_s = 0.2) {
    sort_events(ref);
    sort_events(hyp);
    validate(ref);
    validate(hyp);
    if (onset_collar_s < 0.0) throw UsageError("event metrics: collar must be non-negative");

    MetricReport rep;
    rep.n_ref = static_cast<long>(ref.size());
    rep.n_hyp = static_cast<long>(hyp.size());

    std::vector<char> ref_matched(ref.size(), 0), hyp_matched(hyp.size(), 0);
    for (int c = 1; c < kNumTargetClasses; ++c) {
        std::vector<double> r_on, h_on;
        std::vector<std::size_t> r_idx, h_idx;
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (static_cast<int>(ref[i].cls) == c) {
                r_on.push_back(ref[i].onset_s);
                r_idx.push_back(i);
            }
        for (std::size_t i = 0; i < hyp.size(); ++i)
            if (static_cast<int>(hyp[i].cls) == c) {
                h_on.push_back(hyp[i].onset_s);
                h_idx.push_back(i);
            }
        std::vector<char> used(h_on.size(), 0);
        for (std::size_t ri = 0; ri < r_on.size(); ++ri) {
            for (std::size_t hi = 0; hi < h_on.size(); ++hi) {
                if (used[hi] || std::abs(h_on[hi] - r_on[ri]) > onset_collar_s) continue;
                used[hi] = 1;
                ref_matched[r_idx[ri]] = 1;
                hyp_matched[h_idx[hi]] = 1;
                ++rep.tp;
                break;
            }
        }
    }

    // Substitutions: unmatched pairs aligned in time regardless of class.
    std::vector<double> r_left, h_left;
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (!ref_matched[i]) r_left.push_back(ref[i].onset_s);
    for (std::size_t i = 0; i < hyp.size(); ++i)
        if (!hyp_matched[i]) h_left.push_back(hyp[i].onset_s);
    rep.substitutions = metric_detail::greedy_onset_match(r_left, h_left, onset_collar_s);

    rep.fn = rep.n_ref - rep.tp;
    rep.fp = rep.n_hyp - rep.tp;
    rep.deletions = static_cast<long>(r_left.size()) - rep.substitutions;
    rep.insertions = static_cast<long>(h_left.size()) - rep.substitutions;

    rep.precision_pct = rep.n_hyp > 0 ? 100.0 * rep.tp / rep.n_hyp : 0.0;
    rep.recall_pct = rep.n_ref > 0 ? 100.0 * rep.tp / rep.n_ref : 0.0;
    rep.f_pct = f_score_pct(rep.precision_pct, rep.recall_pct);
    if (rep.n_ref == 0) {
        rep.er_defined = false;
        rep.er = std::numeric_limits<double>::quiet_NaN();
        rep.note = "empty reference: error rate is undefined";
    } else {
        rep.er = static_cast<double>(rep.substitutions + rep.deletions + rep.insertions) /
                 static_cast<double>(rep.n_ref);
    }
    return rep;
}

// Segment-based scoring: activity is rasterized onto fixed-length segments;
// substitutions aggregate per segment as min(FN, FP).
inline MetricReport segment_based_metrics(EventList ref, EventList hyp, double duration_s,
                                          double segment_len_s = 1.0) {
    if (segment_len_s <= 0.0) throw UsageError("segment metrics: segment length must be positive");
    if (duration_s <= 0.0) throw UsageError("segment metrics: duration must be positive");
    sort_events(ref);
    sort_events(hyp);
    validate(ref);
    validate(hyp);

    const long n_seg = static_cast<long>(std::ceil(duration_s / segment_len_s));
    auto rasterize = [&](const EventList& events) {
        std::vector<std::vector<char>> grid(n_seg,
                                            std::vector<char>(kNumTargetClasses, 0));
        for (const auto& e : events) {
            const long first = std::clamp(static_cast<long>(std::floor(e.onset_s / segment_len_s)),
                                          0L, n_seg - 1);
            const long last = std::clamp(
                static_cast<long>(std::ceil(e.offset_s / segment_len_s)) - 1, 0L, n_seg - 1);
            for (long s = first; s <= last; ++s) grid[s][static_cast<int>(e.cls)] = 1;
        }
        return grid;
    };
    const auto ref_grid = rasterize(ref);
    const auto hyp_grid = rasterize(hyp);

    MetricReport rep;
    for (long s = 0; s < n_seg; ++s) {
        long seg_tp = 0, seg_fp = 0, seg_fn = 0;
        for (int c = 1; c < kNumTargetClasses; ++c) {
            const bool r = ref_grid[s][c], h = hyp_grid[s][c];
            if (r && h) ++seg_tp;
            if (!r && h) ++seg_fp;
            if (r && !h) ++seg_fn;
            if (r) ++rep.n_ref;
            if (h) ++rep.n_hyp;
        }
        rep.tp += seg_tp;
        rep.fp += seg_fp;
        rep.fn += seg_fn;
        rep.substitutions += std::min(seg_fn, seg_fp);
        rep.deletions += std::max(0L, seg_fn - seg_fp);
        rep.insertions += std::max(0L, seg_fp - seg_fn);
    }

    rep.precision_pct = (rep.tp + rep.fp) > 0 ? 100.0 * rep.tp / (rep.tp + rep.fp) : 0.0;
    rep.recall_pct = (rep.tp + rep.fn) > 0 ? 100.0 * rep.tp / (rep.tp + rep.fn) : 0.0;
    rep.f_pct = f_score_pct(rep.precision_pct, rep.recall_pct);
    if (rep.n_ref == 0) {
        rep.er_defined = false;
        rep.er = std::numeric_limits<double>::quiet_NaN();
        rep.note = "empty reference: error rate is undefined";
    } else {
        rep.er = static_cast<double>(rep.substitutions + rep.deletions + rep.insertions) /
                 static_cast<double>(rep.n_ref);
    }
    return rep;
}

inline MetricReport segment_based_metrics(const FrameLabelTrack& ref, const EventList& hyp,
                                          double segment_len_s = 1.0) {
    return segment_based_metrics(label_track_to_events(ref), hyp,
                                 static_cast<double>(ref.n_frames()) * ref.hop, segment_len_s);
}

inline nlohmann::json report_to_json(const MetricReport& r) {
    nlohmann::json j;
    if (r.er_defined)
        j["error_rate"] = r.er;
    else
        j["error_rate"] = nullptr;
    if (!r.note.empty()) j["note"] = r.note;
    j["precision_pct"] = r.precision_pct;
    j["recall_pct"] = r.recall_pct;
    j["f_score_pct"] = r.f_pct;
    j["counts"] = {{"tp", r.tp},
                   {"fp", r.fp},
                   {"fn", r.fn},
                   {"substitutions", r.substitutions},
                   {"deletions", r.deletions},
                   {"insertions", r.insertions},
                   {"n_ref", r.n_ref},
                   {"n_hyp", r.n_hyp}};
    return j;
}

}  // namespace avvad
