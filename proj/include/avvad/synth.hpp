// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "avvad/error.hpp"
#include "avvad/features.hpp"
#include "avvad/labels.hpp"
#include "avvad/rng.hpp"
#include "avvad/tensor.hpp"
#include "avvad/wav.hpp"

namespace avvad {

// Sound sources a scenario can schedule. Anchor sources drive the rendered
// face; background voice is acoustically the same family of proxies so the
// audio branch alone cannot attribute it.
enum class SourceKind : int {
    AnchorSpeech = 0,
    AnchorSinging,
    BackgroundSpeech,
    BackgroundSinging,
    Music,
    Noise,
    AnchorNonverbal,
};

inline const char* to_string(SourceKind k) {
    switch (k) {
        case SourceKind::AnchorSpeech: return "anchor-speech";
        case SourceKind::AnchorSinging: return "anchor-singing";
        case SourceKind::BackgroundSpeech: return "background-speech";
        case SourceKind::BackgroundSinging: return "background-singing";
        case SourceKind::Music: return "music";
        case SourceKind::Noise: return "noise";
        case SourceKind::AnchorNonverbal: return "anchor-nonverbal";
    }
    return "?";
}

inline SourceKind source_kind_from_string(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(SourceKind::AnchorNonverbal); ++i)
        if (s == to_string(static_cast<SourceKind>(i))) return static_cast<SourceKind>(i);
    throw DataError("unknown source kind: " + s);
}

inline AudioClass audio_class_of(SourceKind k) {
    switch (k) {
        case SourceKind::AnchorSpeech:
        case SourceKind::BackgroundSpeech: return AudioClass::Speech;
        case SourceKind::AnchorSinging:
        case SourceKind::BackgroundSinging: return AudioClass::Singing;
        default: return AudioClass::Others;
    }
}

inline bool is_anchor_voice(SourceKind k) {
    return k == SourceKind::AnchorSpeech || k == SourceKind::AnchorSinging;
}

struct ScenarioEvent {
    double onset_s = 0.0;
    double offset_s = 0.0;
    SourceKind source = SourceKind::Noise;
};

struct ClipSpec {
    double duration_s = 6.0;
    std::vector<ScenarioEvent> events;
    std::uint64_t seed = 0;
    // Fraction of non-vocalizing time with silent mouth motion (chewing,
    // smiling, mouthing along); keeps the visual cue from being a clean
    // open/closed bit.
    double mouth_noise_density = 0.08;
    // Fraction of vocalizing time where the mouth is briefly occluded or
    // closed while the voice carries on. Labels stay Vocalizing: the frames
    // are visually misleading on purpose.
    double visual_dropout_density = 0.22;
};

inline void validate(const ClipSpec& spec) {
    if (spec.duration_s <= 0.0) throw DataError("clip spec: duration must be positive");
    for (const auto& e : spec.events) {
        if (e.onset_s < 0.0 || e.offset_s > spec.duration_s + 1e-9 || e.onset_s >= e.offset_s)
            throw DataError("clip spec: event span outside [0, duration]");
    }
    // A single anchor cannot speak and sing at once.
    for (std::size_t i = 0; i < spec.events.size(); ++i) {
        for (std::size_t j = i + 1; j < spec.events.size(); ++j) {
            const auto& a = spec.events[i];
            const auto& b = spec.events[j];
            if (!is_anchor_voice(a.source) || !is_anchor_voice(b.source)) continue;
            if (a.source == b.source) continue;
            if (a.onset_s < b.offset_s && b.onset_s < a.offset_s)
                throw DataError("clip spec: anchor-speech and anchor-singing spans overlap");
        }
    }
}

struct VideoConfig {
    double fps = 25.0;
    int image_size = 64;
};

struct SynthClip {
    ClipSpec spec;
    Waveform audio;
    ImageSequence faces;
    FrameLabelTrack labels;
};

namespace synth_detail {

// Two-pole resonator bank over white noise; the speech proxy.
class Resonator {
  public:
    Resonator(double center_hz, double radius, int sample_rate)
        : b1_(2.0 * radius * std::cos(2.0 * 3.14159265358979323846 * center_hz / sample_rate)),
          b2_(-radius * radius) {}

    double step(double x) {
        const double y = x + b1_ * y1_ + b2_ * y2_;
        y2_ = y1_;
        y1_ = y;
        return y;
    }

  private:
    double b1_, b2_;
    double y1_ = 0.0, y2_ = 0.0;
};

inline void normalize_rms(std::vector<double>& buf, double target_rms) {
    double sum = 0.0;
    for (double v : buf) sum += v * v;
    const double rms = std::sqrt(sum / std::max<std::size_t>(buf.size(), 1));
    if (rms < 1e-12) return;
    const double g = target_rms / rms;
    for (double& v : buf) v *= g;
}

// Raised-cosine fade at both edges so event boundaries do not click.
inline void apply_fades(std::vector<double>& buf, int fade_samples) {
    const int n = static_cast<int>(buf.size());
    const int f = std::min(fade_samples, n / 2);
    constexpr double kPi = 3.14159265358979323846;
    for (int i = 0; i < f; ++i) {
        const double g = 0.5 - 0.5 * std::cos(kPi * i / f);
        buf[i] *= g;
        buf[n - 1 - i] *= g;
    }
}

// Timbre of one talker/singer. A clip's anchor keeps one profile across all
// of their events, the way one person sounds like themselves; background
// voices draw a fresh profile per event.
struct VoiceProfile {
    double formant_low_hz;
    double formant_high_hz;
    double syllable_hz;
    double sing_base_hz;
    double vib_hz;
    double vib_depth;
    double note_len;

    static VoiceProfile sample(Rng& rng) {
        VoiceProfile p;
        p.formant_low_hz = rng.uniform(350.0, 750.0);
        p.formant_high_hz = rng.uniform(1300.0, 2400.0);
        p.syllable_hz = rng.uniform(2.8, 4.2);
        p.sing_base_hz = rng.uniform(180.0, 380.0);
        p.vib_hz = rng.uniform(4.8, 6.2);
        p.vib_depth = rng.uniform(0.015, 0.03);
        p.note_len = rng.uniform(0.45, 0.8);
        return p;
    }
};

inline std::vector<double> render_speech(Rng& rng, int n, int sr, const VoiceProfile& voice) {
    std::vector<double> buf(n);
    Resonator low(voice.formant_low_hz, 0.965, sr);
    Resonator high(voice.formant_high_hz, 0.955, sr);
    const double phase = rng.uniform(0.0, 1.0);
    constexpr double kTau = 2.0 * 3.14159265358979323846;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double syll = std::sin(kTau * (voice.syllable_hz * t + phase));
        // Half-wave envelope with hashed syllable drops imitates word gaps.
        double env = std::max(0.0, syll);
        const long syll_idx = static_cast<long>(voice.syllable_hz * t + phase);
        if (mix_seed(static_cast<std::uint64_t>(syll_idx), 77) % 8 == 0) env *= 0.1;
        const double x = rng.normal();
        buf[i] = env * (low.step(x) + 0.6 * high.step(x));
    }
    normalize_rms(buf, 0.22 * rng.uniform(0.7, 1.25));
    return buf;
}

inline std::vector<double> render_singing(Rng& rng, int n, int sr, const VoiceProfile& voice) {
    std::vector<double> buf(n);
    const double base_hz = voice.sing_base_hz;
    const double vib_hz = voice.vib_hz;
    const double vib_depth = voice.vib_depth;
    const double vib_phase = rng.uniform(0.0, 1.0);
    const double note_len = voice.note_len;
    static const int kScale[6] = {0, 2, 4, 7, 9, 12};
    constexpr double kTau = 2.0 * 3.14159265358979323846;

    double phase = 0.0;
    int note = -1;
    double note_hz = base_hz;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const int cur = static_cast<int>(t / note_len);
        if (cur != note) {
            note = cur;
            const int step = kScale[rng.uniform_int(0, 5)];
            note_hz = base_hz * std::pow(2.0, step / 12.0);
        }
        const double f = note_hz * (1.0 + vib_depth * std::sin(kTau * (vib_hz * t + vib_phase)));
        phase += kTau * f / sr;
        // Attack envelope restarts on each note.
        const double into_note = t - note * note_len;
        const double env = std::min(1.0, into_note / 0.06);
        double s = 0.0;
        for (int h = 1; h <= 6; ++h) s += std::sin(phase * h) / std::pow(h, 1.2);
        buf[i] = env * s;
    }
    normalize_rms(buf, 0.22 * rng.uniform(0.7, 1.25));
    return buf;
}

inline std::vector<double> render_music(Rng& rng, int n, int sr) {
    std::vector<double> buf(n);
    const double root_hz = rng.uniform(110.0, 200.0);
    const bool minor = rng.bernoulli(0.5);
    const double third = root_hz * std::pow(2.0, (minor ? 3 : 4) / 12.0);
    const double fifth = root_hz * std::pow(2.0, 7.0 / 12.0);
    const double phase = rng.uniform(0.0, 1.0);
    Resonator perc_band(rng.uniform(2500.0, 4500.0), 0.92, sr);
    constexpr double kTau = 2.0 * 3.14159265358979323846;

    // Lead line: a vibrato harmonic voice an octave up, the instrumental
    // counterpart of singing. It keeps the singing/music decision genuinely
    // ambiguous at the frame level.
    const double lead_gain = rng.uniform(0.3, 0.6);
    const double lead_vib_hz = rng.uniform(4.5, 6.5);
    const double lead_note_len = rng.uniform(0.35, 0.7);
    static const int kLeadScale[5] = {0, 3, 7, 10, 12};
    double lead_phase = 0.0;
    int lead_note = -1;
    double lead_hz = 2.0 * root_hz;

    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double tl = std::fmod(t, 2.0);  // two-second loop
        double pad = 0.0;
        for (double f : {root_hz, third, fifth, 2.0 * root_hz})
            pad += std::sin(kTau * (f * t + phase));
        pad *= 0.25 * (0.7 + 0.3 * std::sin(kTau * 0.5 * tl));

        const int cur = static_cast<int>(t / lead_note_len);
        if (cur != lead_note) {
            lead_note = cur;
            lead_hz = 2.0 * root_hz * std::pow(2.0, kLeadScale[rng.uniform_int(0, 4)] / 12.0);
        }
        const double f_lead =
            lead_hz * (1.0 + 0.02 * std::sin(kTau * (lead_vib_hz * t + phase)));
        lead_phase += kTau * f_lead / sr;
        double lead = 0.0;
        for (int h = 1; h <= 5; ++h) lead += std::sin(lead_phase * h) / std::pow(h, 1.3);

        // Percussive tick every quarter beat.
        const double since_tick = std::fmod(tl, 0.25);
        double perc = 0.0;
        if (since_tick < 0.04) perc = perc_band.step(rng.normal()) * std::exp(-since_tick / 0.01);
        else perc_band.step(rng.normal() * 0.0);
        buf[i] = pad + lead_gain * 0.55 * lead + 1.4 * perc;
    }
    normalize_rms(buf, 0.19 * rng.uniform(0.75, 1.25));
    return buf;
}

inline std::vector<double> render_noise(Rng& rng, int n, int /*sr*/) {
    std::vector<double> buf(n);
    double lp = 0.0;
    for (int i = 0; i < n; ++i) {
        lp = 0.95 * lp + 0.05 * rng.normal();
        buf[i] = lp + 0.25 * rng.normal();
    }
    normalize_rms(buf, 0.12 * rng.uniform(0.8, 1.25));
    return buf;
}

inline std::vector<double> render_nonverbal(Rng& rng, int n, int sr) {
    std::vector<double> buf(n);
    Resonator band(rng.uniform(700.0, 1800.0), 0.94, sr);
    const double pulse_hz = rng.uniform(6.5, 9.0);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double in_pulse = std::fmod(t * pulse_hz, 1.0);
        const double env = in_pulse < 0.45 ? std::exp(-in_pulse / 0.12) : 0.0;
        buf[i] = env * band.step(rng.normal());
    }
    normalize_rms(buf, 0.2 * rng.uniform(0.85, 1.2));
    return buf;
}

inline std::vector<double> render_source(SourceKind kind, Rng& rng, int n, int sr,
                                         const VoiceProfile& anchor_voice) {
    switch (kind) {
        case SourceKind::AnchorSpeech: return render_speech(rng, n, sr, anchor_voice);
        case SourceKind::BackgroundSpeech:
            return render_speech(rng, n, sr, VoiceProfile::sample(rng));
        case SourceKind::AnchorSinging: return render_singing(rng, n, sr, anchor_voice);
        case SourceKind::BackgroundSinging:
            return render_singing(rng, n, sr, VoiceProfile::sample(rng));
        case SourceKind::Music: return render_music(rng, n, sr);
        case SourceKind::Noise: return render_noise(rng, n, sr);
        case SourceKind::AnchorNonverbal: return render_nonverbal(rng, n, sr);
    }
    throw DataError("unknown source kind");
}

inline void fill_disc(ImageSequence& seq, int f, int cx, int cy, int r, std::uint8_t value) {
    for (int y = std::max(0, cy - r); y <= std::min(seq.height - 1, cy + r); ++y)
        for (int x = std::max(0, cx - r); x <= std::min(seq.width - 1, cx + r); ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) seq.at(f, y, x) = value;
}

inline void fill_ellipse(ImageSequence& seq, int f, int cx, int cy, int rx, int ry,
                         std::uint8_t value) {
    if (rx <= 0 || ry <= 0) return;
    for (int y = std::max(0, cy - ry); y <= std::min(seq.height - 1, cy + ry); ++y)
        for (int x = std::max(0, cx - rx); x <= std::min(seq.width - 1, cx + rx); ++x) {
            const double dx = static_cast<double>(x - cx) / rx;
            const double dy = static_cast<double>(y - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) seq.at(f, y, x) = value;
        }
}

}  // namespace synth_detail

// True when any anchor voice span covers time t.
inline bool anchor_vocalizing_at(const ClipSpec& spec, double t) {
    for (const auto& e : spec.events)
        if (is_anchor_voice(e.source) && t >= e.onset_s && t < e.offset_s) return true;
    return false;
}

inline AudioClass audio_class_at(const ClipSpec& spec, double t) {
    // Priority when sources overlap: Singing > Speech > Others > Silence.
    bool speech = false, others = false;
    for (const auto& e : spec.events) {
        if (t < e.onset_s || t >= e.offset_s) continue;
        const AudioClass c = audio_class_of(e.source);
        if (c == AudioClass::Singing) return AudioClass::Singing;
        speech |= c == AudioClass::Speech;
        others |= c == AudioClass::Others;
    }
    if (speech) return AudioClass::Speech;
    if (others) return AudioClass::Others;
    return AudioClass::Silence;
}

// Renders the deterministic audio mix, face glyph frames and exact labels for
// one scenario. Equal specs give bit-identical outputs.
inline SynthClip synth_clip(const ClipSpec& spec, const FrontendConfig& fe = {},
                            const VideoConfig& video = {},
                            const RuleTable& rule = RuleTable::canonical()) {
    validate(spec);
    using namespace synth_detail;

    const int sr = fe.sample_rate;
    const int n = static_cast<int>(std::lround(spec.duration_s * sr));
    SynthClip clip;
    clip.spec = spec;
    clip.audio.sample_rate = sr;
    clip.audio.samples.assign(n, 0.0);

    // Ambient floor keeps true silence finite and non-degenerate.
    {
        Rng rng(mix_seed(spec.seed, 0xA0B1));
        for (int i = 0; i < n; ++i) clip.audio.samples[i] = 0.004 * rng.normal();
    }

    // One voice per clip for the anchor; background talkers vary per event.
    VoiceProfile anchor_voice;
    {
        Rng rng(mix_seed(spec.seed, 0xA11C));
        anchor_voice = VoiceProfile::sample(rng);
    }

    for (std::size_t idx = 0; idx < spec.events.size(); ++idx) {
        const auto& e = spec.events[idx];
        const int start = static_cast<int>(std::lround(e.onset_s * sr));
        const int stop = std::min(n, static_cast<int>(std::lround(e.offset_s * sr)));
        if (stop <= start) continue;
        Rng rng(mix_seed(spec.seed, 0xE000 + static_cast<std::uint64_t>(idx) * 7 +
                                        static_cast<std::uint64_t>(e.source)));
        auto buf = render_source(e.source, rng, stop - start, sr, anchor_voice);
        apply_fades(buf, sr / 100);
        for (int i = start; i < stop; ++i) clip.audio.samples[i] += buf[i - start];
    }

    double peak = 0.0;
    for (double s : clip.audio.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.98) {
        const double g = 0.98 / peak;
        for (double& s : clip.audio.samples) s *= g;
    }
    quantize_to_pcm16(clip.audio);

    // Face glyphs. The mouth aperture parameter carries the vocal state; head
    // bob, blink and pixel noise keep the visual task from degenerating into
    // a one-pixel probe.
    const int n_video = static_cast<int>(std::lround(spec.duration_s * video.fps));
    const int size = video.image_size;
    clip.faces = ImageSequence(n_video, size, size);
    {
        Rng rng(mix_seed(spec.seed, 0xFACE));
        // Per-clip appearance: anchors differ in build, lighting and how
        // much the camera moves.
        const int face_r = size * static_cast<int>(rng.uniform_int(23, 27)) / 64;
        const int eye_dx = size * static_cast<int>(rng.uniform_int(8, 10)) / 64;
        const int eye_dy = size * static_cast<int>(rng.uniform_int(7, 9)) / 64;
        const int mouth_dy = size * static_cast<int>(rng.uniform_int(11, 13)) / 64;
        const std::uint8_t face_tone = static_cast<std::uint8_t>(rng.uniform_int(178, 205));
        const std::uint8_t bg_tone = static_cast<std::uint8_t>(rng.uniform_int(10, 20));
        const std::uint8_t mouth_tone = static_cast<std::uint8_t>(rng.uniform_int(20, 32));
        const double bob_amp = rng.uniform(1.4, 2.6);
        const int pixel_noise = static_cast<int>(rng.uniform_int(4, 7));
        const double bob_phase = rng.uniform(0.0, 1.0);
        const double syll_hz = rng.uniform(2.6, 3.8);
        const double syll_phase = rng.uniform(0.0, 1.0);
        const double blink_period = rng.uniform(2.2, 3.4);
        const double blink_phase = rng.uniform(0.0, blink_period);
        constexpr double kTau = 2.0 * 3.14159265358979323846;
        for (int f = 0; f < n_video; ++f) {
            const double t = (f + 0.5) / video.fps;
            const int cx = size / 2 + static_cast<int>(std::lround(bob_amp * std::sin(kTau * (0.31 * t + bob_phase))));
            const int cy = size / 2 + 1 + static_cast<int>(std::lround(bob_amp * std::sin(kTau * (0.23 * t + 0.37 + bob_phase))));

            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    clip.faces.at(f, y, x) = bg_tone;
            fill_disc(clip.faces, f, cx, cy, face_r, face_tone);

            const bool blink = std::fmod(t + blink_phase, blink_period) < 0.12;
            if (blink) {
                fill_ellipse(clip.faces, f, cx - eye_dx, cy - eye_dy, 3, 1, 40);
                fill_ellipse(clip.faces, f, cx + eye_dx, cy - eye_dy, 3, 1, 40);
            } else {
                fill_disc(clip.faces, f, cx - eye_dx, cy - eye_dy, 3, 30);
                fill_disc(clip.faces, f, cx + eye_dx, cy - eye_dy, 3, 30);
            }

            double aperture;
            if (anchor_vocalizing_at(spec, t)) {
                const long slot = static_cast<long>(t / 0.4);
                const bool dropped =
                    (mix_seed(spec.seed, 0xD90 + static_cast<std::uint64_t>(slot)) % 1000) <
                    static_cast<std::uint64_t>(spec.visual_dropout_density * 1000);
                if (dropped) {
                    aperture = std::abs(rng.uniform(-0.06, 0.06));
                } else {
                    // Deep dips toward closed at syllable boundaries, as real
                    // articulation has; single video frames stay ambiguous.
                    const double cycle = std::abs(std::sin(kTau * (syll_hz * t + syll_phase)));
                    aperture = 0.10 + 0.85 * cycle;
                    aperture += rng.uniform(-0.08, 0.08);
                }
            } else {
                const long slot = static_cast<long>(t / 0.6);
                const bool moving =
                    (mix_seed(spec.seed, 0xB0CA + static_cast<std::uint64_t>(slot)) % 1000) <
                    static_cast<std::uint64_t>(spec.mouth_noise_density * 1000);
                if (moving)
                    aperture = 0.15 + 0.4 * std::abs(std::sin(kTau * (1.7 * t + syll_phase))) +
                               rng.uniform(-0.06, 0.06);
                else
                    aperture = std::abs(rng.uniform(-0.06, 0.06));
            }
            aperture = std::clamp(aperture, 0.0, 1.0);
            const int mouth_ry = 1 + static_cast<int>(std::lround(aperture * (size * 7 / 64)));
            fill_ellipse(clip.faces, f, cx, cy + mouth_dy, size * 8 / 64, mouth_ry, mouth_tone);

            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const int noise = static_cast<int>(rng.uniform_int(-pixel_noise, pixel_noise));
                    const int v = clip.faces.at(f, y, x) + noise;
                    clip.faces.at(f, y, x) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
                }
        }
    }

    // Exact labels on the feature frame grid; target is the rule applied
    // frame-wise, by construction.
    const int win = dsp::window_samples(fe.window_s, sr);
    const int hop = dsp::hop_samples(win, fe.overlap);
    const long n_frames = dsp::frame_count(n, win, hop);
    clip.labels.hop = static_cast<double>(hop) / sr;
    clip.labels.audio.resize(n_frames);
    clip.labels.visual.resize(n_frames);
    clip.labels.target.resize(n_frames);
    for (long i = 0; i < n_frames; ++i) {
        const double t = (i * hop + win / 2) / static_cast<double>(sr);
        clip.labels.audio[i] = audio_class_at(spec, t);
        clip.labels.visual[i] = anchor_vocalizing_at(spec, t) ? VisualClass::Vocalizing
                                                              : VisualClass::NonVocalizing;
        clip.labels.target[i] = apply_rule(clip.labels.audio[i], clip.labels.visual[i], rule);
    }
    return clip;
}

// Knobs for random scenario sampling. Densities are target fractions of clip
// time covered by each source family.
struct ScenarioConfig {
    double duration_s = 6.0;
    double anchor_voice_density = 0.45;
    double background_voice_density = 0.35;
    double music_density = 0.55;
    double noise_density = 0.2;
    double nonverbal_density = 0.08;
    double singing_fraction = 0.5;  // of voiced spans, anchor and background alike
    double min_event_s = 0.6;
    double max_event_s = 2.2;
    double mouth_noise_density = 0.08;
    double visual_dropout_density = 0.22;
};

inline ClipSpec sample_clip_spec(const ScenarioConfig& cfg, std::uint64_t seed) {
    ClipSpec spec;
    spec.duration_s = cfg.duration_s;
    spec.seed = seed;
    spec.mouth_noise_density = cfg.mouth_noise_density;
    spec.visual_dropout_density = cfg.visual_dropout_density;
    Rng rng(mix_seed(seed, 0x5CEA));

    // Union coverage of a set of source kinds, so densities mean actual
    // fractions of clip time rather than summed event lengths.
    auto coverage = [&spec](auto&& pred) {
        std::vector<std::pair<double, double>> spans;
        for (const auto& e : spec.events)
            if (pred(e.source)) spans.push_back({e.onset_s, e.offset_s});
        std::sort(spans.begin(), spans.end());
        double total = 0.0, cursor = 0.0;
        for (const auto& [on, off] : spans) {
            const double start = std::max(on, cursor);
            if (off > start) total += off - start;
            cursor = std::max(cursor, off);
        }
        return total;
    };

    auto place = [&](SourceKind kind, double density, auto&& family) {
        int attempts = 0;
        while (coverage(family) < density * cfg.duration_s && attempts < 128) {
            ++attempts;
            const double len =
                std::min(rng.uniform(cfg.min_event_s, cfg.max_event_s), cfg.duration_s);
            const double onset = rng.uniform(0.0, cfg.duration_s - len);
            ScenarioEvent ev{onset, onset + len, kind};
            if (is_anchor_voice(kind)) {
                bool clash = false;
                for (const auto& other : spec.events) {
                    if (!is_anchor_voice(other.source)) continue;
                    if (ev.onset_s < other.offset_s + 0.1 && other.onset_s < ev.offset_s + 0.1)
                        clash = true;
                }
                if (clash) continue;
            }
            spec.events.push_back(ev);
        }
    };

    auto one = [](SourceKind k) { return [k](SourceKind s) { return s == k; }; };
    auto voiced = [&](bool anchor, double density) {
        const SourceKind sing = anchor ? SourceKind::AnchorSinging : SourceKind::BackgroundSinging;
        const SourceKind speech = anchor ? SourceKind::AnchorSpeech : SourceKind::BackgroundSpeech;
        place(sing, density * cfg.singing_fraction, one(sing));
        // The speech share tops the family up to the full voiced density.
        place(speech, density, [sing, speech](SourceKind s) { return s == sing || s == speech; });
    };
    voiced(true, cfg.anchor_voice_density);
    voiced(false, cfg.background_voice_density);
    place(SourceKind::Music, cfg.music_density, one(SourceKind::Music));
    place(SourceKind::Noise, cfg.noise_density, one(SourceKind::Noise));
    place(SourceKind::AnchorNonverbal, cfg.nonverbal_density, one(SourceKind::AnchorNonverbal));

    validate(spec);
    return spec;
}

}  // namespace avvad
