#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "qpnet/track.hpp"

namespace qpnet {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 0;

    std::size_t size() const { return samples.size(); }
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
    void validate() const;
};

// ---- 8-bit mu-law (mu = 255, 256 uniform bins over the companded domain) ----

inline constexpr int kMuLawClasses = 256;

// Throws std::domain_error for |x| > 1 or NaN.
int mulaw_encode(double x);
// Bin-centre inverse. Throws std::domain_error for codes outside [0, 255].
double mulaw_decode(int code);

std::vector<int> mulaw_encode(const std::vector<double>& x);
std::vector<double> mulaw_decode(const std::vector<int>& codes);

// Amplitude interval [lo, hi] that encodes to `code`.
std::pair<double, double> mulaw_bin_edges(int code);

// ---- WAV (RIFF, PCM16, mono, little endian) ----

std::vector<std::uint8_t> wav_bytes(const Waveform& w);
Waveform parse_wav(const std::vector<std::uint8_t>& bytes);
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

// ---- Synthetic quasi-periodic corpus ----

// One piece of the F0 contour. Its length is weight / sum(weights) of the
// utterance; F0 moves linearly in log-frequency from f0_start to f0_end.
struct F0Segment {
    double weight = 1.0;
    double f0_start = 200.0;
    double f0_end = 200.0;
    bool voiced = true;
};

struct SynthSpec {
    double duration = 1.0;  // seconds
    int sample_rate = 16000;
    int frame_hop = 80;
    std::vector<F0Segment> segments;
    int harmonic_count = 20;
    double spectral_tilt = 6.0;  // dB per octave
    double noise_level = 0.0;    // relative to the unit-RMS voiced source
    std::uint64_t seed = 0;

    void validate() const;
    // Analytic contour at time `t` seconds: {f0, voiced}.
    std::pair<double, bool> contour_at(double t) const;
};

struct SynthResult {
    Waveform wave;
    FrameTrack truth;  // f0/voicing only; mcep left empty
};

// Deterministic in `spec` (including the seed). Peak-normalised to 0.8.
SynthResult synth_utterance(const SynthSpec& spec);

// Random contours for a training corpus: voiced glides with endpoints drawn
// log-uniformly from [f0_low, f0_high], separated by short unvoiced pieces.
struct CorpusParams {
    double duration = 1.0;
    int sample_rate = 16000;
    int frame_hop = 80;
    double f0_low = 150.0;
    double f0_high = 250.0;
    int voiced_segments = 3;
    double unvoiced_weight = 0.15;  // per gap, relative to a voiced piece
    int harmonic_count = 20;
    double spectral_tilt = 6.0;
    double noise_level = 0.0;

    void validate() const;
    friend bool operator==(const CorpusParams&, const CorpusParams&) = default;
};

SynthSpec random_synth_spec(const CorpusParams& p, std::uint64_t seed);

}  // namespace qpnet
