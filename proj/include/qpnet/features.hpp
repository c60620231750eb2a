#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "qpnet/signal.hpp"
#include "qpnet/tensor.hpp"
#include "qpnet/track.hpp"

namespace qpnet {

struct F0Params {
    int frame_len = 800;  // samples; must cover two periods of f0_min
    int frame_hop = 80;
    double f0_min = 40.0;
    double f0_max = 800.0;
    double voicing_threshold = 0.45;

    // 50 ms window, 5 ms hop at the given rate.
    static F0Params defaults(int sample_rate);
    void validate(int sample_rate) const;
};

struct MelcepParams {
    int frame_len = 400;
    int frame_hop = 80;
    int n_mels = 24;
    int dim = 12;
    double log_floor = 1e-10;

    // 25 ms window, 5 ms hop at the given rate.
    static MelcepParams defaults(int sample_rate);
    void validate() const;
};

// Normalised-autocorrelation pitch tracker. Returns one frame per hop with
// f0/voicing filled in; mcep is left empty.
FrameTrack estimate_f0(const Waveform& w, const F0Params& p);

// Hann window -> power spectrum -> triangular mel bank -> log -> orthonormal
// DCT-II, keeping the first `dim` coefficients (c0 included). One row per frame.
Tensor<double> melcep_analyze(const Waveform& w, const MelcepParams& p);

// estimate_f0 plus melcep_analyze (and log frame energy) on a shared hop.
FrameTrack analyze(const Waveform& w, const F0Params& f0p, const MelcepParams& mcp);

// Gap-free F0 with the voicing flags kept alongside.
struct ContinuousF0 {
    int frame_hop = 0;
    int sample_rate = 0;
    std::vector<double> f0;
    std::vector<bool> voiced;
};

// Fills unvoiced gaps by linear interpolation of log-F0 between the flanking
// voiced frames and holds the edge values outward. Throws std::invalid_argument
// when no frame is voiced.
ContinuousF0 continuous_f0(const FrameTrack& t);

// Multiplies voiced F0 by `ratio`. Throws std::domain_error if any scaled F0
// reaches Nyquist or ratio <= 0.
FrameTrack scale_f0(const FrameTrack& t, double ratio);

// Hold upsampling: output row s is frames row floor(s / hop), the last row
// repeated when target_len is not a multiple of hop.
Tensor<double> upsample(const Tensor<double>& frames, int hop, std::size_t target_len);

// Per-sample conditioning: [ln continuous F0, U/V, mcep...], dimension 2 + D_mc.
using ConditioningMatrix = Tensor<double>;

// Frame-rate rows of the conditioning matrix.
Tensor<double> frame_features(const FrameTrack& t);
ConditioningMatrix build_conditioning(const FrameTrack& t, std::size_t n_samples);

inline constexpr std::size_t kLogF0Column = 0;
inline constexpr std::size_t kVoicedColumn = 1;
inline constexpr std::size_t kMcepColumn = 2;

// ---- QPF1 feature files ----
// "QPF1", u32 frames, u32 dim, u32 hop (little endian), then row-major f32.

struct FeatureFile {
    int frame_hop = 0;
    Tensor<float> values;
};

void write_qpf(const std::filesystem::path& path, const FeatureFile& f);
FeatureFile read_qpf(const std::filesystem::path& path);

// Track <-> feature file rows: [f0 (0 when unvoiced), U/V, mcep...].
FeatureFile to_feature_file(const FrameTrack& t);
FrameTrack from_feature_file(const FeatureFile& f, int sample_rate);

}  // namespace qpnet
