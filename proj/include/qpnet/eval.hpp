#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qpnet/features.hpp"
#include "qpnet/generate.hpp"

namespace qpnet {

struct F0Rmse {
    std::optional<double> value;  // empty when no frame is voiced in both tracks
    std::size_t frames = 0;
    double sum_sq = 0.0;  // kept so rows can be pooled across utterances
};

// RMSE of natural-log F0 over frames voiced in both tracks. Throws
// std::invalid_argument on differing frame counts.
F0Rmse logf0_rmse(const FrameTrack& cond, const FrameTrack& extracted);

// Mean over frames of (10 / ln 10) sqrt(2 sum_{d>=1} (a_d - b_d)^2); c0 is
// ignored. Throws std::invalid_argument on shape mismatch or no frames.
double mcd(const Tensor<double>& a, const Tensor<double>& b);
double mcd(const FrameTrack& a, const FrameTrack& b);

struct Ratio {
    int num = 1;
    int den = 1;

    double value() const { return static_cast<double>(num) / den; }
    std::string str() const;
    friend bool operator==(const Ratio&, const Ratio&) = default;
};

// "3/2", "1", "0.5" (decimals are kept as num/1000000 reduced).
Ratio parse_ratio(std::string_view s);
std::vector<Ratio> parse_ratio_list(std::string_view csv);
// 1, 1/2, 2/3, 3/4, 4/5, 6/5, 5/4, 4/3, 3/2, 2
const std::vector<Ratio>& default_ratios();

struct MetricRow {
    Ratio ratio;
    std::optional<double> logf0_rmse;
    std::optional<double> mcd_db;
    std::size_t voiced_frames = 0;
    std::string error;  // non-empty when synthesis failed for this ratio
};

struct MetricReport {
    std::vector<MetricRow> rows;

    // Arithmetic mean over rows where the metric is defined.
    std::optional<double> average_rmse() const;
    std::optional<double> average_mcd() const;
    const MetricRow* find(const Ratio& r) const;

    // "ratio,logf0_rmse,mcd_db,voiced_frames", one line per ratio, then
    // "average". Undefined metrics print as "undefined", failed rows as "error".
    std::string csv() const;
};

struct AnalysisParams {
    F0Params f0;
    MelcepParams mcep;

    static AnalysisParams defaults(int sample_rate);
};

// Produces a waveform of `n_samples` that should follow `cond`. `source` is
// the original recording for loop-back style synthesizers; `ratio_index`
// lets seeded synthesizers vary their stream per row.
using Synthesizer = std::function<Waveform(const FrameTrack& cond, std::size_t n_samples, const Waveform& source,
                                           std::size_t ratio_index)>;

struct EvalItem {
    Waveform wave;
    FrameTrack track;  // analysed with the same AnalysisParams
};

// For each ratio and item: scale F0, synthesise, re-analyse, score. Frames
// are pooled across items within a ratio. Rows are independent and run in
// parallel; a failure is recorded in that row's `error`.
MetricReport scaling_experiment(const Synthesizer& synth, const std::vector<EvalItem>& items,
                                const std::vector<Ratio>& ratios, const AnalysisParams& ap);

// Replays the source waveform whatever the condition.
Synthesizer copy_synthesizer();

// Rebuilds conditioning and dilations from `cond`, then runs the sampler.
Synthesizer model_synthesizer(const ModelParams<float>& p, GenerateMode mode, std::uint64_t seed);

}  // namespace qpnet
