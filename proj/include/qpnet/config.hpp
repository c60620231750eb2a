#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qpnet/dilation.hpp"
#include "qpnet/eval.hpp"
#include "qpnet/generate.hpp"
#include "qpnet/signal.hpp"
#include "qpnet/train.hpp"

namespace qpnet {

// Analysis settings in time units, resolved against a sample rate on use.
struct FeatureConfig {
    double f0_frame_ms = 50.0;
    double mcep_frame_ms = 25.0;
    double hop_ms = 5.0;
    double f0_min = 40.0;
    double f0_max = 800.0;
    double voicing_threshold = 0.45;
    int n_mels = 24;
    int mcep_dim = 12;
    double log_floor = 1e-10;

    AnalysisParams resolve(int sample_rate) const;
    friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// Everything a command needs, merged from (lowest to highest priority):
// built-in defaults, the preset's [net] block, the config file, --set
// overrides, then the dedicated flags (--preset, --seed, --threads).
struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 0;  // 0: OpenMP default
    NetConfig net = preset_config("tiny-qpnet");
    TrainConfig train;
    FeatureConfig features;
    CorpusParams corpus;
    int corpus_size = 8;
    GenerateMode mode = GenerateMode::Argmax;
    std::vector<Ratio> ratios = default_ratios();

    // INI text with every key; parsing it back yields an equal config.
    std::string echo() const;
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ConfigSources {
    std::optional<std::filesystem::path> file;
    std::vector<std::string> overrides;  // "section.key=value"
    std::optional<std::string> preset;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

RunConfig parse_run_config(const std::string& ini_text, const ConfigSources& flags = {});
RunConfig load_run_config(const ConfigSources& sources);

// Writes config.ini into `dir` (created if needed).
void write_config_echo(const std::filesystem::path& dir, const RunConfig& cfg);

}  // namespace qpnet
