#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qpnet/features.hpp"

namespace qpnet {

// Architecture: a causal input layer, `fixed_layers * fixed_repeats` blocks
// with doubling static dilations, then `adaptive_layers * adaptive_repeats`
// blocks whose dilations are scaled per sample by the pitch-dependent factor.
struct NetConfig {
    std::string preset = "custom";
    int fixed_layers = 4;
    int fixed_repeats = 3;
    int adaptive_layers = 4;
    int adaptive_repeats = 1;
    int residual_channels = 32;
    int skip_channels = 16;
    int a = 8;
    int sample_rate = 22050;
    int aux_dim = 14;
    double f0_floor = 40.0;
    double f0_ceil = 800.0;

    int fixed_blocks() const { return fixed_layers * fixed_repeats; }
    int adaptive_blocks() const { return adaptive_layers * adaptive_repeats; }
    int block_count() const { return fixed_blocks() + adaptive_blocks(); }
    bool is_adaptive(int block) const { return block >= fixed_blocks(); }

    void validate() const;
    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// "wnf", "wnc", "qpnet" (full width), "tiny-qpnet", "tiny-wnc" (desk scale).
// Throws std::invalid_argument listing the valid names.
NetConfig preset_config(std::string_view name);
const std::vector<std::string>& preset_names();

// max(1, ceil(fs / (clamp(f0, floor, ceil) * a))). Throws std::domain_error
// for f0 <= 0.
int dilation_factor(double f0, int sample_rate, int a, double f0_floor, double f0_ceil);
int dilation_factor(double f0, const NetConfig& cfg);

// `repeats` copies of [1, 2, ..., 2^(layers-1)].
std::vector<int> fixed_schedule(int layers, int repeats);

// Per sample: `repeats` copies of [E, 2E, ..., 2^(layers-1) E].
std::vector<std::vector<int>> adaptive_schedule(std::span<const int> factors, int layers, int repeats);

// 1 + fixed_repeats (2^fixed_layers - 1) + adaptive_repeats E (2^adaptive_layers - 1).
long receptive_field(const NetConfig& cfg, int factor);

// Largest dilation block `block` can request under the config's F0 clip.
int max_dilation(const NetConfig& cfg, int block);

struct DilationPlan {
    std::vector<int> fixed_dilations;  // one per fixed block
    std::vector<int> factors;          // E per sample
    int adaptive_layers = 0;
    int adaptive_blocks = 0;
    // Block-major delays: delays[b * length + t] for every block b.
    std::vector<int> delays;

    std::size_t length() const { return factors.size(); }
    int block_count() const { return static_cast<int>(fixed_dilations.size()) + adaptive_blocks; }
    std::span<const int> block_delays(int block) const {
        return {delays.data() + static_cast<std::size_t>(block) * length(), length()};
    }
    int adaptive_dilation(std::size_t t, int k) const {
        return delays[(fixed_dilations.size() + static_cast<std::size_t>(k)) * length() + t];
    }
    // Dilations every block uses at sample t, in block order.
    std::vector<int> dilations_at(std::size_t t) const;

    DilationPlan slice(std::size_t start, std::size_t count) const;
};

DilationPlan plan_from_factors(const NetConfig& cfg, std::vector<int> factors);
// E[t] from the continuous log-F0 column of `cond`.
DilationPlan build_plan(const NetConfig& cfg, const ConditioningMatrix& cond);

}  // namespace qpnet
