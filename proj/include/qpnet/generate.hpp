#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "qpnet/features.hpp"
#include "qpnet/net.hpp"
#include "qpnet/signal.hpp"

namespace qpnet {

enum class GenerateMode { Argmax, Sample };

GenerateMode parse_generate_mode(std::string_view s);

// Incremental sampling state. Each block keeps a ring of its past inputs
// (the residual stream entering the block), sized to the largest dilation the
// block can be asked for.
template <typename T>
struct GenState {
    std::vector<Tensor<T>> history;  // per block: capacity × C
    std::vector<int> capacity;
    std::size_t steps = 0;
    T input = T(0);       // decoded previous sample, fed at this step
    T input_prev = T(0);  // the one before it
    std::mt19937_64 rng;

    // Per-step scratch, one row each.
    Tensor<T> hn, x, x_next, x_past, act_f, act_g, z, skip_sum, h1, u, h2, logits;
    std::vector<T> probs;
};

template <typename T>
GenState<T> make_gen_state(const ModelParams<T>& p, std::uint64_t seed);

// One sample of the autoregressive chain: consumes `state.input`, reads each
// block's history at `dilations[b]` steps back, pushes this step's block
// inputs, and returns the 256-way distribution (logits stay in
// `state.logits`). Throws std::logic_error when a dilation exceeds a
// block's history capacity.
template <typename T>
std::span<const T> step(GenState<T>& state, const ModelParams<T>& p, std::span<const T> cond_t,
                        std::span<const int> dilations);

// Index of the largest probability; ties go to the lowest index.
template <typename T>
int argmax_class(std::span<const T> probs);

// Inverse-CDF draw using the state's generator.
template <typename T>
int sample_class(std::span<const T> probs, std::mt19937_64& rng);

struct GenerateResult {
    Waveform wave;
    std::vector<int> codes;
};

// Runs the chain over the whole conditioning sequence. When `logits_out` is
// given it receives the per-step logits (length × 256).
template <typename T>
GenerateResult generate(const ModelParams<T>& p, const ConditioningMatrix& cond, const DilationPlan& plan,
                        GenerateMode mode, std::uint64_t seed, Tensor<T>* logits_out = nullptr);

}  // namespace qpnet
