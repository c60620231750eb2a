#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "qpnet/dilation.hpp"
#include "qpnet/tensor.hpp"

namespace qpnet {

inline constexpr int kOutputClasses = 256;

// Weight matrices are stored fan_in × fan_out and applied to row vectors:
// y = x · W. A block's two dilated taps are `*_cur` (sample t) and `*_past`
// (sample t - d[t]); `*_cond` projects the normalised conditioning vector.
template <typename T>
struct ResidualBlock {
    Tensor<T> filter_cur, filter_past, filter_cond, filter_bias;
    Tensor<T> gate_cur, gate_past, gate_cond, gate_bias;
    Tensor<T> residual, residual_bias;
    Tensor<T> skip, skip_bias;
};

template <typename T>
struct ModelParams {
    NetConfig config;
    Tensor<T> causal_cur, causal_past, causal_bias;  // 1 × C each
    std::vector<ResidualBlock<T>> blocks;
    Tensor<T> head1, head1_bias;  // S × S
    Tensor<T> head2, head2_bias;  // S × 256
    // Fixed affine map applied to raw conditioning: (h - shift) * scale.
    // Fitted from corpus statistics, never trained.
    Tensor<T> cond_shift, cond_scale;

    // Every tensor in checkpoint/declaration order, with a stable name.
    std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors() const;
    // The subset the optimiser updates (everything but the cond_* pair).
    std::vector<Tensor<T>*> trainable();
    std::vector<const Tensor<T>*> trainable() const;
    std::size_t parameter_count() const;

    template <typename U>
    ModelParams<U> cast() const;

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        if (!(a.config == b.config)) return false;
        auto ta = a.named_tensors();
        auto tb = b.named_tensors();
        if (ta.size() != tb.size()) return false;
        for (std::size_t i = 0; i < ta.size(); ++i)
            if (!(*ta[i].second == *tb[i].second)) return false;
        return true;
    }
};

// All tensors allocated with the right shapes and zero-filled (cond_scale is 1).
template <typename T>
ModelParams<T> zero_params(const NetConfig& cfg);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
template <typename T>
ModelParams<T> init_params(const NetConfig& cfg, std::uint64_t seed);

// exp by range reduction and a Taylor polynomial; branch-free so activation loops vectorize.
template <typename T>
inline T exp_fast(T x) {
    if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
        constexpr bool single = std::is_same_v<T, float>;
        using I = std::conditional_t<single, std::int32_t, std::int64_t>;
        constexpr std::size_t kTerms = single ? 8 : 14;
        constexpr T lo = single ? T(-87) : T(-708), hi = single ? T(88) : T(709);
        constexpr T ln2_hi = single ? T(0.693359375) : T(0.693147180369123816490);
        constexpr T ln2_lo = single ? T(-2.12194440e-4) : T(1.90821492927058770002e-10);
        x = x < lo ? lo : x;
        x = x > hi ? hi : x;
        constexpr T shift = single ? T(12582912) : T(6755399441055744);  // 1.5 · 2^mantissa rounds to nearest
        const T n = (x * T(1.44269504088896340736) + shift) - shift;
        const T r = (x - n * ln2_hi) - n * ln2_lo;
        // Horner over 1/k!, highest order first.
        T p = T(0);
        [&]<std::size_t... k>(std::index_sequence<k...>) {
            constexpr auto inv_factorial = [](std::size_t n) {
                T f = T(1);
                for (std::size_t i = 2; i <= n; ++i) f /= T(i);
                return f;
            };
            ((p = p * r + inv_factorial(kTerms - 1 - k)), ...);
        }(std::make_index_sequence<kTerms>{});
        const I bits = (static_cast<I>(n) + (single ? 127 : 1023)) << (single ? 23 : 52);
        return p * std::bit_cast<T>(bits);
    } else {
        return std::exp(x);
    }
}

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + exp_fast(-x));
}

// tanh via a single exp.
template <typename T>
inline T tanh_fast(T x) {
    const T e = exp_fast(T(-2) * std::fabs(x));
    return std::copysign((T(1) - e) / (T(1) + e), x);
}

template <typename T>
inline T gated_unit(T a_f, T a_g) {
    return tanh_fast(a_f) * sigmoid(a_g);
}

// out[t] = x[t] · w_cur + x[t - d[t]] · w_past, zero history before t = 0.
template <typename T>
Tensor<T> pd_dilated_conv(const Tensor<T>& x, const Tensor<T>& w_cur, const Tensor<T>& w_past, std::span<const int> d);

// Row-level building blocks. The batched forward pass and the incremental
// sampler both go through these, one row per time step.
namespace rows {

template <typename T>
void causal(const ModelParams<T>& p, ConstRowsView<T> in, ConstRowsView<T> in_prev, RowsView<T> x0);

template <typename T>
void normalize_cond(const ModelParams<T>& p, ConstRowsView<T> raw, RowsView<T> out);

// Filter/gate pre-activations, gate, skip accumulation and residual output.
// `act_f`/`act_g` receive tanh(a_f) and sigmoid(a_g).
template <typename T>
void block(const ResidualBlock<T>& b, ConstRowsView<T> x, ConstRowsView<T> x_past, ConstRowsView<T> hn,
           RowsView<T> act_f, RowsView<T> act_g, RowsView<T> z, RowsView<T> skip_sum, RowsView<T> x_next);

template <typename T>
void head(const ModelParams<T>& p, ConstRowsView<T> skip_sum, RowsView<T> h1, RowsView<T> u, RowsView<T> h2,
          RowsView<T> logits);

}  // namespace rows

// Activations kept for the backward pass.
template <typename T>
struct ForwardCache {
    std::size_t length = 0;
    std::vector<T> input;
    std::vector<T> input_prev;
    Tensor<T> hn;
    std::vector<std::vector<int>> delays;  // per block
    std::vector<Tensor<T>> x, x_past, act_f, act_g, z;
    Tensor<T> skip_sum, h1, u, h2, logits;

    bool valid() const { return length > 0 && !x.empty(); }
};

// Teacher-forced pass. `input[t]` is the decoded previous sample (0 at t=0),
// `cond` the raw per-sample conditioning, `plan` the per-block dilations.
// Returns T × 256 logits. Throws std::invalid_argument on length mismatch.
template <typename T>
Tensor<T> forward(const ModelParams<T>& p, std::span<const T> input, const Tensor<T>& cond, const DilationPlan& plan,
                  ForwardCache<T>* cache = nullptr);

// Accumulates dLoss/dParams into `grads` given dLoss/dLogits. Throws
// std::logic_error when the cache does not hold a matching forward pass.
template <typename T>
void backward_acc(const ModelParams<T>& p, const ForwardCache<T>& cache, const Tensor<T>& dlogits,
                  ModelParams<T>& grads);

template <typename T>
ModelParams<T> backward(const ModelParams<T>& p, const ForwardCache<T>& cache, const Tensor<T>& dlogits);

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
    ModelParams<U> out = zero_params<U>(config);
    auto src = named_tensors();
    auto dst = out.named_tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    return out;
}

}  // namespace qpnet
