#include "qpnet/generate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qpnet {

GenerateMode parse_generate_mode(std::string_view s) {
    if (s == "argmax") return GenerateMode::Argmax;
    if (s == "sample") return GenerateMode::Sample;
    throw std::invalid_argument("unknown generation mode '" + std::string(s) + "' (argmax|sample)");
}

template <typename T>
GenState<T> make_gen_state(const ModelParams<T>& p, std::uint64_t seed) {
    const NetConfig& cfg = p.config;
    const auto C = static_cast<std::size_t>(cfg.residual_channels);
    const auto S = static_cast<std::size_t>(cfg.skip_channels);
    GenState<T> s;
    s.rng.seed(seed);
    s.history.resize(static_cast<std::size_t>(cfg.block_count()));
    s.capacity.resize(s.history.size());
    for (int b = 0; b < cfg.block_count(); ++b) {
        s.capacity[static_cast<std::size_t>(b)] = max_dilation(cfg, b);
        s.history[static_cast<std::size_t>(b)].resize(static_cast<std::size_t>(s.capacity[static_cast<std::size_t>(b)]), C);
    }
    s.hn.resize(1, static_cast<std::size_t>(cfg.aux_dim));
    for (auto* t : {&s.x, &s.x_next, &s.x_past, &s.act_f, &s.act_g, &s.z}) t->resize(1, C);
    for (auto* t : {&s.skip_sum, &s.h1, &s.u, &s.h2}) t->resize(1, S);
    s.logits.resize(1, kOutputClasses);
    s.probs.resize(kOutputClasses);
    return s;
}

template <typename T>
std::span<const T> step(GenState<T>& s, const ModelParams<T>& p, std::span<const T> cond_t,
                        std::span<const int> dilations) {
    const NetConfig& cfg = p.config;
    if (dilations.size() != static_cast<std::size_t>(cfg.block_count()))
        throw std::invalid_argument("step: need one dilation per block");
    if (s.history.size() != dilations.size()) throw std::invalid_argument("step: state was built for another model");

    rows::normalize_cond<T>(p, ConstRowsView<T>(cond_t.data(), 1, cond_t.size()), s.hn);
    rows::causal<T>(p, ConstRowsView<T>(&s.input, 1, 1), ConstRowsView<T>(&s.input_prev, 1, 1), s.x);
    s.skip_sum.fill(T(0));

    const std::size_t C = s.x.cols();
    for (std::size_t b = 0; b < dilations.size(); ++b) {
        const int d = dilations[b];
        const int cap = s.capacity[b];
        if (d < 1 || d > cap) throw std::logic_error("step: dilation " + std::to_string(d) + " exceeds block history");
        Tensor<T>& ring = s.history[b];
        if (s.steps >= static_cast<std::size_t>(d)) {
            const auto src = ring.row((s.steps - static_cast<std::size_t>(d)) % static_cast<std::size_t>(cap));
            std::copy(src.begin(), src.end(), s.x_past.data());
        } else {
            s.x_past.fill(T(0));
        }
        rows::block<T>(p.blocks[b], s.x, s.x_past, s.hn, s.act_f, s.act_g, s.z, s.skip_sum, s.x_next);
        std::copy(s.x.data(), s.x.data() + C, ring.row(s.steps % static_cast<std::size_t>(cap)).data());
        std::swap(s.x, s.x_next);
    }
    rows::head<T>(p, s.skip_sum, s.h1, s.u, s.h2, s.logits);

    const T* lg = s.logits.data();
    const T mx = *std::max_element(lg, lg + kOutputClasses);
    T total = T(0);
    for (int c = 0; c < kOutputClasses; ++c) {
        s.probs[static_cast<std::size_t>(c)] = std::exp(lg[c] - mx);
        total += s.probs[static_cast<std::size_t>(c)];
    }
    for (T& v : s.probs) v /= total;

    ++s.steps;
    s.input_prev = s.input;
    return s.probs;
}

template <typename T>
int argmax_class(std::span<const T> probs) {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

template <typename T>
int sample_class(std::span<const T> probs, std::mt19937_64& rng) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    double acc = 0.0;
    int last = 0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        if (probs[c] <= T(0)) continue;
        last = static_cast<int>(c);
        acc += static_cast<double>(probs[c]);
        if (u < acc) return last;
    }
    return last;
}

template <typename T>
GenerateResult generate(const ModelParams<T>& p, const ConditioningMatrix& cond, const DilationPlan& plan,
                        GenerateMode mode, std::uint64_t seed, Tensor<T>* logits_out) {
    const std::size_t L = cond.rows();
    if (plan.length() != L) throw std::invalid_argument("generate: plan and conditioning lengths differ");
    if (cond.cols() != static_cast<std::size_t>(p.config.aux_dim))
        throw std::invalid_argument("generate: conditioning width differs from aux_dim");
    GenState<T> s = make_gen_state(p, seed);
    if (logits_out) logits_out->resize(L, kOutputClasses);

    GenerateResult out;
    out.wave.sample_rate = p.config.sample_rate;
    out.wave.samples.resize(L);
    out.codes.resize(L);
    std::vector<T> cond_t(cond.cols());
    std::vector<int> dil(static_cast<std::size_t>(plan.block_count()));
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t a = 0; a < cond.cols(); ++a) cond_t[a] = static_cast<T>(cond(t, a));
        for (int b = 0; b < plan.block_count(); ++b)
            dil[static_cast<std::size_t>(b)] = plan.delays[static_cast<std::size_t>(b) * L + t];
        const auto probs = step<T>(s, p, cond_t, dil);
        if (logits_out) std::copy(s.logits.data(), s.logits.data() + kOutputClasses, logits_out->row(t).data());
        const int c = mode == GenerateMode::Argmax ? argmax_class<T>(probs) : sample_class<T>(probs, s.rng);
        out.codes[t] = c;
        out.wave.samples[t] = mulaw_decode(c);
        s.input = static_cast<T>(out.wave.samples[t]);
    }
    return out;
}

#define QPNET_INSTANTIATE(T)                                                                                  \
    template GenState<T> make_gen_state<T>(const ModelParams<T>&, std::uint64_t);                             \
    template std::span<const T> step<T>(GenState<T>&, const ModelParams<T>&, std::span<const T>,              \
                                        std::span<const int>);                                                \
    template int argmax_class<T>(std::span<const T>);                                                          \
    template int sample_class<T>(std::span<const T>, std::mt19937_64&);                                        \
    template GenerateResult generate<T>(const ModelParams<T>&, const ConditioningMatrix&, const DilationPlan&, \
                                        GenerateMode, std::uint64_t, Tensor<T>*);

QPNET_INSTANTIATE(float)
QPNET_INSTANTIATE(double)

#undef QPNET_INSTANTIATE

}  // namespace qpnet
