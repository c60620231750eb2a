#include "qpnet/reference.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace qpnet::reference {

namespace {

template <typename T>
using Seq = std::vector<std::vector<T>>;

// out_o = sum_i v_i * W(i, o)
template <typename T>
void project_add(const std::vector<T>& v, const Tensor<T>& w, std::vector<T>& out) {
    for (std::size_t o = 0; o < w.cols(); ++o) {
        T acc = T(0);
        for (std::size_t i = 0; i < w.rows(); ++i) acc += v[i] * w(i, o);
        out[o] += acc;
    }
}

}  // namespace

template <typename T>
Tensor<T> forward(const ModelParams<T>& p, std::span<const T> input, const Tensor<T>& cond, const DilationPlan& plan) {
    const NetConfig& cfg = p.config;
    const std::size_t L = input.size();
    if (cond.rows() != L || plan.length() != L) throw std::invalid_argument("reference::forward: length mismatch");
    const auto C = static_cast<std::size_t>(cfg.residual_channels);
    const auto S = static_cast<std::size_t>(cfg.skip_channels);
    const auto A = static_cast<std::size_t>(cfg.aux_dim);

    Seq<T> h(L, std::vector<T>(A));
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t a = 0; a < A; ++a) h[t][a] = (cond(t, a) - p.cond_shift(0, a)) * p.cond_scale(0, a);

    Seq<T> x(L, std::vector<T>(C));
    for (std::size_t t = 0; t < L; ++t) {
        const T prev = t > 0 ? input[t - 1] : T(0);
        for (std::size_t c = 0; c < C; ++c)
            x[t][c] = p.causal_cur(0, c) * input[t] + p.causal_past(0, c) * prev + p.causal_bias(0, c);
    }

    Seq<T> skip(L, std::vector<T>(S, T(0)));
    for (int bi = 0; bi < cfg.block_count(); ++bi) {
        const auto& b = p.blocks[static_cast<std::size_t>(bi)];
        const auto delays = plan.block_delays(bi);
        Seq<T> next(L, std::vector<T>(C));
        for (std::size_t t = 0; t < L; ++t) {
            const long src = static_cast<long>(t) - delays[t];
            const std::vector<T> zero(C, T(0));
            const std::vector<T>& past = src >= 0 ? x[static_cast<std::size_t>(src)] : zero;

            std::vector<T> af(C, T(0)), ag(C, T(0));
            project_add(x[t], b.filter_cur, af);
            project_add(past, b.filter_past, af);
            project_add(h[t], b.filter_cond, af);
            project_add(x[t], b.gate_cur, ag);
            project_add(past, b.gate_past, ag);
            project_add(h[t], b.gate_cond, ag);

            std::vector<T> z(C);
            for (std::size_t c = 0; c < C; ++c) {
                const T f = af[c] + b.filter_bias(0, c);
                const T g = ag[c] + b.gate_bias(0, c);
                z[c] = std::tanh(f) / (T(1) + std::exp(-g));
            }
            std::vector<T> res(C, T(0)), sk(S, T(0));
            project_add(z, b.residual, res);
            project_add(z, b.skip, sk);
            for (std::size_t c = 0; c < C; ++c) next[t][c] = x[t][c] + res[c] + b.residual_bias(0, c);
            for (std::size_t s = 0; s < S; ++s) skip[t][s] += sk[s] + b.skip_bias(0, s);
        }
        x = std::move(next);
    }

    Tensor<T> logits(L, kOutputClasses);
    for (std::size_t t = 0; t < L; ++t) {
        std::vector<T> h1(S), u(S, T(0));
        for (std::size_t s = 0; s < S; ++s) h1[s] = skip[t][s] > T(0) ? skip[t][s] : T(0);
        project_add(h1, p.head1, u);
        for (std::size_t s = 0; s < S; ++s) {
            u[s] += p.head1_bias(0, s);
            u[s] = u[s] > T(0) ? u[s] : T(0);
        }
        std::vector<T> out(kOutputClasses, T(0));
        project_add(u, p.head2, out);
        for (int c = 0; c < kOutputClasses; ++c) logits(t, static_cast<std::size_t>(c)) = out[static_cast<std::size_t>(c)] + p.head2_bias(0, static_cast<std::size_t>(c));
    }
    return logits;
}

template Tensor<float> forward<float>(const ModelParams<float>&, std::span<const float>, const Tensor<float>&,
                                      const DilationPlan&);
template Tensor<double> forward<double>(const ModelParams<double>&, std::span<const double>, const Tensor<double>&,
                                        const DilationPlan&);
template Tensor<long double> forward<long double>(const ModelParams<long double>&, std::span<const long double>,
                                                  const Tensor<long double>&, const DilationPlan&);

}  // namespace qpnet::reference
