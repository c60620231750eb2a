#include "qpnet/net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "qpnet/kernels.hpp"

namespace qpnet {

namespace k = kernels;

namespace {

template <typename T>
std::span<const T> vec(const Tensor<T>& t) {
    return t.flat();
}

template <typename T>
std::span<T> vec(Tensor<T>& t) {
    return t.flat();
}

template <typename T>
bool is_trainable_name(const std::string& name) {
    return name.rfind("cond_", 0) != 0;
}

template <typename T, typename Self>
auto collect(Self& p) {
    using Ptr = std::conditional_t<std::is_const_v<Self>, const Tensor<T>*, Tensor<T>*>;
    std::vector<std::pair<std::string, Ptr>> out;
    out.emplace_back("causal_cur", &p.causal_cur);
    out.emplace_back("causal_past", &p.causal_past);
    out.emplace_back("causal_bias", &p.causal_bias);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = "block" + std::to_string(i) + ".";
        out.emplace_back(pre + "filter_cur", &b.filter_cur);
        out.emplace_back(pre + "filter_past", &b.filter_past);
        out.emplace_back(pre + "filter_cond", &b.filter_cond);
        out.emplace_back(pre + "filter_bias", &b.filter_bias);
        out.emplace_back(pre + "gate_cur", &b.gate_cur);
        out.emplace_back(pre + "gate_past", &b.gate_past);
        out.emplace_back(pre + "gate_cond", &b.gate_cond);
        out.emplace_back(pre + "gate_bias", &b.gate_bias);
        out.emplace_back(pre + "residual", &b.residual);
        out.emplace_back(pre + "residual_bias", &b.residual_bias);
        out.emplace_back(pre + "skip", &b.skip);
        out.emplace_back(pre + "skip_bias", &b.skip_bias);
    }
    out.emplace_back("head1", &p.head1);
    out.emplace_back("head1_bias", &p.head1_bias);
    out.emplace_back("head2", &p.head2);
    out.emplace_back("head2_bias", &p.head2_bias);
    out.emplace_back("cond_shift", &p.cond_shift);
    out.emplace_back("cond_scale", &p.cond_scale);
    return out;
}

constexpr std::size_t kForwardSpan = 256;

template <typename T, typename F>
void for_rows(std::size_t rows, F&& f) {
    k::parallel_rows(rows, std::forward<F>(f));
}

template <typename T>
void relu_copy(ConstRowsView<T> in, RowsView<T> out) {
    const std::size_t n = in.rows * in.cols;
    for (std::size_t i = 0; i < n; ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelParams<T>::named_tensors() {
    return collect<T>(*this);
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ModelParams<T>::named_tensors() const {
    return collect<T>(*this);
}

template <typename T>
std::vector<Tensor<T>*> ModelParams<T>::trainable() {
    std::vector<Tensor<T>*> out;
    for (auto& [name, t] : named_tensors())
        if (is_trainable_name<T>(name)) out.push_back(t);
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> ModelParams<T>::trainable() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& [name, t] : named_tensors())
        if (is_trainable_name<T>(name)) out.push_back(t);
    return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : trainable()) n += t->size();
    return n;
}

template <typename T>
ModelParams<T> zero_params(const NetConfig& cfg) {
    cfg.validate();
    const auto C = static_cast<std::size_t>(cfg.residual_channels);
    const auto S = static_cast<std::size_t>(cfg.skip_channels);
    const auto A = static_cast<std::size_t>(cfg.aux_dim);
    ModelParams<T> p;
    p.config = cfg;
    p.causal_cur.resize(1, C);
    p.causal_past.resize(1, C);
    p.causal_bias.resize(1, C);
    p.blocks.resize(static_cast<std::size_t>(cfg.block_count()));
    for (auto& b : p.blocks) {
        for (auto* w : {&b.filter_cur, &b.filter_past, &b.gate_cur, &b.gate_past, &b.residual}) w->resize(C, C);
        b.filter_cond.resize(A, C);
        b.gate_cond.resize(A, C);
        b.filter_bias.resize(1, C);
        b.gate_bias.resize(1, C);
        b.residual_bias.resize(1, C);
        b.skip.resize(C, S);
        b.skip_bias.resize(1, S);
    }
    p.head1.resize(S, S);
    p.head1_bias.resize(1, S);
    p.head2.resize(S, kOutputClasses);
    p.head2_bias.resize(1, kOutputClasses);
    p.cond_shift.resize(1, A);
    p.cond_scale.resize(1, A, T(1));
    return p;
}

template <typename T>
ModelParams<T> init_params(const NetConfig& cfg, std::uint64_t seed) {
    ModelParams<T> p = zero_params<T>(cfg);
    std::mt19937_64 rng(seed);
    for (auto& [name, t] : p.named_tensors()) {
        if (!is_trainable_name<T>(name) || name.ends_with("_bias")) continue;
        const double scale = 1.0 / std::sqrt(static_cast<double>(t->rows()));
        std::uniform_real_distribution<double> dist(-scale, scale);
        for (T& v : t->flat()) v = static_cast<T>(dist(rng));
    }
    return p;
}

template <typename T>
Tensor<T> pd_dilated_conv(const Tensor<T>& x, const Tensor<T>& w_cur, const Tensor<T>& w_past, std::span<const int> d) {
    require(d.size() == x.rows(), "pd_dilated_conv: one dilation per sample required");
    require(w_cur.rows() == x.cols() && w_past.same_shape(w_cur), "pd_dilated_conv: weight shape mismatch");
    for (int v : d) require(v >= 1, "pd_dilated_conv: dilation must be >= 1");
    Tensor<T> past(x.rows(), x.cols());
    k::gather_past<T>(past, x, d);
    Tensor<T> out(x.rows(), w_cur.cols());
    k::matmul_acc<T>(out, x, w_cur);
    k::matmul_acc<T>(out, past, w_past);
    return out;
}

// ---------------------------------------------------------------------------
// Row routines

namespace rows {

template <typename T>
void causal(const ModelParams<T>& p, ConstRowsView<T> in, ConstRowsView<T> in_prev, RowsView<T> x0) {
    const std::size_t C = x0.cols;
    const T* cur = p.causal_cur.data();
    const T* past = p.causal_past.data();
    const T* bias = p.causal_bias.data();
    for_rows<T>(x0.rows, [&](std::size_t t) {
        T* o = x0.row(t);
        const T a = in.row(t)[0], b = in_prev.row(t)[0];
        for (std::size_t c = 0; c < C; ++c) o[c] = bias[c] + a * cur[c] + b * past[c];
    });
}

template <typename T>
void normalize_cond(const ModelParams<T>& p, ConstRowsView<T> raw, RowsView<T> out) {
    require(raw.cols == p.cond_shift.cols(), "conditioning width does not match aux_dim");
    const T* shift = p.cond_shift.data();
    const T* scale = p.cond_scale.data();
    for_rows<T>(raw.rows, [&](std::size_t t) {
        const T* r = raw.row(t);
        T* o = out.row(t);
        for (std::size_t c = 0; c < raw.cols; ++c) o[c] = (r[c] - shift[c]) * scale[c];
    });
}

template <typename T>
void block(const ResidualBlock<T>& b, ConstRowsView<T> x, ConstRowsView<T> x_past, ConstRowsView<T> hn,
           RowsView<T> act_f, RowsView<T> act_g, RowsView<T> z, RowsView<T> skip_sum, RowsView<T> x_next) {
    k::set_rows<T>(act_f, vec(b.filter_bias));
    k::matmul_acc<T>(act_f, x, b.filter_cur);
    k::matmul_acc<T>(act_f, x_past, b.filter_past);
    k::matmul_acc<T>(act_f, hn, b.filter_cond);
    k::set_rows<T>(act_g, vec(b.gate_bias));
    k::matmul_acc<T>(act_g, x, b.gate_cur);
    k::matmul_acc<T>(act_g, x_past, b.gate_past);
    k::matmul_acc<T>(act_g, hn, b.gate_cond);

    const std::size_t C = z.cols;
    for_rows<T>(z.rows, [&](std::size_t t) {
        T* f = act_f.row(t);
        T* g = act_g.row(t);
        T* zr = z.row(t);
        for (std::size_t c = 0; c < C; ++c) {
            f[c] = tanh_fast(f[c]);
            g[c] = sigmoid(g[c]);
            zr[c] = f[c] * g[c];
        }
    });

    k::matmul_acc<T>(skip_sum, z, b.skip);
    k::add_rows<T>(skip_sum, vec(b.skip_bias));

    std::copy(x.data, x.data + x.rows * x.cols, x_next.data);
    k::add_rows<T>(x_next, vec(b.residual_bias));
    k::matmul_acc<T>(x_next, z, b.residual);
}

template <typename T>
void head(const ModelParams<T>& p, ConstRowsView<T> skip_sum, RowsView<T> h1, RowsView<T> u, RowsView<T> h2,
          RowsView<T> logits) {
    relu_copy<T>(skip_sum, h1);
    k::set_rows<T>(u, vec(p.head1_bias));
    k::matmul_acc<T>(u, h1, p.head1);
    relu_copy<T>(u, h2);
    k::set_rows<T>(logits, vec(p.head2_bias));
    k::matmul_acc<T>(logits, h2, p.head2);
}

}  // namespace rows

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
Tensor<T> forward(const ModelParams<T>& p, std::span<const T> input, const Tensor<T>& cond, const DilationPlan& plan,
                  ForwardCache<T>* cache) {
    const NetConfig& cfg = p.config;
    const std::size_t L = input.size();
    require(L > 0, "forward: empty input");
    require(cond.rows() == L, "forward: conditioning length differs from input length");
    require(cond.cols() == static_cast<std::size_t>(cfg.aux_dim), "forward: conditioning width differs from aux_dim");
    require(plan.length() == L, "forward: dilation plan length differs from input length");
    require(plan.block_count() == cfg.block_count(), "forward: dilation plan does not match the block layout");

    const auto C = static_cast<std::size_t>(cfg.residual_channels);
    const auto S = static_cast<std::size_t>(cfg.skip_channels);
    const auto B = static_cast<std::size_t>(cfg.block_count());

    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c.length = L;
    c.input.assign(input.begin(), input.end());
    c.input_prev.assign(L, T(0));
    std::copy(input.begin(), input.end() - 1, c.input_prev.begin() + 1);
    c.hn.resize(L, cond.cols());
    rows::normalize_cond<T>(p, cond, c.hn);

    c.delays.resize(B);
    c.x.resize(B);
    c.x_past.resize(B);
    c.act_f.resize(B);
    c.act_g.resize(B);
    c.z.resize(B);
    c.x[0].resize(L, C);
    rows::causal<T>(p, ConstRowsView<T>(c.input.data(), L, 1), ConstRowsView<T>(c.input_prev.data(), L, 1), c.x[0]);

    c.skip_sum.resize(L, S);
    Tensor<T> tail;
    for (std::size_t b = 0; b < B; ++b) {
        const auto d = plan.block_delays(static_cast<int>(b));
        c.delays[b].assign(d.begin(), d.end());
        for (auto* t : {&c.x_past[b], &c.act_f[b], &c.act_g[b], &c.z[b]}) t->resize(L, C);
        ((b + 1 < B) ? c.x[b + 1] : tail).resize(L, C);
    }
    // Every block runs over one span of rows before the next span starts.
    for (std::size_t t0 = 0; t0 < L; t0 += kForwardSpan) {
        const std::size_t n = std::min(kForwardSpan, L - t0);
        for (std::size_t b = 0; b < B; ++b) {
            const auto d = plan.block_delays(static_cast<int>(b)).subspan(t0, n);
            const RowsView<T> past = RowsView<T>(c.x_past[b]).slice(t0, n);
            k::gather_past<T>(past, c.x[b], d, t0);
            Tensor<T>& next = (b + 1 < B) ? c.x[b + 1] : tail;
            rows::block<T>(p.blocks[b], ConstRowsView<T>(c.x[b]).slice(t0, n), past,
                           ConstRowsView<T>(c.hn).slice(t0, n), RowsView<T>(c.act_f[b]).slice(t0, n),
                           RowsView<T>(c.act_g[b]).slice(t0, n), RowsView<T>(c.z[b]).slice(t0, n),
                           RowsView<T>(c.skip_sum).slice(t0, n), RowsView<T>(next).slice(t0, n));
        }
    }
    c.h1.resize(L, S);
    c.u.resize(L, S);
    c.h2.resize(L, S);
    c.logits.resize(L, kOutputClasses);
    rows::head<T>(p, c.skip_sum, c.h1, c.u, c.h2, c.logits);
    if (cache) return c.logits;
    return std::move(c.logits);
}

template <typename T>
void backward_acc(const ModelParams<T>& p, const ForwardCache<T>& c, const Tensor<T>& dlogits, ModelParams<T>& g) {
    const NetConfig& cfg = p.config;
    const auto B = static_cast<std::size_t>(cfg.block_count());
    if (!c.valid() || c.x.size() != B) throw std::logic_error("backward: no cached forward pass for this model");
    if (dlogits.rows() != c.length || dlogits.cols() != static_cast<std::size_t>(kOutputClasses))
        throw std::logic_error("backward: dlogits shape does not match the cached pass");
    const std::size_t L = c.length;
    const auto C = static_cast<std::size_t>(cfg.residual_channels);
    const auto S = static_cast<std::size_t>(cfg.skip_channels);

    // Head.
    k::outer_acc<T>(g.head2, c.h2, dlogits);
    k::colsum_acc<T>(vec(g.head2_bias), dlogits);
    // Per-thread scratch reused across calls.
    thread_local Tensor<T> du, dskip, dz, daf, dag, dpast;
    du.resize(L, S);
    k::matmul_acc<T>(du, dlogits, k::transposed(p.head2));
    for (std::size_t i = 0; i < du.size(); ++i)
        if (!(c.u.data()[i] > T(0))) du.data()[i] = T(0);
    k::outer_acc<T>(g.head1, c.h1, du);
    k::colsum_acc<T>(vec(g.head1_bias), du);
    dskip.resize(L, S);
    k::matmul_acc<T>(dskip, du, k::transposed(p.head1));
    for (std::size_t i = 0; i < dskip.size(); ++i)
        if (!(c.skip_sum.data()[i] > T(0))) dskip.data()[i] = T(0);

    // Residual stack, spans in reverse time, last block first within a span.
    // dx[b] is dLoss/d(input of block b); dx[B] stays zero.
    thread_local std::vector<Tensor<T>> dx;
    dx.resize(B + 1);
    for (auto& t : dx) {
        t.resize(L, C);
        t.fill(T(0));
    }
    for (auto* t : {&dz, &daf, &dag, &dpast}) t->resize(std::min(L, kForwardSpan), C);
    struct Transposed {
        Tensor<T> residual, skip, filter_cur, gate_cur, filter_past, gate_past;
    };
    std::vector<Transposed> wt(B);
    for (std::size_t bi = 0; bi < B; ++bi) {
        const auto& pb = p.blocks[bi];
        wt[bi] = {k::transposed(pb.residual),    k::transposed(pb.skip),        k::transposed(pb.filter_cur),
                  k::transposed(pb.gate_cur),    k::transposed(pb.filter_past), k::transposed(pb.gate_past)};
    }
    const std::size_t spans = (L + kForwardSpan - 1) / kForwardSpan;
    for (std::size_t si = spans; si-- > 0;) {
        const std::size_t t0 = si * kForwardSpan;
        const std::size_t n = std::min(kForwardSpan, L - t0);
        const auto span = [&](const Tensor<T>& t) { return ConstRowsView<T>(t).slice(t0, n); };
        const RowsView<T> vz(dz.data(), n, C), vf(daf.data(), n, C), vg(dag.data(), n, C), vp(dpast.data(), n, C);
        const ConstRowsView<T> ds = span(dskip), hn = span(c.hn);
        for (std::size_t bi = B; bi-- > 0;) {
            auto& gb = g.blocks[bi];
            const Transposed& w = wt[bi];
            const ConstRowsView<T> dout = span(dx[bi + 1]), z = span(c.z[bi]), x = span(c.x[bi]);
            const ConstRowsView<T> xp = span(c.x_past[bi]), th = span(c.act_f[bi]), sg = span(c.act_g[bi]);
            const RowsView<T> din = RowsView<T>(dx[bi]).slice(t0, n);

            std::fill(dz.data(), dz.data() + n * C, T(0));
            k::matmul_acc<T>(vz, dout, w.residual);
            k::matmul_acc<T>(vz, ds, w.skip);
            k::outer_acc<T>(gb.residual, z, dout);
            k::colsum_acc<T>(vec(gb.residual_bias), dout);
            k::outer_acc<T>(gb.skip, z, ds);
            k::colsum_acc<T>(vec(gb.skip_bias), ds);

            for (std::size_t i = 0; i < n * C; ++i) {
                const T t = th.data[i], s = sg.data[i], d = dz.data()[i];
                daf.data()[i] = d * s * (T(1) - t * t);
                dag.data()[i] = d * t * s * (T(1) - s);
            }
            k::outer_acc<T>(gb.filter_cur, x, vf);
            k::outer_acc<T>(gb.filter_past, xp, vf);
            k::outer_acc<T>(gb.filter_cond, hn, vf);
            k::colsum_acc<T>(vec(gb.filter_bias), vf);
            k::outer_acc<T>(gb.gate_cur, x, vg);
            k::outer_acc<T>(gb.gate_past, xp, vg);
            k::outer_acc<T>(gb.gate_cond, hn, vg);
            k::colsum_acc<T>(vec(gb.gate_bias), vg);

            k::add_inplace<T>(din, dout);
            k::matmul_acc<T>(din, vf, w.filter_cur);
            k::matmul_acc<T>(din, vg, w.gate_cur);
            std::fill(dpast.data(), dpast.data() + n * C, T(0));
            k::matmul_acc<T>(vp, vf, w.filter_past);
            k::matmul_acc<T>(vp, vg, w.gate_past);
            k::scatter_past_acc<T>(dx[bi], vp, std::span<const int>(c.delays[bi]).subspan(t0, n), t0);
        }
    }

    // Causal layer.
    T* gcur = g.causal_cur.data();
    T* gpast = g.causal_past.data();
    for (std::size_t t = 0; t < L; ++t) {
        const T a = c.input[t], b = c.input_prev[t];
        const T* d = dx[0].row(t).data();
        for (std::size_t ch = 0; ch < C; ++ch) {
            gcur[ch] += a * d[ch];
            gpast[ch] += b * d[ch];
        }
    }
    k::colsum_acc<T>(vec(g.causal_bias), dx[0]);
}

template <typename T>
ModelParams<T> backward(const ModelParams<T>& p, const ForwardCache<T>& cache, const Tensor<T>& dlogits) {
    ModelParams<T> g = zero_params<T>(p.config);
    g.cond_scale.fill(T(0));
    backward_acc(p, cache, dlogits, g);
    return g;
}

#define QPNET_INSTANTIATE(T)                                                                                     \
    template struct ModelParams<T>;                                                                              \
    template ModelParams<T> zero_params<T>(const NetConfig&);                                                    \
    template ModelParams<T> init_params<T>(const NetConfig&, std::uint64_t);                                     \
    template Tensor<T> pd_dilated_conv<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const int>); \
    template void rows::causal<T>(const ModelParams<T>&, ConstRowsView<T>, ConstRowsView<T>, RowsView<T>);       \
    template void rows::normalize_cond<T>(const ModelParams<T>&, ConstRowsView<T>, RowsView<T>);                 \
    template void rows::block<T>(const ResidualBlock<T>&, ConstRowsView<T>, ConstRowsView<T>, ConstRowsView<T>,  \
                                 RowsView<T>, RowsView<T>, RowsView<T>, RowsView<T>, RowsView<T>);               \
    template void rows::head<T>(const ModelParams<T>&, ConstRowsView<T>, RowsView<T>, RowsView<T>, RowsView<T>,  \
                                RowsView<T>);                                                                    \
    template Tensor<T> forward<T>(const ModelParams<T>&, std::span<const T>, const Tensor<T>&, const DilationPlan&, \
                                  ForwardCache<T>*);                                                             \
    template void backward_acc<T>(const ModelParams<T>&, const ForwardCache<T>&, const Tensor<T>&, ModelParams<T>&); \
    template ModelParams<T> backward<T>(const ModelParams<T>&, const ForwardCache<T>&, const Tensor<T>&);

QPNET_INSTANTIATE(float)
QPNET_INSTANTIATE(double)
QPNET_INSTANTIATE(long double)

#undef QPNET_INSTANTIATE

}  // namespace qpnet
