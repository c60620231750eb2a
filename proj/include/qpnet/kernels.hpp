#pragma once

// Dense row kernels shared by the batched forward/backward pass and the
// incremental sampler. Every kernel computes each output row with the same
// fixed operation order whether it is handed one row or thousands, so a
// one-row call inside the sampler reproduces the batched result bit-for-bit.
// Work is split across OpenMP threads by output row (or by weight row for
// gradient reductions); the per-element summation order never depends on the
// thread count.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <span>
#include <type_traits>

#include "qpnet/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qpnet::kernels {

// Below this many rows the OpenMP region costs more than it saves.
inline constexpr std::size_t kParallelRows = 64;

// Output columns held in registers by matmul_acc.
inline constexpr std::size_t kTile = 16;

// f(t) for t in [0, rows); a serial loop below the threshold so one-row calls
// never enter the OpenMP runtime.
template <typename F>
void parallel_rows(std::size_t rows, F&& f) {
    const long n = static_cast<long>(rows);
    if (rows >= kParallelRows) {
#pragma omp parallel for schedule(static)
        for (long t = 0; t < n; ++t) f(static_cast<std::size_t>(t));
    } else {
        for (long t = 0; t < n; ++t) f(static_cast<std::size_t>(t));
    }
}

// Rows sharing one pass over W in matmul_acc, and rows of dW per pass in outer_acc.
inline constexpr std::size_t kRowBlock = 4;

namespace detail {

template <typename T>
inline constexpr bool kVectorTile = std::is_same_v<T, float> || std::is_same_v<T, double>;

// kTile lanes of T.
template <typename T>
struct TileOf;
template <>
struct TileOf<float> {
    typedef float type __attribute__((vector_size(kTile * sizeof(float))));
};
template <>
struct TileOf<double> {
    typedef double type __attribute__((vector_size(kTile * sizeof(double))));
};
template <typename T>
using Tile = typename TileOf<T>::type;

template <typename T>
Tile<T> load_tile(const T* p) {
    Tile<T> v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

template <typename T>
void store_tile(T* p, const Tile<T>& v) {
    std::memcpy(p, &v, sizeof v);
}

// Y[r0 + r] += X[r0 + r] · W for r < R; every element sums over i in increasing order.
template <std::size_t R, typename T>
void matmul_rows(RowsView<T> y, ConstRowsView<T> x, const T* __restrict wd, std::size_t n_in, std::size_t n_out,
                 std::size_t r0) {
    std::size_t o0 = 0;
    if constexpr (kVectorTile<T>) {
        for (; o0 + kTile <= n_out; o0 += kTile) {
            Tile<T> acc[R];
#pragma GCC unroll 8
            for (std::size_t r = 0; r < R; ++r) acc[r] = load_tile(y.row(r0 + r) + o0);
            for (std::size_t i = 0; i < n_in; ++i) {
                const Tile<T> w = load_tile(wd + i * n_out + o0);
#pragma GCC unroll 8
                for (std::size_t r = 0; r < R; ++r) acc[r] += x.row(r0 + r)[i] * w;
            }
#pragma GCC unroll 8
            for (std::size_t r = 0; r < R; ++r) store_tile(y.row(r0 + r) + o0, acc[r]);
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        T* __restrict yr = y.row(r0 + r);
        const T* __restrict xr = x.row(r0 + r);
        for (std::size_t i = 0; i < n_in; ++i)
            for (std::size_t o = o0; o < n_out; ++o) yr[o] += xr[i] * wd[i * n_out + o];
    }
}

// dW[i0 + j] += Σ_{t0 ≤ t < t1} X[t][i0 + j] · dY[t] for j < R, t increasing.
template <std::size_t R, typename T>
void outer_rows(T* __restrict dwd, ConstRowsView<T> x, ConstRowsView<T> dy, std::size_t n_out, std::size_t i0,
                std::size_t t0, std::size_t t1) {
    std::size_t o0 = 0;
    if constexpr (kVectorTile<T>) {
        for (; o0 + kTile <= n_out; o0 += kTile) {
            Tile<T> acc[R];
#pragma GCC unroll 8
            for (std::size_t j = 0; j < R; ++j) acc[j] = load_tile(dwd + (i0 + j) * n_out + o0);
            for (std::size_t t = t0; t < t1; ++t) {
                const Tile<T> g = load_tile(dy.row(t) + o0);
                const T* xr = x.row(t) + i0;
#pragma GCC unroll 8
                for (std::size_t j = 0; j < R; ++j) acc[j] += xr[j] * g;
            }
#pragma GCC unroll 8
            for (std::size_t j = 0; j < R; ++j) store_tile(dwd + (i0 + j) * n_out + o0, acc[j]);
        }
    }
    for (std::size_t j = 0; j < R; ++j) {
        T* __restrict wr = dwd + (i0 + j) * n_out;
        for (std::size_t t = t0; t < t1; ++t) {
            const T xi = x.row(t)[i0 + j];
            const T* __restrict gr = dy.row(t);
            for (std::size_t o = o0; o < n_out; ++o) wr[o] += xi * gr[o];
        }
    }
}

}  // namespace detail

// Y[t] += X[t] · W, with W stored fan_in × fan_out.
template <typename T>
void matmul_acc(RowsView<T> y, ConstRowsView<T> x, const Tensor<T>& w) {
    const std::size_t n_in = w.rows();
    const std::size_t n_out = w.cols();
    const T* wd = w.data();
    const std::size_t groups = y.rows / kRowBlock;
    parallel_rows(groups, [&](std::size_t gi) { detail::matmul_rows<kRowBlock>(y, x, wd, n_in, n_out, gi * kRowBlock); });
    for (std::size_t r = groups * kRowBlock; r < y.rows; ++r) detail::matmul_rows<1>(y, x, wd, n_in, n_out, r);
}

// Y[t] = b for every row.
template <typename T>
void set_rows(RowsView<T> y, std::span<const T> b) {
    for (std::size_t t = 0; t < y.rows; ++t) std::copy(b.begin(), b.end(), y.row(t));
}

// Y[t] += b for every row.
template <typename T>
void add_rows(RowsView<T> y, std::span<const T> b) {
    for (std::size_t t = 0; t < y.rows; ++t) {
        T* yr = y.row(t);
        for (std::size_t o = 0; o < y.cols; ++o) yr[o] += b[o];
    }
}

// Y += X elementwise.
template <typename T>
void add_inplace(RowsView<T> y, ConstRowsView<T> x) {
    const std::size_t n = y.rows * y.cols;
    T* __restrict yd = y.data;
    const T* __restrict xd = x.data;
    for (std::size_t i = 0; i < n; ++i) yd[i] += xd[i];
}

// out[t] = x[first + t - delay[t]] (zero row when the index is negative);
// `first` is the absolute time of out's first row.
template <typename T>
void gather_past(RowsView<T> out, ConstRowsView<T> x, std::span<const int> delay, std::size_t first = 0) {
    parallel_rows(out.rows, [&](std::size_t t) {
        const long src = static_cast<long>(first + t) - delay[t];
        T* o = out.row(t);
        if (src < 0) {
            std::fill(o, o + out.cols, T(0));
        } else {
            const T* s = x.row(static_cast<std::size_t>(src));
            std::copy(s, s + out.cols, o);
        }
    });
}

// dx[first + t - delay[t]] += g[t]; serial so colliding targets sum in increasing t.
template <typename T>
void scatter_past_acc(RowsView<T> dx, ConstRowsView<T> g, std::span<const int> delay, std::size_t first = 0) {
    for (std::size_t t = 0; t < g.rows; ++t) {
        const long dst = static_cast<long>(first + t) - delay[t];
        if (dst < 0) continue;
        T* d = dx.row(static_cast<std::size_t>(dst));
        const T* s = g.row(t);
        for (std::size_t c = 0; c < g.cols; ++c) d[c] += s[c];
    }
}

// dW += Xᵀ · dY. Threads own disjoint rows of dW; each element sums over t
// in increasing order.
template <typename T>
void outer_acc(Tensor<T>& dw, ConstRowsView<T> x, ConstRowsView<T> dy) {
    const std::size_t n_in = dw.rows();
    const std::size_t n_out = dw.cols();
    T* __restrict dwd = dw.data();
#pragma omp parallel if (x.rows * n_in >= 4096)
    {
        std::size_t lo = 0, hi = n_in;
#ifdef _OPENMP
        const std::size_t nt = static_cast<std::size_t>(omp_get_num_threads());
        const std::size_t id = static_cast<std::size_t>(omp_get_thread_num());
        lo = n_in * id / nt;
        hi = n_in * (id + 1) / nt;
#endif
        constexpr std::size_t kChunk = 128;
        for (std::size_t t0 = 0; t0 < x.rows; t0 += kChunk) {
            const std::size_t t1 = std::min(x.rows, t0 + kChunk);
            std::size_t i = lo;
            for (; i + kRowBlock <= hi; i += kRowBlock) detail::outer_rows<kRowBlock>(dwd, x, dy, n_out, i, t0, t1);
            for (; i < hi; ++i) detail::outer_rows<1>(dwd, x, dy, n_out, i, t0, t1);
        }
    }
}

// db += Σ_t dY[t].
template <typename T>
void colsum_acc(std::span<T> db, ConstRowsView<T> dy) {
    for (std::size_t t = 0; t < dy.rows; ++t) {
        const T* gr = dy.row(t);
        for (std::size_t o = 0; o < dy.cols; ++o) db[o] += gr[o];
    }
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& w) {
    Tensor<T> out(w.cols(), w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t o = 0; o < w.cols(); ++o) out(o, i) = w(i, o);
    return out;
}

}  // namespace qpnet::kernels
