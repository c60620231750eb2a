#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "qpnet/dilation.hpp"
#include "qpnet/features.hpp"
#include "qpnet/net.hpp"
#include "qpnet/reference.hpp"
#include "qpnet/train.hpp"

namespace qpnet::testing {

// Small two-by-two network used across the net/generate/train tests.
inline NetConfig small_config(int fixed_layers = 2, int adaptive_layers = 2, int channels = 8) {
    NetConfig c;
    c.preset = "test";
    c.fixed_layers = fixed_layers;
    c.fixed_repeats = 1;
    c.adaptive_layers = adaptive_layers;
    c.adaptive_repeats = adaptive_layers > 0 ? 1 : 0;
    c.residual_channels = channels;
    c.skip_channels = channels;
    c.a = 8;
    c.sample_rate = 16000;
    c.aux_dim = 4;
    c.f0_floor = 40.0;
    c.f0_ceil = 800.0;
    return c;
}

// Random weights with non-zero biases and a non-trivial conditioning map.
template <typename T>
ModelParams<T> random_params(const NetConfig& cfg, std::uint64_t seed, double bias_scale = 0.1) {
    ModelParams<T> p = init_params<T>(cfg, seed);
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-bias_scale, bias_scale);
    for (auto& [name, t] : p.named_tensors())
        if (name.ends_with("_bias"))
            for (T& v : t->flat()) v = static_cast<T>(u(rng));
    for (std::size_t a = 0; a < p.cond_shift.cols(); ++a) {
        p.cond_shift(0, a) = static_cast<T>(0.1 * static_cast<double>(a));
        p.cond_scale(0, a) = static_cast<T>(0.5 + 0.25 * static_cast<double>(a));
    }
    return p;
}

// Per-sample conditioning whose log-F0 column follows a log-linear glide.
inline ConditioningMatrix glide_conditioning(std::size_t n, std::size_t aux_dim, double f0_start, double f0_end,
                                             std::uint64_t seed) {
    ConditioningMatrix c(n, aux_dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t t = 0; t < n; ++t) {
        const double frac = n > 1 ? static_cast<double>(t) / static_cast<double>(n - 1) : 0.0;
        c(t, kLogF0Column) = std::log(f0_start) + frac * (std::log(f0_end) - std::log(f0_start));
        if (aux_dim > kVoicedColumn) c(t, kVoicedColumn) = 1.0;
        for (std::size_t a = kMcepColumn; a < aux_dim; ++a) c(t, a) = 0.3 * g(rng);
    }
    return c;
}

template <typename T>
std::vector<T> random_input(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    std::vector<T> x(n);
    x[0] = T(0);
    for (std::size_t t = 1; t < n; ++t) x[t] = static_cast<T>(u(rng));
    return x;
}

inline std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("qpnet_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

inline std::vector<int> random_targets(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng() % 256);
    return y;
}

struct GradientMismatch {
    std::string name;
    std::size_t index;
    double analytic, numeric;
};

struct GradientReport {
    double worst = 0.0;
    std::size_t checked = 0;
    std::vector<GradientMismatch> failures;
};

// Every trainable weight of a double-precision model against central
// differences of the summed cross-entropy. The numeric side runs the serial
// reference pass in extended precision.
inline GradientReport gradient_check(const ModelParams<double>& p, const std::vector<double>& x,
                                     const ConditioningMatrix& c, const DilationPlan& plan, const std::vector<int>& y,
                                     double tolerance) {
    const std::size_t T = x.size();
    ForwardCache<double> cache;
    const Tensor<double> logits = forward<double>(p, x, c, plan, &cache);
    Tensor<double> dl;
    cross_entropy<double>(logits, y, &dl, static_cast<double>(T));
    const ModelParams<double> g = backward<double>(p, cache, dl);

    std::vector<long double> xl(x.begin(), x.end());
    const Tensor<long double> cl = c.cast<long double>();
    auto loss = [&](const ModelParams<long double>& q) {
        const Tensor<long double> z = reference::forward<long double>(q, xl, cl, plan);
        long double total = 0.0L;
        for (std::size_t t = 0; t < T; ++t) {
            long double m = z(t, 0);
            for (std::size_t k = 1; k < z.cols(); ++k) m = std::max(m, z(t, k));
            long double s = 0.0L;
            for (std::size_t k = 0; k < z.cols(); ++k) s += std::exp(z(t, k) - m);
            total += m + std::log(s) - z(t, static_cast<std::size_t>(y[t]));
        }
        return total;
    };

    GradientReport r;
    auto pl = p.cast<long double>();
    auto params = pl.named_tensors();
    const auto grads = g.named_tensors();
    const long double h = 1e-5L;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].first.starts_with("cond_")) continue;
        Tensor<long double>& w = *params[i].second;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const long double saved = w.data()[j];
            w.data()[j] = saved + h;
            const long double up = loss(pl);
            w.data()[j] = saved - h;
            const long double down = loss(pl);
            w.data()[j] = saved;
            const double num = static_cast<double>((up - down) / (2.0L * h));
            const double ana = grads[i].second->data()[j];
            const double rel = std::fabs(num - ana) / std::max({std::fabs(num), std::fabs(ana), 1e-6});
            r.worst = std::max(r.worst, rel);
            if (rel > tolerance) r.failures.push_back({params[i].first, j, ana, num});
            ++r.checked;
        }
    }
    return r;
}

}  // namespace qpnet::testing
