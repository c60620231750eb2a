#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "qpnet/generate.hpp"
#include "qpnet/net.hpp"
#include "qpnet/reference.hpp"
#include "qpnet/train.hpp"

using namespace qpnet;

namespace {

NetConfig bench_config() {
    NetConfig c = preset_config("tiny-qpnet");
    c.sample_rate = 16000;
    c.aux_dim = 14;
    return c;
}

ConditioningMatrix bench_cond(std::size_t n, std::size_t aux) {
    ConditioningMatrix c(n, aux);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t t = 0; t < n; ++t) {
        c(t, kLogF0Column) = std::log(150.0 + 100.0 * static_cast<double>(t) / static_cast<double>(n));
        c(t, kVoicedColumn) = 1.0;
        for (std::size_t a = kMcepColumn; a < aux; ++a) c(t, a) = g(rng);
    }
    return c;
}

std::vector<float> bench_input(std::size_t n) {
    std::vector<float> x(n);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(-0.5f, 0.5f);
    for (float& v : x) v = u(rng);
    return x;
}

void BM_ReferenceForward(benchmark::State& st) {
    const NetConfig cfg = bench_config();
    const auto p = init_params<float>(cfg, 1);
    const std::size_t n = static_cast<std::size_t>(st.range(0));
    const ConditioningMatrix c = bench_cond(n, 14);
    const DilationPlan plan = build_plan(cfg, c);
    const Tensor<float> cf = c.cast<float>();
    const auto x = bench_input(n);
    for (auto _ : st) benchmark::DoNotOptimize(reference::forward<float>(p, x, cf, plan));
    st.SetItemsProcessed(st.iterations() * static_cast<long>(n));
}

void BM_Forward(benchmark::State& st) {
    const NetConfig cfg = bench_config();
    const auto p = init_params<float>(cfg, 1);
    const std::size_t n = static_cast<std::size_t>(st.range(0));
    const ConditioningMatrix c = bench_cond(n, 14);
    const DilationPlan plan = build_plan(cfg, c);
    const Tensor<float> cf = c.cast<float>();
    const auto x = bench_input(n);
    for (auto _ : st) benchmark::DoNotOptimize(forward<float>(p, x, cf, plan));
    st.SetItemsProcessed(st.iterations() * static_cast<long>(n));
}

void BM_ForwardBackward(benchmark::State& st) {
    const NetConfig cfg = bench_config();
    const auto p = init_params<float>(cfg, 1);
    const std::size_t n = static_cast<std::size_t>(st.range(0));
    const ConditioningMatrix c = bench_cond(n, 14);
    const DilationPlan plan = build_plan(cfg, c);
    const Tensor<float> cf = c.cast<float>();
    const auto x = bench_input(n);
    std::vector<int> y(n);
    for (std::size_t t = 0; t < n; ++t) y[t] = static_cast<int>(t % 256);
    ForwardCache<float> cache;
    Tensor<float> dl;
    for (auto _ : st) {
        const Tensor<float> logits = forward<float>(p, x, cf, plan, &cache);
        cross_entropy<float>(logits, y, &dl);
        benchmark::DoNotOptimize(backward<float>(p, cache, dl));
    }
    st.SetItemsProcessed(st.iterations() * static_cast<long>(n));
}

void BM_IncrementalStep(benchmark::State& st) {
    const NetConfig cfg = bench_config();
    const auto p = init_params<float>(cfg, 1);
    const ConditioningMatrix c = bench_cond(1, 14);
    const DilationPlan plan = build_plan(cfg, c);
    const Tensor<float> cf = c.cast<float>();
    GenState<float> s = make_gen_state(p, 1);
    for (auto _ : st) benchmark::DoNotOptimize(step<float>(s, p, cf.row(0), plan.dilations_at(0)));
    st.SetItemsProcessed(st.iterations());
}

}  // namespace

BENCHMARK(BM_ReferenceForward)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward)->Arg(4000)->Arg(16000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_IncrementalStep)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
