#include <doctest.h>
#include <omp.h>

#include <cmath>

#include "helpers.hpp"
#include "qpnet/net.hpp"
#include "qpnet/reference.hpp"
#include "qpnet/train.hpp"

using namespace qpnet;
using namespace qpnet::testing;

namespace {

template <typename T>
Tensor<T> cond_as(const ConditioningMatrix& c) {
    return c.template cast<T>();
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("gated unit values") {
    CHECK(gated_unit(0.0, 0.0) == 0.0);
    CHECK(gated_unit(1.0, 0.0) == doctest::Approx(0.380797078).epsilon(1e-8));
    CHECK(std::fabs(gated_unit(20.0, 20.0) - 1.0) < 1e-6);
}

TEST_CASE("pitch-dependent dilated convolution, scalar channel") {
    Tensor<double> x(4, 1);
    for (int i = 0; i < 4; ++i) x(static_cast<std::size_t>(i), 0) = i + 1.0;
    const Tensor<double> w(1, 1, 1.0);
    const std::vector<int> d = {1, 1, 2, 3};
    const Tensor<double> y = pd_dilated_conv(x, w, w, d);
    CHECK(y(0, 0) == 1.0);
    CHECK(y(1, 0) == 3.0);
    CHECK(y(2, 0) == 4.0);
    CHECK(y(3, 0) == 5.0);

    Tensor<double> x2(6, 1);
    for (int i = 0; i < 6; ++i) x2(static_cast<std::size_t>(i), 0) = i * i;
    const std::vector<int> two(6, 2);
    const Tensor<double> y2 = pd_dilated_conv(x2, w, Tensor<double>(1, 1, 0.5), two);
    for (std::size_t t = 0; t < 6; ++t) CHECK(y2(t, 0) == x2(t, 0) + (t >= 2 ? 0.5 * x2(t - 2, 0) : 0.0));
    const std::vector<int> zero = {0, 1, 1, 1};
    CHECK_THROWS(pd_dilated_conv(x, w, w, zero));
}

TEST_CASE("parameter count closed form") {
    auto count = [](std::size_t C, std::size_t S, std::size_t A, std::size_t B) {
        return 3 * C + B * (2 * (2 * C * C + A * C + C) + C * C + C + C * S + S) + S * S + S + S * 256 + 256;
    };
    NetConfig tq = preset_config("tiny-qpnet");
    CHECK(zero_params<float>(tq).parameter_count() == count(32, 16, 14, 16));
    CHECK(count(32, 16, 14, 16) == 110960);
    const NetConfig s = small_config();
    CHECK(zero_params<double>(s).parameter_count() == count(8, 8, 4, 4));
}

TEST_CASE("initialisation is seeded and leaves biases at zero") {
    const NetConfig cfg = small_config();
    const auto a = init_params<float>(cfg, 5);
    CHECK(a == init_params<float>(cfg, 5));
    CHECK_FALSE(a == init_params<float>(cfg, 6));
    for (const auto& [name, t] : a.named_tensors())
        if (name.ends_with("_bias"))
            for (float v : t->flat()) CHECK(v == 0.0f);
    CHECK(a.trainable().size() + 2 == a.named_tensors().size());
}

TEST_CASE("batched forward agrees with the naive reference") {
    for (int adaptive : {0, 2}) {
        CAPTURE(adaptive);
        const NetConfig cfg = small_config(3, adaptive, 8);
        const auto pd = random_params<double>(cfg, 11);
        const ConditioningMatrix c = glide_conditioning(300, 4, 60.0, 700.0, 2);
        const DilationPlan plan = build_plan(cfg, c);
        const auto x = random_input<double>(300, 3);
        const Tensor<double> fast = forward<double>(pd, x, c, plan);
        const Tensor<double> ref = reference::forward<double>(pd, x, c, plan);
        CHECK(fast.rows() == 300);
        CHECK(fast.cols() == 256);
        CHECK(max_abs_diff(fast, ref) < 1e-12);

        const auto pf = pd.cast<float>();
        const auto xf = random_input<float>(300, 3);
        CHECK(max_abs_diff(forward<float>(pf, xf, cond_as<float>(c), plan),
                           reference::forward<float>(pf, xf, cond_as<float>(c), plan)) < 1e-4);
    }
}

TEST_CASE("forward is independent of the thread count") {
    const NetConfig cfg = small_config(2, 2, 16);
    const auto p = random_params<float>(cfg, 4);
    const ConditioningMatrix c = glide_conditioning(700, 4, 80.0, 300.0, 9);
    const DilationPlan plan = build_plan(cfg, c);
    const auto x = random_input<float>(700, 1);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const Tensor<float> one = forward<float>(p, x, cond_as<float>(c), plan);
    omp_set_num_threads(4);
    const Tensor<float> four = forward<float>(p, x, cond_as<float>(c), plan);
    omp_set_num_threads(saved);
    CHECK(one == four);
}

TEST_CASE("softmax rows normalise") {
    const NetConfig cfg = small_config();
    const auto p = random_params<float>(cfg, 2);
    const ConditioningMatrix c = glide_conditioning(50, 4, 100.0, 100.0, 1);
    const Tensor<float> logits = forward<float>(p, random_input<float>(50, 1), cond_as<float>(c), build_plan(cfg, c));
    for (std::size_t t = 0; t < 50; ++t) {
        double z = 0.0;
        for (float v : logits.row(t)) z += std::exp(static_cast<double>(v));
        double s = 0.0;
        for (float v : logits.row(t)) s += std::exp(static_cast<double>(v)) / z;
        CHECK(std::fabs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("forward rejects mismatched lengths") {
    const NetConfig cfg = small_config();
    const auto p = random_params<double>(cfg, 2);
    const ConditioningMatrix c = glide_conditioning(50, 4, 100.0, 100.0, 1);
    const DilationPlan plan = build_plan(cfg, c);
    CHECK_THROWS_AS(forward<double>(p, random_input<double>(49, 1), c, plan), std::invalid_argument);
    CHECK_THROWS_AS(forward<double>(p, random_input<double>(50, 1), c, plan.slice(0, 40)), std::invalid_argument);
    CHECK_THROWS_AS(forward<double>(p, random_input<double>(50, 1), ConditioningMatrix(50, 3), plan),
                    std::invalid_argument);
}

TEST_CASE("causality under single-sample perturbation") {
    const NetConfig cfg = small_config();
    const auto p = random_params<double>(cfg, 8);
    const ConditioningMatrix c = glide_conditioning(120, 4, 70.0, 500.0, 4);
    const DilationPlan plan = build_plan(cfg, c);
    const auto x = random_input<double>(120, 5);
    const Tensor<double> base = forward<double>(p, x, c, plan);
    for (std::size_t t0 : {1u, 37u, 90u, 119u}) {
        auto xp = x;
        xp[t0] += 0.25;
        const Tensor<double> pert = forward<double>(p, xp, c, plan);
        for (std::size_t t = 0; t < t0; ++t)
            for (std::size_t k = 0; k < 256; ++k) REQUIRE(pert(t, k) == base(t, k));
        CHECK(pert.row(t0)[0] != base.row(t0)[0]);

        ConditioningMatrix cp = c;
        cp(t0, kMcepColumn) += 0.5;
        const Tensor<double> pc = forward<double>(p, x, cp, plan);
        for (std::size_t t = 0; t < t0; ++t)
            for (std::size_t k = 0; k < 256; ++k) REQUIRE(pc(t, k) == base(t, k));
        CHECK(pc.row(t0)[0] != base.row(t0)[0]);
    }
}

TEST_CASE("receptive field is exact at constant F0") {
    for (double f0 : {500.0, 250.0, 1000.0}) {
        CAPTURE(f0);
        const NetConfig cfg = small_config();
        const auto p = random_params<double>(cfg, 13);
        const ConditioningMatrix c = glide_conditioning(160, 4, f0, f0, 6);
        const DilationPlan plan = build_plan(cfg, c);
        const long rf = receptive_field(cfg, plan.factors[0]);
        const auto x = random_input<double>(160, 7);
        const Tensor<double> base = forward<double>(p, x, c, plan);
        const std::size_t t = 150;

        auto inside = x;
        inside[t - static_cast<std::size_t>(rf)] += 0.5;
        CHECK(max_abs_diff(forward<double>(p, inside, c, plan), base) > 0.0);
        bool changed = false;
        const Tensor<double> in_logits = forward<double>(p, inside, c, plan);
        for (std::size_t k = 0; k < 256; ++k) changed |= in_logits(t, k) != base(t, k);
        CHECK(changed);

        auto outside = x;
        outside[t - static_cast<std::size_t>(rf) - 1] += 0.5;
        const Tensor<double> out_logits = forward<double>(p, outside, c, plan);
        for (std::size_t k = 0; k < 256; ++k) REQUIRE(out_logits(t, k) == base(t, k));
    }
}

TEST_CASE("adaptive blocks at E = 1 reduce to fixed doubling blocks") {
    NetConfig a = small_config(2, 2, 8);
    NetConfig f = small_config(2, 0, 8);
    f.fixed_repeats = 2;
    const auto pa = random_params<double>(a, 21);
    auto pf = zero_params<double>(f);
    auto src = pa.named_tensors();
    auto dst = pf.named_tensors();
    REQUIRE(src.size() == dst.size());
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = *src[i].second;

    const std::size_t n = 90;
    const ConditioningMatrix c = glide_conditioning(n, 4, 120.0, 300.0, 3);
    const auto x = random_input<double>(n, 4);
    const Tensor<double> la = forward<double>(pa, x, c, plan_from_factors(a, std::vector<int>(n, 1)));
    const Tensor<double> lf = forward<double>(pf, x, c, plan_from_factors(f, std::vector<int>(n, 1)));
    CHECK(la == lf);
}

TEST_CASE("gradients match central finite differences") {
    const NetConfig cfg = small_config(2, 2, 8);
    const auto p = random_params<double>(cfg, 17, 0.3);
    const std::size_t T = 64;
    const ConditioningMatrix c = glide_conditioning(T, 4, 180.0, 90.0, 5);
    const DilationPlan plan = build_plan(cfg, c);
    const auto x = random_input<double>(T, 6);
    const auto y = random_targets(T, 7);
    const GradientReport r = gradient_check(p, x, c, plan, y, 1e-4);
    for (const auto& f : r.failures) FAIL_CHECK(f.name << "[" << f.index << "] analytic " << f.analytic << " numeric " << f.numeric);
    CHECK(r.checked == p.parameter_count());
    MESSAGE("worst relative error " << r.worst << " over " << r.checked << " parameters");
}

TEST_CASE("backward edge cases") {
    const NetConfig cfg = small_config();
    const auto p = random_params<double>(cfg, 3);
    const ConditioningMatrix c = glide_conditioning(40, 4, 100.0, 200.0, 1);
    const DilationPlan plan = build_plan(cfg, c);
    const auto x = random_input<double>(40, 2);
    ForwardCache<double> cache;
    forward<double>(p, x, c, plan, &cache);

    const ModelParams<double> g0 = backward<double>(p, cache, Tensor<double>(40, 256));
    for (const auto* t : g0.trainable())
        for (double v : t->flat()) REQUIRE(v == 0.0);

    Tensor<double> dl(40, 256);
    std::mt19937_64 rng(1);
    for (double& v : dl.flat()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    CHECK(backward<double>(p, cache, dl) == backward<double>(p, cache, dl));

    CHECK_THROWS_AS(backward<double>(p, ForwardCache<double>{}, dl), std::logic_error);
    CHECK_THROWS_AS(backward<double>(p, cache, Tensor<double>(39, 256)), std::logic_error);
}

}
