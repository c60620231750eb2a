#include "qpnet/dilation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qpnet {

void NetConfig::validate() const {
    if (fixed_layers < 0 || fixed_repeats < 0 || adaptive_layers < 0 || adaptive_repeats < 0)
        throw std::invalid_argument("net config: negative layer/repeat count");
    if (block_count() < 1) throw std::invalid_argument("net config: need at least one residual block");
    if (residual_channels < 1 || skip_channels < 1) throw std::invalid_argument("net config: channels must be positive");
    if (a < 1) throw std::invalid_argument("net config: a must be >= 1");
    if (sample_rate <= 0) throw std::invalid_argument("net config: sample_rate must be positive");
    if (aux_dim < 2) throw std::invalid_argument("net config: aux_dim must hold at least log-F0 and U/V");
    if (!(f0_floor > 0.0 && f0_floor < f0_ceil)) throw std::invalid_argument("net config: need 0 < f0_floor < f0_ceil");
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"wnf", "wnc", "qpnet", "tiny-qpnet", "tiny-wnc"};
    return names;
}

NetConfig preset_config(std::string_view name) {
    NetConfig c;
    c.preset = std::string(name);
    auto layout = [&](int fl, int fr, int al, int ar) {
        c.fixed_layers = fl;
        c.fixed_repeats = fr;
        c.adaptive_layers = al;
        c.adaptive_repeats = ar;
    };
    auto width = [&](int res, int skip) {
        c.residual_channels = res;
        c.skip_channels = skip;
    };
    if (name == "wnf") {
        layout(10, 3, 0, 0);
        width(512, 256);
    } else if (name == "wnc") {
        layout(4, 4, 0, 0);
        width(512, 256);
    } else if (name == "qpnet") {
        layout(4, 3, 4, 1);
        width(512, 256);
    } else if (name == "tiny-qpnet") {
        layout(4, 3, 4, 1);
        width(32, 16);
    } else if (name == "tiny-wnc") {
        layout(4, 4, 0, 0);
        width(32, 16);
    } else {
        std::string msg = "unknown preset '" + std::string(name) + "'; valid presets:";
        for (const auto& n : preset_names()) msg += " " + n;
        throw std::invalid_argument(msg);
    }
    return c;
}

int dilation_factor(double f0, int sample_rate, int a, double f0_floor, double f0_ceil) {
    if (!(f0 > 0.0)) throw std::domain_error("dilation_factor: F0 must be positive (use continuous F0)");
    const double clipped = std::clamp(f0, f0_floor, f0_ceil);
    // 1e-12 relative slack below the ceiling.
    const double ratio = sample_rate / (clipped * a);
    const double e = std::ceil(ratio * (1.0 - 1e-12));
    return std::max(1, static_cast<int>(e));
}

int dilation_factor(double f0, const NetConfig& cfg) {
    return dilation_factor(f0, cfg.sample_rate, cfg.a, cfg.f0_floor, cfg.f0_ceil);
}

std::vector<int> fixed_schedule(int layers, int repeats) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(std::max(0, layers * repeats)));
    for (int r = 0; r < repeats; ++r)
        for (int k = 0; k < layers; ++k) out.push_back(1 << k);
    return out;
}

std::vector<std::vector<int>> adaptive_schedule(std::span<const int> factors, int layers, int repeats) {
    const std::vector<int> base = fixed_schedule(layers, repeats);
    std::vector<std::vector<int>> out(factors.size());
    for (std::size_t t = 0; t < factors.size(); ++t) {
        if (factors[t] < 1) throw std::domain_error("adaptive_schedule: dilation factor must be >= 1");
        out[t].resize(base.size());
        for (std::size_t k = 0; k < base.size(); ++k) out[t][k] = factors[t] * base[k];
    }
    return out;
}

long receptive_field(const NetConfig& cfg, int factor) {
    if (factor < 1) throw std::domain_error("receptive_field: factor must be >= 1");
    const long fixed = static_cast<long>(cfg.fixed_repeats) * ((1L << cfg.fixed_layers) - 1);
    const long adaptive = static_cast<long>(cfg.adaptive_repeats) * factor * ((1L << cfg.adaptive_layers) - 1);
    return 1 + fixed + adaptive;
}

int max_dilation(const NetConfig& cfg, int block) {
    if (!cfg.is_adaptive(block)) return 1 << (block % std::max(1, cfg.fixed_layers));
    const int k = block - cfg.fixed_blocks();
    return dilation_factor(cfg.f0_floor, cfg) << (k % cfg.adaptive_layers);
}

std::vector<int> DilationPlan::dilations_at(std::size_t t) const {
    std::vector<int> out(static_cast<std::size_t>(block_count()));
    for (int b = 0; b < block_count(); ++b) out[static_cast<std::size_t>(b)] = delays[static_cast<std::size_t>(b) * length() + t];
    return out;
}

DilationPlan DilationPlan::slice(std::size_t start, std::size_t count) const {
    if (start + count > length()) throw std::out_of_range("DilationPlan::slice past end");
    DilationPlan out;
    out.fixed_dilations = fixed_dilations;
    out.adaptive_layers = adaptive_layers;
    out.adaptive_blocks = adaptive_blocks;
    out.factors.assign(factors.begin() + static_cast<long>(start), factors.begin() + static_cast<long>(start + count));
    out.delays.resize(static_cast<std::size_t>(block_count()) * count);
    for (int b = 0; b < block_count(); ++b) {
        const auto src = block_delays(b);
        std::copy(src.begin() + static_cast<long>(start), src.begin() + static_cast<long>(start + count),
                  out.delays.begin() + static_cast<long>(static_cast<std::size_t>(b) * count));
    }
    return out;
}

DilationPlan plan_from_factors(const NetConfig& cfg, std::vector<int> factors) {
    DilationPlan plan;
    plan.fixed_dilations = fixed_schedule(cfg.fixed_layers, cfg.fixed_repeats);
    plan.adaptive_layers = cfg.adaptive_layers;
    plan.adaptive_blocks = cfg.adaptive_blocks();
    plan.factors = std::move(factors);
    const std::size_t T = plan.length();
    plan.delays.resize(static_cast<std::size_t>(plan.block_count()) * T);
    for (std::size_t b = 0; b < plan.fixed_dilations.size(); ++b)
        std::fill_n(plan.delays.begin() + static_cast<long>(b * T), T, plan.fixed_dilations[b]);
    const std::vector<int> base = fixed_schedule(cfg.adaptive_layers, cfg.adaptive_repeats);
    for (std::size_t k = 0; k < base.size(); ++k) {
        int* row = plan.delays.data() + (plan.fixed_dilations.size() + k) * T;
        for (std::size_t t = 0; t < T; ++t) {
            if (plan.factors[t] < 1) throw std::domain_error("plan: dilation factor must be >= 1");
            row[t] = plan.factors[t] * base[k];
        }
    }
    return plan;
}

DilationPlan build_plan(const NetConfig& cfg, const ConditioningMatrix& cond) {
    if (cond.cols() <= kLogF0Column) throw std::invalid_argument("build_plan: conditioning has no log-F0 column");
    std::vector<int> factors(cond.rows());
    for (std::size_t t = 0; t < cond.rows(); ++t) factors[t] = dilation_factor(std::exp(cond(t, kLogF0Column)), cfg);
    return plan_from_factors(cfg, std::move(factors));
}

}  // namespace qpnet
