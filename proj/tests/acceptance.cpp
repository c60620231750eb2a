// Acceptance checks: `acceptance N` runs one criterion, no argument runs all.
// Each prints one line "criterion N: PASS|FAIL (detail)".

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>

#include "helpers.hpp"
#include "qpnet/checkpoint.hpp"
#include "qpnet/cli.hpp"
#include "qpnet/dilation.hpp"
#include "qpnet/eval.hpp"
#include "qpnet/generate.hpp"
#include "qpnet/signal.hpp"

using namespace qpnet;
using namespace qpnet::testing;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    if (run_cli(args, out, err) != 0) throw std::runtime_error(args.front() + " failed: " + err.str());
    return out.str();
}

bool has_row(const std::string& table, const std::vector<std::string>& fields) {
    std::istringstream lines(table);
    for (std::string line; std::getline(lines, line);) {
        std::istringstream words(line);
        std::vector<std::string> got{std::istream_iterator<std::string>(words), std::istream_iterator<std::string>()};
        if (got == fields) return true;
    }
    return false;
}

NetConfig tiny_at_16k(const std::string& preset) {
    NetConfig c = preset_config(preset);
    c.sample_rate = 16000;
    c.aux_dim = 14;
    return c;
}

// ---------------------------------------------------------------------------

Outcome receptive_fields() {
    const auto t0 = Clock::now();
    const NetConfig q = preset_config("qpnet");
    const int e50 = dilation_factor(50.0, q);
    const int e500 = dilation_factor(500.0, q);
    const long wnf = receptive_field(preset_config("wnf"), 1);
    const long wnc = receptive_field(preset_config("wnc"), 1);
    const long q50 = receptive_field(q, e50);
    const long q500 = receptive_field(q, e500);
    const std::string all = cli({"rf-analyze"});
    const std::string at50 = cli({"rf-analyze", "--preset", "qpnet", "--f0", "50"});
    const std::string at500 = cli({"rf-analyze", "--preset", "qpnet", "--f0", "500"});
    const double secs = seconds_since(t0);
    const bool printed = has_row(all, {"wnf", "-", "-", "3070"}) && has_row(all, {"wnc", "-", "-", "61"}) &&
                         has_row(at50, {"qpnet", "50", "56", "886"}) && has_row(at500, {"qpnet", "500", "6", "136"});
    std::ostringstream d;
    d << "WNf " << wnf << ", WNc " << wnc << ", QPNet@50Hz " << q50 << " (E=" << e50 << "), QPNet@500Hz " << q500
      << "; cli " << (printed ? "agrees" : "disagrees") << "; " << secs << " s";
    return {wnf == 3070 && wnc == 61 && q50 == 886 && q500 == 136 && e50 == 56 && printed && secs < 1.0, d.str()};
}

Outcome schedules() {
    const auto f = fixed_schedule(10, 3);
    long first_repeat = 0;
    for (int i = 0; i < 10; ++i) first_repeat += f[static_cast<std::size_t>(i)];
    bool repeats_equal = f.size() == 30;
    for (std::size_t i = 10; i < f.size() && repeats_equal; ++i) repeats_equal = f[i] == f[i - 10];
    long wnc_total = 0;
    for (int d : fixed_schedule(4, 4)) wnc_total += d;

    const NetConfig q = preset_config("qpnet");
    bool adaptive_ok = true;
    for (int e : {1, 6, 28, 56, 69}) {
        const std::vector<int> factors = {e};
        const auto sched = adaptive_schedule(factors, q.adaptive_layers, q.adaptive_repeats);
        long sum = 0;
        for (int d : sched[0]) sum += d;
        adaptive_ok &= sum == 15L * e;
    }
    std::ostringstream d;
    d << "fixed(10,3) per repeat " << first_repeat << ", fixed(4,4) total " << wnc_total << ", adaptive sum "
      << (adaptive_ok ? "= 15E" : "!= 15E");
    return {first_repeat == 1023 && repeats_equal && wnc_total == 60 && adaptive_ok, d.str()};
}

Outcome gradients() {
    const auto t0 = Clock::now();
    const NetConfig cfg = small_config(2, 2, 8);
    const auto p = random_params<double>(cfg, 17, 0.3);
    const std::size_t T = 64;
    const ConditioningMatrix c = glide_conditioning(T, 4, 180.0, 90.0, 5);
    const DilationPlan plan = build_plan(cfg, c);
    const GradientReport r = gradient_check(p, random_input<double>(T, 6), c, plan, random_targets(T, 7), 1e-4);
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << r.checked << " parameters, worst relative error " << r.worst << ", " << r.failures.size()
      << " above 1e-4; " << secs << " s";
    return {r.failures.empty() && r.checked == p.parameter_count() && secs < 60.0, d.str()};
}

Outcome incremental_equivalence() {
    const auto t0 = Clock::now();
    const NetConfig cfg = tiny_at_16k("tiny-qpnet");
    const std::size_t n = 2000;
    const ConditioningMatrix c = glide_conditioning(n, 14, 80.0, 400.0, 4);
    const DilationPlan plan = build_plan(cfg, c);
    const auto p = random_params<float>(cfg, 11);
    Tensor<float> inc;
    const GenerateResult g = generate<float>(p, c, plan, GenerateMode::Sample, 3, &inc);
    std::vector<float> fed(n, 0.0f);
    for (std::size_t t = 1; t < n; ++t) fed[t] = static_cast<float>(mulaw_decode(g.codes[t - 1]));
    const Tensor<float> batched = forward<float>(p, fed, c.cast<float>(), plan);
    const double diff = max_abs_diff(inc, batched);
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "E from " << plan.factors.front() << " to " << plan.factors.back() << ", max |logit diff| " << diff << "; "
      << secs << " s";
    return {diff <= 1e-5 && plan.factors.front() > plan.factors.back() && secs < 120.0, d.str()};
}

Outcome causality() {
    const auto t0 = Clock::now();
    const NetConfig cfg = tiny_at_16k("tiny-qpnet");
    const auto p = random_params<double>(cfg, 8);
    bool ok = true;

    const std::size_t n = 600;
    const ConditioningMatrix c = glide_conditioning(n, 14, 70.0, 500.0, 4);
    const DilationPlan plan = build_plan(cfg, c);
    const auto x = random_input<double>(n, 5);
    const Tensor<double> base = forward<double>(p, x, c, plan);
    int probes = 0;
    for (std::size_t at : {1u, 150u, 377u, 599u}) {
        auto xp = x;
        xp[at] += 0.25;
        ConditioningMatrix cp = c;
        cp(at, kMcepColumn) += 0.5;
        const Tensor<double> a = forward<double>(p, xp, c, plan);
        const Tensor<double> b = forward<double>(p, x, cp, plan);
        for (std::size_t t = 0; t < at; ++t)
            for (std::size_t k = 0; k < 256; ++k) ok &= a(t, k) == base(t, k) && b(t, k) == base(t, k);
        ok &= a(at, 0) != base(at, 0) && b(at, 0) != base(at, 0);
        ++probes;
    }

    std::ostringstream d;
    d << probes << " causal probes";
    for (double f0 : {250.0, 500.0, 100.0}) {
        const std::size_t len = 700;
        const ConditioningMatrix cc = glide_conditioning(len, 14, f0, f0, 6);
        const DilationPlan pl = build_plan(cfg, cc);
        const long rf = receptive_field(cfg, pl.factors[0]);
        const auto xx = random_input<double>(len, 7);
        const Tensor<double> ref = forward<double>(p, xx, cc, pl);
        const std::size_t t = len - 1;
        auto inside = xx, outside = xx;
        inside[t - static_cast<std::size_t>(rf)] += 0.5;
        outside[t - static_cast<std::size_t>(rf) - 1] += 0.5;
        const Tensor<double> li = forward<double>(p, inside, cc, pl);
        const Tensor<double> lo = forward<double>(p, outside, cc, pl);
        bool changed = false, unchanged = true;
        for (std::size_t k = 0; k < 256; ++k) {
            changed |= li(t, k) != ref(t, k);
            unchanged &= lo(t, k) == ref(t, k);
        }
        ok &= changed && unchanged;
        d << "; rf " << rf << " at " << f0 << " Hz " << (changed && unchanged ? "exact" : "wrong");
    }
    const double secs = seconds_since(t0);
    d << "; " << secs << " s";
    return {ok && secs < 60.0, d.str()};
}

FrameTrack flat_track(std::size_t n, double f0) {
    FrameTrack t;
    t.frame_hop = 80;
    t.sample_rate = 16000;
    t.frames.resize(n);
    for (auto& f : t.frames) {
        f.f0 = f0;
        f.voiced = true;
        f.mcep.assign(12, 0.0);
    }
    return t;
}

Outcome metric_forms() {
    const FrameTrack a = flat_track(100, 100.0), b = flat_track(100, 200.0);
    const double r = *logf0_rmse(a, b).value;
    const double r0 = *logf0_rmse(a, a).value;
    Tensor<double> m1(1, 25, 0.0), m2(1, 25, 0.0);
    m2(0, 3) = 1.0;
    const double d = mcd(m1, m2);
    const double d0 = mcd(m1, m1);
    std::ostringstream s;
    s.precision(10);
    s << "rmse(100,200) " << r << ", mcd(unit delta) " << d << " dB, identical " << r0 << "/" << d0;
    return {std::fabs(r - std::log(2.0)) <= 1e-9 && std::fabs(d - 6.1421) <= 1e-3 && r0 == 0.0 && d0 == 0.0, s.str()};
}

Outcome mulaw_grid() {
    const long n = 2'000'000;
    double worst_ratio = 0.0;
    bool monotone = true;
    int prev = -1;
    for (long i = 0; i <= n; ++i) {
        const double x = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
        const int code = mulaw_encode(x);
        monotone &= code >= prev;
        prev = code;
        const auto [lo, hi] = mulaw_bin_edges(code);
        const double err = std::fabs(mulaw_decode(code) - x);
        worst_ratio = std::max(worst_ratio, err / (hi - lo));
    }
    std::ostringstream d;
    d << n + 1 << " points, worst error / bin width " << worst_ratio << ", encode " << (monotone ? "monotone" : "not monotone");
    return {worst_ratio <= 1.0 && monotone, d.str()};
}

// Pinned controllability budget.
constexpr int kSeeds[] = {1, 2, 3, 4};
constexpr int kTrainUtterances = 8;
constexpr int kTestUtterances = 4;
const std::vector<std::string> kTrainSettings = {
    "--set", "train.max_steps=2000",     "--set", "train.batch_size=1", "--set", "train.crop_len=4000",
    "--set", "train.learning_rate=0.003",
};

std::optional<double> csv_rmse(const std::filesystem::path& csv, const std::string& ratio) {
    std::ifstream f(csv);
    for (std::string line; std::getline(f, line);) {
        if (line.rfind(ratio + ",", 0) != 0) continue;
        const std::string v = line.substr(ratio.size() + 1, line.find(',', ratio.size() + 1) - ratio.size() - 1);
        if (v == "undefined" || v == "error") return std::nullopt;
        return std::stod(v);
    }
    return std::nullopt;
}

std::string show(const std::optional<double>& v) {
    if (!v) return "undefined";
    std::ostringstream s;
    s.precision(4);
    s << *v;
    return s.str();
}

Outcome pitch_controllability() {
    const auto t0 = Clock::now();
    TempDir dir("acceptance8");
    int wins = 0;
    std::ostringstream d;
    for (int seed : kSeeds) {
        const std::string s = std::to_string(seed);
        const auto root = dir / ("seed" + s);
        cli({"synth-corpus", "--seed", s, "--n", std::to_string(kTrainUtterances), "--out", (root / "train").string()});
        cli({"synth-corpus", "--seed", std::to_string(seed + 1000), "--n", std::to_string(kTestUtterances), "--out",
             (root / "test").string()});
        std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> rmse;
        for (const std::string preset : {"tiny-qpnet", "tiny-wnc"}) {
            const auto m = root / preset;
            std::vector<std::string> train = {"train", "--preset", preset, "--seed", s, "--manifest",
                                              (root / "train" / "manifest.tsv").string(), "--out", m.string()};
            train.insert(train.end(), kTrainSettings.begin(), kTrainSettings.end());
            cli(train);
            cli({"eval", "--preset", preset, "--seed", s, "--mode", "sample", "--ratios", "1/2,3/2", "--checkpoint",
                 (m / "model.qpw").string(), "--manifest", (root / "test" / "manifest.tsv").string(), "--out",
                 (m / "report.csv").string()});
            rmse[preset] = {csv_rmse(m / "report.csv", "1/2"), csv_rmse(m / "report.csv", "3/2")};
        }
        const auto& q = rmse["tiny-qpnet"];
        const auto& w = rmse["tiny-wnc"];
        auto beats = [](const std::optional<double>& a, const std::optional<double>& b) { return a && (!b || *a < *b); };
        const bool win = beats(q.first, w.first) && beats(q.second, w.second);
        wins += win;
        d << "seed " << seed << ": qpnet " << show(q.first) << "/" << show(q.second) << " vs wnc " << show(w.first) << "/"
          << show(w.second) << (win ? " win" : " loss") << "; ";
        std::cout << "  " << d.str().substr(d.str().rfind("seed ")) << std::flush << "\n";
    }
    const double secs = seconds_since(t0);
    d << wins << "/4 wins in " << secs << " s";
    return {wins >= 3 && secs <= 1800.0, d.str()};
}

Outcome overfit() {
    const auto t0 = Clock::now();
    TempDir dir("acceptance9");
    cli({"synth-corpus", "--seed", "9", "--n", "1", "--set", "synth.duration=1.0", "--out", (dir / "c").string()});
    for (const char* run : {"a", "b"})
        cli({"train", "--seed", "9", "--manifest", (dir / "c" / "manifest.tsv").string(), "--out", (dir / run).string(),
             "--set", "train.max_steps=200", "--set", "train.batch_size=1", "--set", "train.crop_len=16000", "--set",
             "train.learning_rate=0.003"});
    const bool same = file_bytes(dir / "a" / "loss.csv") == file_bytes(dir / "b" / "loss.csv");
    std::ifstream f(dir / "a" / "loss.csv");
    std::vector<double> losses;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) losses.push_back(std::stod(line.substr(line.find(',') + 1)));
    std::ostringstream d;
    if (losses.size() != 200) return {false, "loss log has " + std::to_string(losses.size()) + " entries"};
    d << "loss " << losses.front() << " -> " << losses.back() << " after 200 steps, log "
      << (same ? "identical" : "differs") << " across runs; " << seconds_since(t0) << " s";
    return {losses.back() < 2.0 && same, d.str()};
}

Outcome generate_determinism() {
    TempDir dir("acceptance10");
    cli({"synth-corpus", "--seed", "10", "--n", "1", "--set", "synth.duration=0.5", "--out", (dir / "c").string()});
    const NetConfig cfg = tiny_at_16k("tiny-qpnet");
    save_checkpoint(dir / "m.qpw", random_params<float>(cfg, 10));
    for (const char* out : {"a.wav", "b.wav"})
        cli({"generate", "--mode", "argmax", "--checkpoint", (dir / "m.qpw").string(), "--features",
             (dir / "c" / "utt0000.qpf").string(), "--out", (dir / out).string()});
    const auto a = file_bytes(dir / "a.wav");
    const bool same = a == file_bytes(dir / "b.wav");
    std::ostringstream d;
    d << a.size() << " byte WAV, runs " << (same ? "identical" : "differ");
    return {same && a.size() > 44, d.str()};
}

const std::vector<std::function<Outcome()>> kCriteria = {
    receptive_fields, schedules,      gradients,    incremental_equivalence, causality,
    metric_forms,     mulaw_grid,     pitch_controllability, overfit,         generate_determinism,
};

bool run(std::size_t n) {
    Outcome o;
    try {
        o = kCriteria[n - 1]();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")\n" << std::flush;
    return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 2) {
        std::cerr << "usage: acceptance [1-" << kCriteria.size() << "]\n";
        return 2;
    }
    if (argc == 2) {
        const int n = std::atoi(argv[1]);
        if (n < 1 || n > static_cast<int>(kCriteria.size())) {
            std::cerr << "no criterion " << argv[1] << "\n";
            return 2;
        }
        return run(static_cast<std::size_t>(n)) ? 0 : 1;
    }
    bool all = true;
    for (std::size_t n = 1; n <= kCriteria.size(); ++n) all &= run(n);
    return all ? 0 : 1;
}
