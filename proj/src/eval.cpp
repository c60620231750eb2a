#include "qpnet/eval.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace qpnet {

F0Rmse logf0_rmse(const FrameTrack& cond, const FrameTrack& extracted) {
    if (cond.size() != extracted.size())
        throw std::invalid_argument("logf0_rmse: frame counts differ (" + std::to_string(cond.size()) + " vs " +
                                    std::to_string(extracted.size()) + ")");
    F0Rmse r;
    for (std::size_t f = 0; f < cond.size(); ++f) {
        const auto& a = cond.frames[f];
        const auto& b = extracted.frames[f];
        if (!a.voiced || !b.voiced) continue;
        const double d = std::log(a.f0) - std::log(b.f0);
        r.sum_sq += d * d;
        ++r.frames;
    }
    if (r.frames > 0) r.value = std::sqrt(r.sum_sq / static_cast<double>(r.frames));
    return r;
}

namespace {

double frame_mcd(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t d = 1; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
    return 10.0 / std::numbers::ln10 * std::sqrt(2.0 * s);
}

}  // namespace

double mcd(const Tensor<double>& a, const Tensor<double>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mcd: shapes differ");
    if (a.rows() == 0) throw std::invalid_argument("mcd: no frames");
    double total = 0.0;
    for (std::size_t f = 0; f < a.rows(); ++f) total += frame_mcd(a.row(f), b.row(f));
    return total / static_cast<double>(a.rows());
}

double mcd(const FrameTrack& a, const FrameTrack& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mcd: frame counts differ");
    if (a.size() == 0) throw std::invalid_argument("mcd: no frames");
    double total = 0.0;
    for (std::size_t f = 0; f < a.size(); ++f) {
        const auto& x = a.frames[f].mcep;
        const auto& y = b.frames[f].mcep;
        if (x.size() != y.size()) throw std::invalid_argument("mcd: dimensions differ");
        total += frame_mcd(x, y);
    }
    return total / static_cast<double>(a.size());
}

std::string Ratio::str() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
}

Ratio parse_ratio(std::string_view s) {
    const std::string text(s);
    auto fail = [&]() -> Ratio { throw std::invalid_argument("bad ratio '" + text + "'"); };
    auto to_int = [&](const std::string& part) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(part, &used);
        } catch (const std::exception&) {
            fail();
        }
        if (used != part.size()) fail();
        return v;
    };
    Ratio r;
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
        r.num = to_int(text.substr(0, slash));
        r.den = to_int(text.substr(slash + 1));
    } else if (text.find('.') != std::string::npos) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(text, &used);
        } catch (const std::exception&) {
            fail();
        }
        if (used != text.size()) fail();
        r.num = static_cast<int>(std::llround(v * 1e6));
        r.den = 1000000;
    } else {
        r.num = to_int(text);
    }
    if (r.num <= 0 || r.den <= 0) throw std::domain_error("ratio must be positive: '" + text + "'");
    const int g = std::gcd(r.num, r.den);
    r.num /= g;
    r.den /= g;
    return r;
}

std::vector<Ratio> parse_ratio_list(std::string_view csv) {
    std::vector<Ratio> out;
    std::stringstream ss{std::string(csv)};
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(parse_ratio(item.substr(b, e - b + 1)));
    }
    if (out.empty()) throw std::invalid_argument("empty ratio list");
    return out;
}

const std::vector<Ratio>& default_ratios() {
    static const std::vector<Ratio> r = {{1, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5},
                                         {6, 5}, {5, 4}, {4, 3}, {3, 2}, {2, 1}};
    return r;
}

namespace {

template <typename Get>
std::optional<double> mean_of(const std::vector<MetricRow>& rows, Get get) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (const auto v = get(r)) {
            s += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

}  // namespace

std::optional<double> MetricReport::average_rmse() const {
    return mean_of(rows, [](const MetricRow& r) { return r.logf0_rmse; });
}

std::optional<double> MetricReport::average_mcd() const {
    return mean_of(rows, [](const MetricRow& r) { return r.mcd_db; });
}

const MetricRow* MetricReport::find(const Ratio& r) const {
    for (const auto& row : rows)
        if (row.ratio == r) return &row;
    return nullptr;
}

std::string MetricReport::csv() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    auto put = [&](const std::optional<double>& v, bool failed) {
        if (failed)
            os << "error";
        else if (v)
            os << *v;
        else
            os << "undefined";
    };
    os << "ratio,logf0_rmse,mcd_db,voiced_frames\n";
    std::size_t voiced = 0;
    for (const auto& r : rows) {
        const bool failed = !r.error.empty();
        os << r.ratio.str() << ',';
        put(r.logf0_rmse, failed);
        os << ',';
        put(r.mcd_db, failed);
        os << ',' << r.voiced_frames << '\n';
        voiced += r.voiced_frames;
    }
    os << "average,";
    put(average_rmse(), false);
    os << ',';
    put(average_mcd(), false);
    os << ',' << voiced << '\n';
    return os.str();
}

AnalysisParams AnalysisParams::defaults(int sample_rate) {
    return {F0Params::defaults(sample_rate), MelcepParams::defaults(sample_rate)};
}

MetricReport scaling_experiment(const Synthesizer& synth, const std::vector<EvalItem>& items,
                                const std::vector<Ratio>& ratios, const AnalysisParams& ap) {
    if (!synth) throw std::invalid_argument("scaling_experiment: no synthesizer");
    for (const auto& r : ratios)
        if (r.num <= 0 || r.den <= 0) throw std::domain_error("scaling_experiment: ratios must be positive");
    MetricReport report;
    report.rows.resize(ratios.size());
    const long n = static_cast<long>(ratios.size());

#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n; ++i) {
        MetricRow& row = report.rows[static_cast<std::size_t>(i)];
        row.ratio = ratios[static_cast<std::size_t>(i)];
        try {
            double sum_sq = 0.0, mcd_sum = 0.0;
            std::size_t co_voiced = 0, frames = 0;
            for (const EvalItem& item : items) {
                const FrameTrack cond = scale_f0(item.track, row.ratio.value());
                const Waveform out = synth(cond, item.wave.samples.size(), item.wave, static_cast<std::size_t>(i));
                const FrameTrack got = analyze(out, ap.f0, ap.mcep);
                const F0Rmse e = logf0_rmse(cond, got);
                sum_sq += e.sum_sq;
                co_voiced += e.frames;
                mcd_sum += mcd(cond, got) * static_cast<double>(cond.size());
                frames += cond.size();
            }
            row.voiced_frames = co_voiced;
            if (co_voiced > 0) row.logf0_rmse = std::sqrt(sum_sq / static_cast<double>(co_voiced));
            if (frames > 0) row.mcd_db = mcd_sum / static_cast<double>(frames);
        } catch (const std::exception& e) {
            row.error = e.what();
            row.logf0_rmse.reset();
            row.mcd_db.reset();
        }
    }
    return report;
}

Synthesizer copy_synthesizer() {
    return [](const FrameTrack&, std::size_t n, const Waveform& source, std::size_t) {
        if (source.samples.size() != n) throw std::invalid_argument("copy synthesizer: length mismatch");
        return source;
    };
}

Synthesizer model_synthesizer(const ModelParams<float>& p, GenerateMode mode, std::uint64_t seed) {
    auto params = std::make_shared<const ModelParams<float>>(p);
    return [params, mode, seed](const FrameTrack& cond, std::size_t n, const Waveform&, std::size_t ratio_index) {
        if (cond.sample_rate != params->config.sample_rate)
            throw std::invalid_argument("model synthesizer: sample rate differs from the model");
        const ConditioningMatrix c = build_conditioning(cond, n);
        const DilationPlan plan = build_plan(params->config, c);
        return generate<float>(*params, c, plan, mode, seed + 0x9e3779b97f4a7c15ull * (ratio_index + 1)).wave;
    };
}

}  // namespace qpnet
