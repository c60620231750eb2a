#include "qpnet/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace qpnet {

namespace {

int ms_to_samples(double ms, int sample_rate) {
    return std::max(1, static_cast<int>(std::lround(ms * sample_rate / 1000.0)));
}

// Samples of `w` in [start, start + len), zero outside the signal.
void extract_frame(const Waveform& w, long start, std::vector<double>& out) {
    const long n = static_cast<long>(w.samples.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const long s = start + static_cast<long>(i);
        out[i] = (s >= 0 && s < n) ? w.samples[static_cast<std::size_t>(s)] : 0.0;
    }
}

// The FFTW planner is not re-entrant; execution on fresh arrays is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// n_mels × (nfft/2 + 1) triangular weights spanning 0..Nyquist.
Tensor<double> mel_bank(int n_mels, int nfft, int sample_rate) {
    const int bins = nfft / 2 + 1;
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    Tensor<double> bank(static_cast<std::size_t>(n_mels), static_cast<std::size_t>(bins));
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (int b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * sample_rate / nfft;
            double wgt = 0.0;
            if (f > lo && f <= mid) wgt = (f - lo) / (mid - lo);
            else if (f > mid && f < hi) wgt = (hi - f) / (hi - mid);
            bank(m, b) = wgt;
        }
    }
    return bank;
}

}  // namespace

// ---------------------------------------------------------------------------

F0Params F0Params::defaults(int sample_rate) {
    F0Params p;
    p.frame_hop = ms_to_samples(5.0, sample_rate);
    p.frame_len = std::max(ms_to_samples(50.0, sample_rate),
                           2 * static_cast<int>(std::ceil(sample_rate / p.f0_min)));
    return p;
}

void F0Params::validate(int sample_rate) const {
    if (frame_hop <= 0) throw std::invalid_argument("f0: frame_hop must be positive");
    if (!(f0_min > 0.0 && f0_min < f0_max && f0_max < sample_rate / 2.0))
        throw std::invalid_argument("f0: need 0 < f0_min < f0_max < sample_rate/2");
    if (frame_len < 2.0 * (sample_rate / f0_min))
        throw std::invalid_argument("f0: frame_len shorter than two periods of f0_min");
}

MelcepParams MelcepParams::defaults(int sample_rate) {
    MelcepParams p;
    p.frame_len = ms_to_samples(25.0, sample_rate);
    p.frame_hop = ms_to_samples(5.0, sample_rate);
    return p;
}

void MelcepParams::validate() const {
    if (frame_len <= 0 || frame_hop <= 0) throw std::invalid_argument("melcep: bad framing");
    if (n_mels < 1 || dim < 1 || dim > n_mels) throw std::invalid_argument("melcep: need 1 <= dim <= n_mels");
    if (!(log_floor > 0.0)) throw std::invalid_argument("melcep: log floor must be positive");
}

FrameTrack estimate_f0(const Waveform& w, const F0Params& p) {
    p.validate(w.sample_rate);
    const double fs = w.sample_rate;
    const int L = p.frame_len;
    const int lag_min = std::max(2, static_cast<int>(std::floor(fs / p.f0_max)));
    const int lag_max = std::min(L - 2, static_cast<int>(std::ceil(fs / p.f0_min)));

    FrameTrack track;
    track.frame_hop = p.frame_hop;
    track.sample_rate = w.sample_rate;
    track.frames.resize(frame_count_for(w.size(), p.frame_hop));

    std::vector<double> x(static_cast<std::size_t>(L));
    std::vector<double> cum(static_cast<std::size_t>(L) + 1);
    std::vector<double> r(static_cast<std::size_t>(lag_max) + 2, 0.0);
    for (std::size_t f = 0; f < track.frames.size(); ++f) {
        const long start = static_cast<long>(std::lround(frame_center(f, p.frame_hop))) - L / 2;
        extract_frame(w, start, x);
        cum[0] = 0.0;
        for (int i = 0; i < L; ++i) cum[i + 1] = cum[i] + x[i] * x[i];
        auto& rec = track.frames[f];
        if (cum[L] < 1e-12) continue;

        for (int lag = lag_min - 1; lag <= lag_max + 1; ++lag) {
            const int n = L - lag;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += x[i] * x[i + lag];
            const double e0 = cum[n], e1 = cum[L] - cum[lag];
            r[lag] = (e0 > 0.0 && e1 > 0.0) ? acc / std::sqrt(e0 * e1) : 0.0;
        }

        // Shortest-lag local maximum within 10% of the best one.
        double best = -1.0;
        for (int lag = lag_min; lag <= lag_max; ++lag)
            if (r[lag] >= r[lag - 1] && r[lag] > r[lag + 1]) best = std::max(best, r[lag]);
        if (best < p.voicing_threshold) continue;
        int pick = -1;
        for (int lag = lag_min; lag <= lag_max; ++lag) {
            if (r[lag] >= r[lag - 1] && r[lag] > r[lag + 1] && r[lag] >= 0.9 * best) {
                pick = lag;
                break;
            }
        }
        if (pick < 0 || r[pick] < p.voicing_threshold) continue;
        const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
        const double denom = a - 2.0 * b + c;
        const double shift = denom < 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
        rec.voiced = true;
        rec.f0 = std::clamp(fs / (pick + shift), p.f0_min, p.f0_max);
    }
    return track;
}

Tensor<double> melcep_analyze(const Waveform& w, const MelcepParams& p) {
    p.validate();
    if (w.sample_rate <= 0) throw std::invalid_argument("melcep: waveform has no sample rate");
    int nfft = 1;
    while (nfft < p.frame_len) nfft <<= 1;
    const int bins = nfft / 2 + 1;
    const Tensor<double> bank = mel_bank(p.n_mels, nfft, w.sample_rate);

    std::vector<double> window(static_cast<std::size_t>(p.frame_len));
    for (int i = 0; i < p.frame_len; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / p.frame_len);

    // Orthonormal DCT-II basis, dim × n_mels.
    const int M = p.n_mels;
    Tensor<double> dct(static_cast<std::size_t>(p.dim), static_cast<std::size_t>(M));
    for (int k = 0; k < p.dim; ++k) {
        const double scale = k == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
        for (int m = 0; m < M; ++m) dct(k, m) = scale * std::cos(std::numbers::pi * k * (2.0 * m + 1.0) / (2.0 * M));
    }

    const std::size_t n_frames = frame_count_for(w.size(), p.frame_hop);
    Tensor<double> out(n_frames, static_cast<std::size_t>(p.dim));

    double* in = fftw_alloc_real(static_cast<std::size_t>(nfft));
    fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(bins));
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan = fftw_plan_dft_r2c_1d(nfft, in, spec, FFTW_ESTIMATE);
    }
    std::vector<double> frame(static_cast<std::size_t>(p.frame_len));
    std::vector<double> logmel(static_cast<std::size_t>(M));
    for (std::size_t f = 0; f < n_frames; ++f) {
        const long start = static_cast<long>(std::lround(frame_center(f, p.frame_hop))) - p.frame_len / 2;
        extract_frame(w, start, frame);
        std::fill(in, in + nfft, 0.0);
        for (int i = 0; i < p.frame_len; ++i) in[i] = frame[i] * window[i];
        fftw_execute_dft_r2c(plan, in, spec);
        for (int m = 0; m < M; ++m) {
            double e = 0.0;
            for (int b = 0; b < bins; ++b) {
                const double wgt = bank(m, b);
                if (wgt != 0.0) e += wgt * (spec[b][0] * spec[b][0] + spec[b][1] * spec[b][1]);
            }
            logmel[m] = std::log(std::max(e, p.log_floor));
        }
        for (int k = 0; k < p.dim; ++k) {
            double acc = 0.0;
            for (int m = 0; m < M; ++m) acc += dct(k, m) * logmel[m];
            out(f, k) = acc;
        }
    }
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(spec);
    fftw_free(in);
    return out;
}

FrameTrack analyze(const Waveform& w, const F0Params& f0p, const MelcepParams& mcp) {
    if (f0p.frame_hop != mcp.frame_hop) throw std::invalid_argument("analyze: F0 and mcep hops differ");
    FrameTrack t = estimate_f0(w, f0p);
    const Tensor<double> mc = melcep_analyze(w, mcp);
    for (std::size_t f = 0; f < t.size(); ++f) {
        auto& rec = t.frames[f];
        rec.mcep.assign(mc.row(f).begin(), mc.row(f).end());
        const long start = static_cast<long>(f) * mcp.frame_hop;
        double e = 0.0;
        for (long s = start; s < start + mcp.frame_hop && s < static_cast<long>(w.size()); ++s)
            e += w.samples[static_cast<std::size_t>(s)] * w.samples[static_cast<std::size_t>(s)];
        rec.log_energy = std::log(e + 1e-10);
    }
    return t;
}

ContinuousF0 continuous_f0(const FrameTrack& t) {
    ContinuousF0 out;
    out.frame_hop = t.frame_hop;
    out.sample_rate = t.sample_rate;
    out.f0.resize(t.size());
    out.voiced.resize(t.size());
    std::vector<std::size_t> anchors;
    for (std::size_t i = 0; i < t.size(); ++i) {
        out.voiced[i] = t.frames[i].voiced;
        if (t.frames[i].voiced) {
            if (!(t.frames[i].f0 > 0.0)) throw std::invalid_argument("continuous_f0: voiced frame with f0 <= 0");
            anchors.push_back(i);
        }
    }
    if (anchors.empty()) throw std::invalid_argument("continuous_f0: no voiced frame to anchor on");

    for (std::size_t i = 0; i <= anchors.front(); ++i) out.f0[i] = t.frames[anchors.front()].f0;
    for (std::size_t i = anchors.back(); i < t.size(); ++i) out.f0[i] = t.frames[anchors.back()].f0;
    for (std::size_t a = 0; a + 1 < anchors.size(); ++a) {
        const std::size_t lo = anchors[a], hi = anchors[a + 1];
        const double llo = std::log(t.frames[lo].f0), lhi = std::log(t.frames[hi].f0);
        out.f0[lo] = t.frames[lo].f0;
        for (std::size_t i = lo + 1; i < hi; ++i) {
            const double frac = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
            out.f0[i] = std::exp(llo + frac * (lhi - llo));
        }
    }
    return out;
}

FrameTrack scale_f0(const FrameTrack& t, double ratio) {
    if (!(ratio > 0.0)) throw std::domain_error("scale_f0: ratio must be positive");
    FrameTrack out = t;
    for (auto& f : out.frames) {
        if (!f.voiced) continue;
        f.f0 *= ratio;
        if (t.sample_rate > 0 && f.f0 >= t.sample_rate / 2.0)
            throw std::domain_error("scale_f0: scaled F0 reaches Nyquist");
    }
    return out;
}

Tensor<double> upsample(const Tensor<double>& frames, int hop, std::size_t target_len) {
    if (frames.rows() == 0) throw std::invalid_argument("upsample: empty track");
    if (hop <= 0) throw std::invalid_argument("upsample: hop must be positive");
    if (frames.rows() * static_cast<std::size_t>(hop) + static_cast<std::size_t>(hop) < target_len)
        throw std::invalid_argument("upsample: track too short for target length");
    Tensor<double> out(target_len, frames.cols());
    for (std::size_t s = 0; s < target_len; ++s) {
        const std::size_t f = std::min(s / static_cast<std::size_t>(hop), frames.rows() - 1);
        std::copy(frames.row(f).begin(), frames.row(f).end(), out.row(s).begin());
    }
    return out;
}

Tensor<double> frame_features(const FrameTrack& t) {
    const ContinuousF0 cf = continuous_f0(t);
    const std::size_t dim = t.frames.empty() ? 0 : t.frames.front().mcep.size();
    Tensor<double> out(t.size(), kMcepColumn + dim);
    for (std::size_t f = 0; f < t.size(); ++f) {
        const auto& rec = t.frames[f];
        if (rec.mcep.size() != dim) throw std::invalid_argument("frame_features: ragged mcep");
        out(f, kLogF0Column) = std::log(cf.f0[f]);
        out(f, kVoicedColumn) = rec.voiced ? 1.0 : 0.0;
        for (std::size_t d = 0; d < dim; ++d) out(f, kMcepColumn + d) = rec.mcep[d];
    }
    return out;
}

ConditioningMatrix build_conditioning(const FrameTrack& t, std::size_t n_samples) {
    return upsample(frame_features(t), t.frame_hop, n_samples);
}

// ---------------------------------------------------------------------------
// QPF1

void write_qpf(const std::filesystem::path& path, const FeatureFile& ff) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    auto put = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        f.write(reinterpret_cast<const char*>(b), 4);
    };
    f.write("QPF1", 4);
    put(static_cast<std::uint32_t>(ff.values.rows()));
    put(static_cast<std::uint32_t>(ff.values.cols()));
    put(static_cast<std::uint32_t>(ff.frame_hop));
    for (float v : ff.values.flat()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put(bits);
    }
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

FeatureFile read_qpf(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    auto get = [&]() {
        unsigned char b[4];
        if (!f.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("qpf: truncated file " + path.string());
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "QPF1", 4) != 0) throw std::runtime_error("qpf: bad magic in " + path.string());
    const std::uint32_t rows = get(), cols = get(), hop = get();
    if (hop == 0) throw std::runtime_error("qpf: zero hop");
    FeatureFile ff;
    ff.frame_hop = static_cast<int>(hop);
    ff.values.resize(rows, cols);
    for (float& v : ff.values.flat()) {
        const std::uint32_t bits = get();
        std::memcpy(&v, &bits, 4);
    }
    return ff;
}

FeatureFile to_feature_file(const FrameTrack& t) {
    const std::size_t dim = t.frames.empty() ? 0 : t.frames.front().mcep.size();
    FeatureFile ff;
    ff.frame_hop = t.frame_hop;
    ff.values.resize(t.size(), kMcepColumn + dim);
    for (std::size_t f = 0; f < t.size(); ++f) {
        const auto& rec = t.frames[f];
        if (rec.mcep.size() != dim) throw std::invalid_argument("to_feature_file: ragged mcep");
        ff.values(f, 0) = static_cast<float>(rec.voiced ? rec.f0 : 0.0);
        ff.values(f, 1) = rec.voiced ? 1.0f : 0.0f;
        for (std::size_t d = 0; d < dim; ++d) ff.values(f, kMcepColumn + d) = static_cast<float>(rec.mcep[d]);
    }
    return ff;
}

FrameTrack from_feature_file(const FeatureFile& ff, int sample_rate) {
    if (ff.values.cols() < kMcepColumn) throw std::invalid_argument("qpf: fewer than two columns");
    FrameTrack t;
    t.frame_hop = ff.frame_hop;
    t.sample_rate = sample_rate;
    t.frames.resize(ff.values.rows());
    for (std::size_t f = 0; f < t.size(); ++f) {
        auto& rec = t.frames[f];
        rec.voiced = ff.values(f, 1) > 0.5f;
        rec.f0 = rec.voiced ? static_cast<double>(ff.values(f, 0)) : 0.0;
        if (rec.voiced && !(rec.f0 > 0.0)) throw std::invalid_argument("qpf: voiced frame with f0 <= 0");
        for (std::size_t d = kMcepColumn; d < ff.values.cols(); ++d) rec.mcep.push_back(ff.values(f, d));
    }
    return t;
}

}  // namespace qpnet
