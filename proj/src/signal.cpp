#include "qpnet/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <stdexcept>

namespace qpnet {

namespace {

constexpr double kMu = 255.0;
const double kLogMu1 = std::log(1.0 + kMu);

double compand(double x) { return std::copysign(std::log1p(kMu * std::fabs(x)) / kLogMu1, x); }

double expand(double f) { return std::copysign((std::pow(1.0 + kMu, std::fabs(f)) - 1.0) / kMu, f); }

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

}  // namespace

void Waveform::validate() const {
    if (sample_rate <= 0) throw std::invalid_argument("waveform: sample_rate must be positive");
    for (double s : samples)
        if (!(std::fabs(s) <= 1.0)) throw std::domain_error("waveform: sample outside [-1, 1]");
}

void FrameTrack::validate() const {
    if (frame_hop <= 0) throw std::invalid_argument("frame track: frame_hop must be positive");
    for (const auto& f : frames) {
        if (f.voiced != (f.f0 > 0.0)) throw std::invalid_argument("frame track: voiced flag disagrees with f0");
    }
}

int mulaw_encode(double x) {
    if (!(std::fabs(x) <= 1.0)) throw std::domain_error("mulaw_encode: |x| > 1");
    const double bin = std::floor((compand(x) + 1.0) / 2.0 * kMuLawClasses);
    return static_cast<int>(std::clamp(bin, 0.0, static_cast<double>(kMuLawClasses - 1)));
}

double mulaw_decode(int code) {
    if (code < 0 || code >= kMuLawClasses) throw std::domain_error("mulaw_decode: code out of range");
    return expand((code + 0.5) / kMuLawClasses * 2.0 - 1.0);
}

std::vector<int> mulaw_encode(const std::vector<double>& x) {
    std::vector<int> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), [](double v) { return mulaw_encode(v); });
    return out;
}

std::vector<double> mulaw_decode(const std::vector<int>& codes) {
    std::vector<double> out(codes.size());
    std::transform(codes.begin(), codes.end(), out.begin(), [](int c) { return mulaw_decode(c); });
    return out;
}

std::pair<double, double> mulaw_bin_edges(int code) {
    if (code < 0 || code >= kMuLawClasses) throw std::domain_error("mulaw_bin_edges: code out of range");
    const double lo = static_cast<double>(code) / (kMuLawClasses / 2) - 1.0;
    const double hi = static_cast<double>(code + 1) / (kMuLawClasses / 2) - 1.0;
    return {expand(lo), expand(hi)};
}

// ---------------------------------------------------------------------------
// WAV

std::vector<std::uint8_t> wav_bytes(const Waveform& w) {
    if (w.sample_rate <= 0) throw std::invalid_argument("wav: sample_rate must be positive");
    const auto data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::vector<std::uint8_t> b;
    b.reserve(44 + data_len);
    b.insert(b.end(), {'R', 'I', 'F', 'F'});
    put_u32(b, 36 + data_len);
    b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(b, 16);
    put_u16(b, 1);  // PCM
    put_u16(b, 1);  // mono
    put_u32(b, static_cast<std::uint32_t>(w.sample_rate));
    put_u32(b, static_cast<std::uint32_t>(w.sample_rate) * 2);
    put_u16(b, 2);
    put_u16(b, 16);
    b.insert(b.end(), {'d', 'a', 't', 'a'});
    put_u32(b, data_len);
    for (double s : w.samples) {
        const long q = std::clamp(std::lround(s * 32768.0), -32768L, 32767L);
        put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    return b;
}

Waveform parse_wav(const std::vector<std::uint8_t>& b) {
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("wav: not a RIFF/WAVE stream");
    Waveform w;
    bool have_fmt = false;
    std::size_t at = 12;
    while (at + 8 <= b.size()) {
        const std::uint32_t len = get_u32(b, at + 4);
        const std::size_t body = at + 8;
        if (body + len > b.size()) throw std::runtime_error("wav: truncated chunk");
        if (std::memcmp(b.data() + at, "fmt ", 4) == 0) {
            if (len < 16) throw std::runtime_error("wav: short fmt chunk");
            if (get_u16(b, body) != 1 || get_u16(b, body + 2) != 1 || get_u16(b, body + 14) != 16)
                throw std::runtime_error("wav: only mono 16-bit PCM is supported");
            w.sample_rate = static_cast<int>(get_u32(b, body + 4));
            have_fmt = true;
        } else if (std::memcmp(b.data() + at, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("wav: data chunk before fmt chunk");
            w.samples.resize(len / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i)
                w.samples[i] = static_cast<std::int16_t>(get_u16(b, body + 2 * i)) / 32768.0;
            return w;
        }
        at = body + len + (len & 1u);
    }
    throw std::runtime_error("wav: no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
    const auto bytes = wav_bytes(w);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_wav(bytes);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SynthSpec::validate() const {
    if (!(duration > 0.0)) throw std::domain_error("synth: duration must be positive");
    if (sample_rate <= 0 || frame_hop <= 0) throw std::invalid_argument("synth: bad sample_rate/frame_hop");
    if (segments.empty()) throw std::invalid_argument("synth: empty F0 contour");
    if (harmonic_count < 1) throw std::invalid_argument("synth: harmonic_count must be >= 1");
    if (noise_level < 0.0) throw std::invalid_argument("synth: negative noise_level");
    const double nyq = sample_rate / 2.0;
    for (const auto& s : segments) {
        if (!(s.weight > 0.0)) throw std::invalid_argument("synth: segment weight must be positive");
        if (!(s.f0_start > 0.0 && s.f0_start < nyq && s.f0_end > 0.0 && s.f0_end < nyq))
            throw std::domain_error("synth: F0 outside (0, Nyquist)");
    }
}

std::pair<double, bool> SynthSpec::contour_at(double t) const {
    double total = 0.0;
    for (const auto& s : segments) total += s.weight;
    const double pos = std::clamp(t / duration, 0.0, 1.0) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        if (pos < acc + s.weight || i + 1 == segments.size()) {
            const double frac = std::clamp((pos - acc) / s.weight, 0.0, 1.0);
            const double f0 = std::exp(std::log(s.f0_start) + frac * (std::log(s.f0_end) - std::log(s.f0_start)));
            return {f0, s.voiced};
        }
        acc += s.weight;
    }
    return {segments.back().f0_end, segments.back().voiced};
}

SynthResult synth_utterance(const SynthSpec& spec) {
    spec.validate();
    const double fs = spec.sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(spec.duration * fs));
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const int K = spec.harmonic_count;
    std::vector<double> amp(K), phase(K);
    const double slope = spec.spectral_tilt / (20.0 * std::log10(2.0));
    double power = 0.0;
    for (int k = 0; k < K; ++k) {
        amp[k] = std::pow(k + 1.0, -slope);
        phase[k] = phase_dist(rng);
        power += 0.5 * amp[k] * amp[k];
    }
    const double voiced_norm = 1.0 / std::sqrt(power);

    // Voicing transitions ramp over 5 ms to avoid clicks.
    const double ramp_step = 1.0 / std::max(1.0, 0.005 * fs);
    const double unvoiced_level = 0.5;
    const double lp_gain = std::sqrt(1.0 - 0.5 * 0.5);

    Waveform w;
    w.sample_rate = spec.sample_rate;
    w.samples.resize(n);
    double phi = 0.0, gain = spec.contour_at(0.0).second ? 1.0 : 0.0, lp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto [f0, voiced] = spec.contour_at(static_cast<double>(i) / fs);
        gain = voiced ? std::min(1.0, gain + ramp_step) : std::max(0.0, gain - ramp_step);
        double v = 0.0;
        for (int k = 0; k < K; ++k) {
            if ((k + 1) * f0 >= 0.5 * fs) break;
            v += amp[k] * std::cos((k + 1) * phi + phase[k]);
        }
        lp = 0.5 * lp + gauss(rng);
        const double white = gauss(rng);
        w.samples[i] = gain * v * voiced_norm + (1.0 - gain) * unvoiced_level * lp_gain * lp + spec.noise_level * white;
        phi = std::fmod(phi + 2.0 * std::numbers::pi * f0 / fs, 2.0 * std::numbers::pi);
    }
    double peak = 0.0;
    for (double s : w.samples) peak = std::max(peak, std::fabs(s));
    if (peak > 0.0)
        for (double& s : w.samples) s *= 0.8 / peak;

    SynthResult out;
    out.wave = std::move(w);
    out.truth.frame_hop = spec.frame_hop;
    out.truth.sample_rate = spec.sample_rate;
    out.truth.frames.resize(frame_count_for(n, spec.frame_hop));
    for (std::size_t f = 0; f < out.truth.frames.size(); ++f) {
        const double t = std::min(frame_center(f, spec.frame_hop), static_cast<double>(n) - 1.0) / fs;
        const auto [f0, voiced] = spec.contour_at(std::max(t, 0.0));
        out.truth.frames[f].voiced = voiced;
        out.truth.frames[f].f0 = voiced ? f0 : 0.0;
    }
    return out;
}

void CorpusParams::validate() const {
    if (!(f0_low > 0.0 && f0_low <= f0_high)) throw std::invalid_argument("corpus: need 0 < f0_low <= f0_high");
    if (voiced_segments < 1) throw std::invalid_argument("corpus: voiced_segments must be >= 1");
    if (unvoiced_weight < 0.0) throw std::invalid_argument("corpus: negative unvoiced_weight");
}

SynthSpec random_synth_spec(const CorpusParams& p, std::uint64_t seed) {
    p.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> logf(std::log(p.f0_low), std::log(p.f0_high));
    std::uniform_real_distribution<double> jitter(0.7, 1.3);
    SynthSpec s;
    s.duration = p.duration;
    s.sample_rate = p.sample_rate;
    s.frame_hop = p.frame_hop;
    s.harmonic_count = p.harmonic_count;
    s.spectral_tilt = p.spectral_tilt;
    s.noise_level = p.noise_level;
    s.seed = rng();
    double f = std::exp(logf(rng));
    for (int k = 0; k < p.voiced_segments; ++k) {
        if (k > 0 && p.unvoiced_weight > 0.0) s.segments.push_back({p.unvoiced_weight * jitter(rng), f, f, false});
        const double next = std::exp(logf(rng));
        s.segments.push_back({jitter(rng), f, next, true});
        f = next;
    }
    return s;
}

}  // namespace qpnet
