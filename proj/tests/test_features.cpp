#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "qpnet/features.hpp"
#include "qpnet/signal.hpp"

using namespace qpnet;
using qpnet::testing::TempDir;

namespace {

Waveform harmonic_tone(double f0, double seconds, int fs = 16000) {
    SynthSpec s;
    s.duration = seconds;
    s.sample_rate = fs;
    s.segments = {{1.0, f0, f0, true}};
    s.seed = 3;
    return synth_utterance(s).wave;
}

FrameTrack manual_track(const std::vector<double>& f0s, int dim = 2) {
    FrameTrack t;
    t.frame_hop = 80;
    t.sample_rate = 16000;
    for (double f : f0s) {
        FrameRecord r;
        r.voiced = f > 0.0;
        r.f0 = f;
        r.mcep.assign(static_cast<std::size_t>(dim), 0.25);
        t.frames.push_back(r);
    }
    return t;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("default framing covers two periods of the lowest F0") {
    const F0Params p = F0Params::defaults(16000);
    CHECK(p.frame_hop == 80);
    CHECK(p.frame_len == 800);
    CHECK_NOTHROW(p.validate(16000));
    CHECK(F0Params::defaults(22050).frame_len >= 2 * 22050 / 40);
    F0Params bad = p;
    bad.frame_len = 400;
    CHECK_THROWS(bad.validate(16000));
    CHECK(MelcepParams::defaults(16000).frame_len == 400);
}

TEST_CASE("pitch tracker recovers steady tones") {
    for (double f0 : {60.0, 110.0, 200.0, 375.0, 700.0}) {
        CAPTURE(f0);
        const FrameTrack t = estimate_f0(harmonic_tone(f0, 0.4), F0Params::defaults(16000));
        std::size_t checked = 0;
        for (std::size_t f = 10; f + 10 < t.size(); ++f) {
            REQUIRE(t.frames[f].voiced);
            CHECK(std::fabs(std::log(t.frames[f].f0 / f0)) < 0.01);
            ++checked;
        }
        CHECK(checked > 40);
    }
}

TEST_CASE("pitch tracker marks silence and white noise unvoiced") {
    Waveform silence;
    silence.sample_rate = 16000;
    silence.samples.assign(4000, 0.0);
    CHECK(estimate_f0(silence, F0Params::defaults(16000)).voiced_count() == 0);

    Waveform noise;
    noise.sample_rate = 16000;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < 8000; ++i) noise.samples.push_back(u(rng));
    const FrameTrack t = estimate_f0(noise, F0Params::defaults(16000));
    CHECK(t.voiced_count() < t.size() / 10);
}

TEST_CASE("mel-cepstrum shape and determinism") {
    const Waveform w = harmonic_tone(150.0, 0.25);
    MelcepParams p = MelcepParams::defaults(16000);
    // Bands above the top harmonic sit under the default floor.
    p.log_floor = 1e-300;
    const Tensor<double> a = melcep_analyze(w, p);
    CHECK(a.rows() == frame_count_for(w.size(), p.frame_hop));
    CHECK(a.cols() == 12);
    CHECK(a == melcep_analyze(w, p));
    for (double v : a.flat()) CHECK(std::isfinite(v));

    Waveform louder = w;
    for (double& s : louder.samples) s *= 0.5;
    const Tensor<double> b = melcep_analyze(louder, p);
    // A gain change moves only c0 (orthonormal DCT of a constant log offset).
    const std::size_t f = 20;
    CHECK(b(f, 0) - a(f, 0) == doctest::Approx(std::log(0.25) * std::sqrt(24.0)).epsilon(1e-6));
    for (std::size_t k = 1; k < 12; ++k) CHECK(b(f, k) == doctest::Approx(a(f, k)).epsilon(1e-6));
}

TEST_CASE("continuous F0 interpolates log-linearly and holds edges") {
    const ContinuousF0 c = continuous_f0(manual_track({0.0, 100.0, 0.0, 200.0, 0.0, 0.0}));
    CHECK(c.f0[0] == doctest::Approx(100.0));
    CHECK(c.f0[2] == doctest::Approx(141.4213562).epsilon(1e-9));
    CHECK(c.f0[5] == doctest::Approx(200.0));
    CHECK_FALSE(c.voiced[2]);
    CHECK(c.voiced[3]);
    CHECK_THROWS_AS(continuous_f0(manual_track({0.0, 0.0})), std::invalid_argument);
}

TEST_CASE("scale_f0 scales voiced frames only") {
    const FrameTrack t = manual_track({100.0, 0.0, 300.0});
    const FrameTrack s = scale_f0(t, 1.5);
    CHECK(s.frames[0].f0 == doctest::Approx(150.0));
    CHECK(s.frames[1].f0 == 0.0);
    CHECK(s.frames[2].f0 == doctest::Approx(450.0));
    CHECK_THROWS_AS(scale_f0(t, 0.0), std::domain_error);
    CHECK_THROWS_AS(scale_f0(t, 30.0), std::domain_error);
}

TEST_CASE("hold upsampling") {
    Tensor<double> frames(3, 2);
    for (std::size_t f = 0; f < 3; ++f) frames(f, 0) = static_cast<double>(f);
    const Tensor<double> up = upsample(frames, 4, 11);
    CHECK(up.rows() == 11);
    CHECK(up(3, 0) == 0.0);
    CHECK(up(4, 0) == 1.0);
    CHECK(up(10, 0) == 2.0);
    CHECK(upsample(frames, 4, 14)(13, 0) == 2.0);
    CHECK_THROWS(upsample(frames, 4, 20));
    CHECK_THROWS(upsample(Tensor<double>(), 4, 1));
}

TEST_CASE("conditioning rows hold log continuous F0, U/V and mcep") {
    const FrameTrack t = manual_track({100.0, 0.0, 400.0}, 3);
    const ConditioningMatrix c = build_conditioning(t, 240);
    CHECK(c.cols() == 5);
    CHECK(c(0, kLogF0Column) == doctest::Approx(std::log(100.0)));
    CHECK(c(80, kLogF0Column) == doctest::Approx(std::log(200.0)));
    CHECK(c(80, kVoicedColumn) == 0.0);
    CHECK(c(239, kVoicedColumn) == 1.0);
    CHECK(c(5, kMcepColumn + 2) == doctest::Approx(0.25));
}

TEST_CASE("QPF1 round trip") {
    TempDir dir("qpf");
    const FrameTrack t = analyze(harmonic_tone(180.0, 0.2), F0Params::defaults(16000), MelcepParams::defaults(16000));
    const FeatureFile ff = to_feature_file(t);
    write_qpf(dir / "a.qpf", ff);
    const FeatureFile back = read_qpf(dir / "a.qpf");
    CHECK(back.frame_hop == 80);
    CHECK(back.values == ff.values);
    const FrameTrack t2 = from_feature_file(back, 16000);
    REQUIRE(t2.size() == t.size());
    for (std::size_t f = 0; f < t.size(); ++f) {
        CHECK(t2.frames[f].voiced == t.frames[f].voiced);
        CHECK(t2.frames[f].f0 == doctest::Approx(t.frames[f].f0).epsilon(1e-6));
    }
    std::ofstream(dir / "bad.qpf") << "XXXX";
    CHECK_THROWS(read_qpf(dir / "bad.qpf"));
    CHECK_THROWS(read_qpf(dir / "missing.qpf"));
}

TEST_CASE("analyze requires matching hops") {
    F0Params f = F0Params::defaults(16000);
    MelcepParams m = MelcepParams::defaults(16000);
    m.frame_hop = 160;
    CHECK_THROWS(analyze(harmonic_tone(100.0, 0.1), f, m));
}

}
