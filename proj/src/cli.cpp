#include "qpnet/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>

#include "qpnet/checkpoint.hpp"
#include "qpnet/config.hpp"
#include "qpnet/dilation.hpp"
#include "qpnet/eval.hpp"
#include "qpnet/features.hpp"
#include "qpnet/generate.hpp"
#include "qpnet/signal.hpp"
#include "qpnet/train.hpp"

namespace fs = std::filesystem;

namespace qpnet {

namespace {

struct CommonOptions {
    std::string config;
    std::string preset;
    std::uint64_t seed = 0;
    int threads = -1;
    std::vector<std::string> overrides;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    cmd->add_option("--preset", o.preset, "Architecture preset");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&o](const std::uint64_t& s) { o.seed = s, o.seed_set = true; }, "Global random seed");
    cmd->add_option("--threads", o.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--set", o.overrides, "Override a config key: section.key=value");
}

RunConfig resolve(const CommonOptions& o) {
    ConfigSources src;
    if (!o.config.empty()) src.file = o.config;
    src.overrides = o.overrides;
    if (!o.preset.empty()) src.preset = o.preset;
    if (o.seed_set) src.seed = o.seed;
    if (o.threads >= 0) src.threads = o.threads;
    RunConfig c = load_run_config(src);
    if (c.threads > 0) omp_set_num_threads(c.threads);
    return c;
}

void echo_beside(const fs::path& output, const RunConfig& cfg) {
    const fs::path path = output.string() + ".config.ini";
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f << cfg.echo();
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------

int cmd_synth_corpus(const RunConfig& cfg, const fs::path& out_dir, std::optional<int> n_flag, std::ostream& out) {
    const int n = n_flag.value_or(cfg.corpus_size);
    if (n < 0) throw std::invalid_argument("synth-corpus: n must be >= 0");
    fs::create_directories(out_dir);
    const AnalysisParams ap = cfg.features.resolve(cfg.corpus.sample_rate);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < n; ++i) {
        std::ostringstream name;
        name << "utt" << std::setw(4) << std::setfill('0') << i;
        const SynthSpec spec = random_synth_spec(cfg.corpus, mix(cfg.seed, static_cast<std::uint64_t>(i)));
        const auto bytes = wav_bytes(synth_utterance(spec).wave);
        const Waveform stored = parse_wav(bytes);
        std::ofstream(out_dir / (name.str() + ".wav"), std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        write_qpf(out_dir / (name.str() + ".qpf"), to_feature_file(analyze(stored, ap.f0, ap.mcep)));
        entries.push_back({name.str() + ".wav", name.str() + ".qpf"});
    }
    write_manifest(out_dir / "manifest.tsv", entries);
    write_config_echo(out_dir, cfg);
    out << "wrote " << n << " utterances to " << (out_dir / "manifest.tsv").string() << "\n";
    return 0;
}

int cmd_extract(const RunConfig& cfg, const fs::path& in, const fs::path& output, std::ostream& out) {
    const Waveform w = read_wav(in);
    const AnalysisParams ap = cfg.features.resolve(w.sample_rate);
    const FrameTrack t = analyze(w, ap.f0, ap.mcep);
    ensure_parent(output);
    write_qpf(output, to_feature_file(t));
    echo_beside(output, cfg);
    out << "wrote " << t.size() << " frames (" << t.voiced_count() << " voiced) to " << output.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& manifest, const fs::path& out_dir, std::ostream& out) {
    const int every = std::max(1, cfg.train.max_steps / 20);
    fs::create_directories(out_dir);
    write_config_echo(out_dir, cfg);
    const TrainResult r = train_loop(cfg.train, cfg.net, manifest, out_dir, [&](int step, double loss) {
        if (step % every == 0 || step == 1) out << "step " << step << " loss " << loss << "\n" << std::flush;
    });
    out << "trained " << r.params.parameter_count() << " parameters for " << r.losses.size() << " steps; wrote "
        << (out_dir / "model.qpw").string() << "\n";
    return 0;
}

int cmd_generate(const RunConfig& cfg, const fs::path& ckpt, const fs::path& features, const fs::path& output,
                 std::optional<std::string> ratio, std::optional<long> samples, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const int fs_model = ck.params.config.sample_rate;
    FrameTrack track = from_feature_file(read_qpf(features), fs_model);
    if (ratio) track = scale_f0(track, parse_ratio(*ratio).value());
    const std::size_t n = samples ? static_cast<std::size_t>(*samples) : track.size() * static_cast<std::size_t>(track.frame_hop);
    if (n == 0) throw std::invalid_argument("generate: nothing to synthesise");
    const ConditioningMatrix cond = build_conditioning(track, n);
    const DilationPlan plan = build_plan(ck.params.config, cond);
    const GenerateResult g = generate<float>(ck.params, cond, plan, cfg.mode, cfg.seed);
    ensure_parent(output);
    write_wav(output, g.wave);
    echo_beside(output, cfg);
    out << "wrote " << n << " samples to " << output.string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::optional<fs::path>& ckpt, bool copy, const fs::path& manifest,
             const fs::path& output, std::ostream& out) {
    if (copy == ckpt.has_value()) throw std::invalid_argument("eval: give exactly one of --checkpoint or --copy");
    std::optional<Checkpoint> ck;
    if (ckpt) ck = load_checkpoint(*ckpt);

    const auto entries = read_manifest(manifest);
    if (entries.empty()) throw std::invalid_argument("eval: manifest lists no utterances");
    std::vector<EvalItem> items;
    for (const auto& e : entries) {
        EvalItem it;
        it.wave = read_wav(e.wav);
        it.track = from_feature_file(read_qpf(e.features), it.wave.sample_rate);
        items.push_back(std::move(it));
    }
    const int rate = items.front().wave.sample_rate;
    const AnalysisParams ap = cfg.features.resolve(rate);
    for (const auto& it : items) {
        if (it.wave.sample_rate != rate) throw std::invalid_argument("eval: mixed sample rates in manifest");
        if (it.track.frame_hop != ap.f0.frame_hop)
            throw std::invalid_argument("eval: feature hop differs from the analysis hop");
    }
    const Synthesizer synth = copy ? copy_synthesizer() : model_synthesizer(ck->params, cfg.mode, cfg.seed);
    const MetricReport report = scaling_experiment(synth, items, cfg.ratios, ap);

    ensure_parent(output);
    std::ofstream f(output);
    if (!f) throw std::runtime_error("cannot open for writing: " + output.string());
    f << report.csv();
    echo_beside(output, cfg);
    out << "log-F0 RMSE uses the natural logarithm; pooled over frames within each ratio\n" << report.csv();
    for (const auto& r : report.rows)
        if (!r.error.empty()) out << "ratio " << r.ratio.str() << " failed: " << r.error << "\n";
    return 0;
}

void rf_rows(const NetConfig& c, const std::vector<double>& f0s, std::ostream& out) {
    if (c.adaptive_blocks() == 0) {
        out << std::left << std::setw(12) << c.preset << std::setw(10) << "-" << std::setw(6) << "-"
            << receptive_field(c, 1) << "\n";
        return;
    }
    for (double f0 : f0s) {
        const int e = dilation_factor(f0, c);
        std::ostringstream f;
        f << f0;
        out << std::left << std::setw(12) << c.preset << std::setw(10) << f.str() << std::setw(6) << e
            << receptive_field(c, e) << "\n";
    }
}

int cmd_rf_analyze(const RunConfig& cfg, bool single, const std::string& f0_arg, std::ostream& out) {
    std::vector<double> f0s;
    if (f0_arg == "sweep") {
        f0s = {cfg.net.f0_floor};
        for (double f = 50.0; f < cfg.net.f0_ceil; f += 50.0)
            if (f > cfg.net.f0_floor) f0s.push_back(f);
        f0s.push_back(cfg.net.f0_ceil);
    } else {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(f0_arg, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != f0_arg.size() || !(v > 0.0))
            throw std::invalid_argument("rf-analyze: --f0 must be a positive frequency or 'sweep'");
        f0s = {v};
    }
    out << std::left << std::setw(12) << "preset" << std::setw(10) << "f0_hz" << std::setw(6) << "E"
        << "receptive_field\n";
    if (single) {
        rf_rows(cfg.net, f0s, out);
    } else {
        for (const auto& name : preset_names()) {
            NetConfig c = preset_config(name);
            c.sample_rate = cfg.net.sample_rate;
            rf_rows(c, f0s, out);
        }
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pitch-adaptive neural vocoder toolkit", "qpnet"};
    app.require_subcommand(1);
    CommonOptions common;

    auto* synth = app.add_subcommand("synth-corpus", "Write a synthetic WAV/QPF1 corpus and manifest");
    add_common(synth, common);
    std::string synth_out;
    std::optional<int> synth_n;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--n", synth_n, "Number of utterances (default synth.n)");

    auto* extract = app.add_subcommand("extract", "Analyse a WAV file into QPF1 features");
    add_common(extract, common);
    std::string extract_in, extract_out;
    extract->add_option("input", extract_in, "Input WAV")->required()->check(CLI::ExistingFile);
    extract->add_option("--out", extract_out, "Output QPF1 file")->required();

    auto* train = app.add_subcommand("train", "Train a model on a corpus manifest");
    add_common(train, common);
    std::string train_manifest, train_out;
    train->add_option("--manifest", train_manifest, "Corpus manifest")->required();
    train->add_option("--out", train_out, "Output directory")->required();

    auto* gen = app.add_subcommand("generate", "Synthesise a waveform from features");
    add_common(gen, common);
    std::string gen_ckpt, gen_feat, gen_out, gen_mode;
    std::optional<std::string> gen_ratio;
    std::optional<long> gen_samples;
    gen->add_option("--checkpoint", gen_ckpt, "QPW1 checkpoint")->required()->check(CLI::ExistingFile);
    gen->add_option("--features", gen_feat, "QPF1 features")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output WAV")->required();
    gen->add_option("--mode", gen_mode, "argmax or sample (default generate.mode)");
    gen->add_option("--f0-ratio", gen_ratio, "Scale F0 by this ratio, e.g. 3/2");
    gen->add_option("--samples", gen_samples, "Output length (default frames x hop)")->check(CLI::PositiveNumber);

    auto* ev = app.add_subcommand("eval", "F0-scaling evaluation report");
    add_common(ev, common);
    std::string ev_ckpt, ev_manifest, ev_out, ev_ratios, ev_mode;
    bool ev_copy = false;
    ev->add_option("--checkpoint", ev_ckpt, "QPW1 checkpoint")->check(CLI::ExistingFile);
    ev->add_flag("--copy", ev_copy, "Score a loop-back synthesizer that replays the source audio");
    ev->add_option("--manifest", ev_manifest, "Test manifest")->required();
    ev->add_option("--out", ev_out, "Report CSV")->required();
    ev->add_option("--ratios", ev_ratios, "Comma-separated ratios (default eval.ratios)");
    ev->add_option("--mode", ev_mode, "argmax or sample (default generate.mode)");

    auto* rf = app.add_subcommand("rf-analyze", "Print receptive fields per preset and F0");
    add_common(rf, common);
    std::string rf_f0 = "50";
    rf->add_option("--f0", rf_f0, "F0 in Hz, or 'sweep'");

    std::vector<const char*> argv{"qpnet"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        RunConfig cfg = resolve(common);
        if (*synth) return cmd_synth_corpus(cfg, synth_out, synth_n, out);
        if (*extract) return cmd_extract(cfg, extract_in, extract_out, out);
        if (*train) return cmd_train(cfg, train_manifest, train_out, out);
        if (*gen) {
            if (!gen_mode.empty()) cfg.mode = parse_generate_mode(gen_mode);
            return cmd_generate(cfg, gen_ckpt, gen_feat, gen_out, gen_ratio, gen_samples, out);
        }
        if (*ev) {
            if (!ev_mode.empty()) cfg.mode = parse_generate_mode(ev_mode);
            if (!ev_ratios.empty()) cfg.ratios = parse_ratio_list(ev_ratios);
            std::optional<fs::path> ck;
            if (!ev_ckpt.empty()) ck = ev_ckpt;
            return cmd_eval(cfg, ck, ev_copy, ev_manifest, ev_out, out);
        }
        if (*rf) return cmd_rf_analyze(cfg, !common.preset.empty() || !common.config.empty(), rf_f0, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace qpnet
