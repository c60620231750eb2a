#include "qpnet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace qpnet {

AnalysisParams FeatureConfig::resolve(int sample_rate) const {
    auto samples = [&](double ms) { return static_cast<int>(std::lround(ms * sample_rate / 1000.0)); };
    AnalysisParams ap;
    ap.f0.frame_len = samples(f0_frame_ms);
    ap.f0.frame_hop = samples(hop_ms);
    ap.f0.f0_min = f0_min;
    ap.f0.f0_max = f0_max;
    ap.f0.voicing_threshold = voicing_threshold;
    ap.mcep.frame_len = samples(mcep_frame_ms);
    ap.mcep.frame_hop = samples(hop_ms);
    ap.mcep.n_mels = n_mels;
    ap.mcep.dim = mcep_dim;
    ap.mcep.log_floor = log_floor;
    ap.f0.validate(sample_rate);
    ap.mcep.validate();
    return ap;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* b = text.data();
    const char* e = b + text.size();
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) throw std::invalid_argument("config: bad value '" + text + "' for " + key);
    return v;
}

struct Key {
    std::string name;  // "section.key"
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Field>
Key num(std::string name, Field field) {
    return {name,
            [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<T>(name, v); },
            [field](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>)
                    return fmt(field(c));
                else
                    return std::to_string(field(c));
            }};
}

const std::vector<Key>& keys() {
    static const std::vector<Key> k = [] {
        std::vector<Key> v;
        v.push_back(num<std::uint64_t>("run.seed", [](auto& c) -> auto& { return c.seed; }));
        v.push_back(num<int>("run.threads", [](auto& c) -> auto& { return c.threads; }));

        v.push_back({"net.preset", [](RunConfig& c, const std::string& s) { c.net.preset = s; },
                     [](const RunConfig& c) { return c.net.preset; }});
        v.push_back(num<int>("net.fixed_layers", [](auto& c) -> auto& { return c.net.fixed_layers; }));
        v.push_back(num<int>("net.fixed_repeats", [](auto& c) -> auto& { return c.net.fixed_repeats; }));
        v.push_back(num<int>("net.adaptive_layers", [](auto& c) -> auto& { return c.net.adaptive_layers; }));
        v.push_back(num<int>("net.adaptive_repeats", [](auto& c) -> auto& { return c.net.adaptive_repeats; }));
        v.push_back(num<int>("net.residual_channels", [](auto& c) -> auto& { return c.net.residual_channels; }));
        v.push_back(num<int>("net.skip_channels", [](auto& c) -> auto& { return c.net.skip_channels; }));
        v.push_back(num<int>("net.a", [](auto& c) -> auto& { return c.net.a; }));
        v.push_back(num<int>("net.sample_rate", [](auto& c) -> auto& { return c.net.sample_rate; }));
        v.push_back(num<double>("net.f0_floor", [](auto& c) -> auto& { return c.net.f0_floor; }));
        v.push_back(num<double>("net.f0_ceil", [](auto& c) -> auto& { return c.net.f0_ceil; }));

        v.push_back(num<double>("features.f0_frame_ms", [](auto& c) -> auto& { return c.features.f0_frame_ms; }));
        v.push_back(num<double>("features.mcep_frame_ms", [](auto& c) -> auto& { return c.features.mcep_frame_ms; }));
        v.push_back(num<double>("features.hop_ms", [](auto& c) -> auto& { return c.features.hop_ms; }));
        v.push_back(num<double>("features.f0_min", [](auto& c) -> auto& { return c.features.f0_min; }));
        v.push_back(num<double>("features.f0_max", [](auto& c) -> auto& { return c.features.f0_max; }));
        v.push_back(num<double>("features.voicing_threshold",
                                [](auto& c) -> auto& { return c.features.voicing_threshold; }));
        v.push_back(num<int>("features.n_mels", [](auto& c) -> auto& { return c.features.n_mels; }));
        v.push_back(num<int>("features.mcep_dim", [](auto& c) -> auto& { return c.features.mcep_dim; }));
        v.push_back(num<double>("features.log_floor", [](auto& c) -> auto& { return c.features.log_floor; }));

        v.push_back(num<int>("synth.n", [](auto& c) -> auto& { return c.corpus_size; }));
        v.push_back(num<double>("synth.duration", [](auto& c) -> auto& { return c.corpus.duration; }));
        v.push_back(num<int>("synth.sample_rate", [](auto& c) -> auto& { return c.corpus.sample_rate; }));
        v.push_back(num<double>("synth.f0_low", [](auto& c) -> auto& { return c.corpus.f0_low; }));
        v.push_back(num<double>("synth.f0_high", [](auto& c) -> auto& { return c.corpus.f0_high; }));
        v.push_back(num<int>("synth.voiced_segments", [](auto& c) -> auto& { return c.corpus.voiced_segments; }));
        v.push_back(num<double>("synth.unvoiced_weight", [](auto& c) -> auto& { return c.corpus.unvoiced_weight; }));
        v.push_back(num<int>("synth.harmonics", [](auto& c) -> auto& { return c.corpus.harmonic_count; }));
        v.push_back(num<double>("synth.spectral_tilt", [](auto& c) -> auto& { return c.corpus.spectral_tilt; }));
        v.push_back(num<double>("synth.noise_level", [](auto& c) -> auto& { return c.corpus.noise_level; }));

        v.push_back(num<double>("train.learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
        v.push_back(num<int>("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
        v.push_back(num<int>("train.crop_len", [](auto& c) -> auto& { return c.train.crop_len; }));
        v.push_back(num<int>("train.max_steps", [](auto& c) -> auto& { return c.train.max_steps; }));
        v.push_back(num<int>("train.checkpoint_every", [](auto& c) -> auto& { return c.train.checkpoint_every; }));
        v.push_back(num<double>("train.beta1", [](auto& c) -> auto& { return c.train.beta1; }));
        v.push_back(num<double>("train.beta2", [](auto& c) -> auto& { return c.train.beta2; }));
        v.push_back(num<double>("train.epsilon", [](auto& c) -> auto& { return c.train.epsilon; }));

        v.push_back({"generate.mode", [](RunConfig& c, const std::string& s) { c.mode = parse_generate_mode(s); },
                     [](const RunConfig& c) { return std::string(c.mode == GenerateMode::Argmax ? "argmax" : "sample"); }});

        v.push_back({"eval.ratios",
                     [](RunConfig& c, const std::string& s) {
                         c.ratios = (s == "default") ? default_ratios() : parse_ratio_list(s);
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         for (std::size_t i = 0; i < c.ratios.size(); ++i) out += (i ? "," : "") + c.ratios[i].str();
                         return out;
                     }});
        return v;
    }();
    return k;
}

const Key& find_key(const std::string& name) {
    for (const auto& k : keys())
        if (k.name == name) return k;
    throw std::invalid_argument("config: unknown key '" + name + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string RunConfig::echo() const {
    std::ostringstream os;
    std::string section;
    for (const auto& k : keys()) {
        const auto dot = k.name.find('.');
        const std::string sec = k.name.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << "\n";
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << k.name.substr(dot + 1) << " = " << k.get(*this) << "\n";
    }
    return os.str();
}

RunConfig parse_run_config(const std::string& ini_text, const ConfigSources& flags) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(ini_text);
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }

    std::vector<std::pair<std::string, std::string>> assignments;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw std::invalid_argument("config: key '" + section + "' outside a section");
        for (const auto& [key, value] : body) assignments.emplace_back(section + "." + key, trim(value.data()));
    }
    for (const auto& o : flags.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config: override '" + o + "' is not key=value");
        assignments.emplace_back(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    for (const auto& [name, value] : assignments) find_key(name);

    std::string preset = "tiny-qpnet";
    for (const auto& [name, value] : assignments)
        if (name == "net.preset") preset = value;
    if (flags.preset) preset = *flags.preset;

    RunConfig c;
    c.net = preset_config(preset);
    for (const auto& [name, value] : assignments)
        if (name != "net.preset") find_key(name).set(c, value);
    if (flags.seed) c.seed = *flags.seed;
    if (flags.threads) c.threads = *flags.threads;
    if (c.threads < 0) throw std::invalid_argument("config: threads must be >= 0");
    if (c.corpus_size < 0) throw std::invalid_argument("config: synth.n must be >= 0");

    c.net.aux_dim = 2 + c.features.mcep_dim;
    c.train.seed = c.seed;
    c.corpus.frame_hop = static_cast<int>(std::lround(c.features.hop_ms * c.corpus.sample_rate / 1000.0));
    c.net.validate();
    c.train.validate();
    c.corpus.validate();
    c.features.resolve(c.corpus.sample_rate);
    return c;
}

RunConfig load_run_config(const ConfigSources& sources) {
    std::string text;
    if (sources.file) {
        std::ifstream f(*sources.file);
        if (!f) throw std::runtime_error("cannot open config: " + sources.file->string());
        std::ostringstream ss;
        ss << f.rdbuf();
        text = ss.str();
    }
    return parse_run_config(text, sources);
}

void write_config_echo(const std::filesystem::path& dir, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    const auto path = dir / "config.ini";
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f << cfg.echo();
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace qpnet
