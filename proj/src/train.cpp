#include "qpnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "qpnet/features.hpp"
#include "qpnet/signal.hpp"

namespace qpnet {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("train: learning_rate must be finite and >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (crop_len < 1) throw std::invalid_argument("train: crop_len must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("train: max_steps must be >= 0");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train: moment decays must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("train: epsilon must be > 0");
}

template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const int> targets, Tensor<T>* dlogits, double grad_scale) {
    if (logits.rows() != targets.size())
        throw std::invalid_argument("cross_entropy: " + std::to_string(logits.rows()) + " logit rows for " +
                                    std::to_string(targets.size()) + " targets");
    if (logits.cols() != static_cast<std::size_t>(kOutputClasses))
        throw std::invalid_argument("cross_entropy: logits must have 256 columns");
    const std::size_t L = targets.size();
    if (L == 0) throw std::invalid_argument("cross_entropy: empty sequence");
    if (dlogits) dlogits->resize(L, kOutputClasses);
    const double inv = 1.0 / static_cast<double>(L);

    double total = 0.0;
    std::vector<double> e(kOutputClasses);
    for (std::size_t t = 0; t < L; ++t) {
        const int y = targets[t];
        if (y < 0 || y >= kOutputClasses) throw std::invalid_argument("cross_entropy: target out of range");
        const auto row = logits.row(t);
        double mx = static_cast<double>(row[0]);
        for (int c = 1; c < kOutputClasses; ++c) mx = std::max(mx, static_cast<double>(row[static_cast<std::size_t>(c)]));
        double z = 0.0;
        for (int c = 0; c < kOutputClasses; ++c) {
            e[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(row[static_cast<std::size_t>(c)]) - mx);
            z += e[static_cast<std::size_t>(c)];
        }
        total += std::log(z) - (static_cast<double>(row[static_cast<std::size_t>(y)]) - mx);
        if (dlogits) {
            auto d = dlogits->row(t);
            const double s = grad_scale * inv / z;
            for (int c = 0; c < kOutputClasses; ++c) d[static_cast<std::size_t>(c)] = static_cast<T>(s * e[static_cast<std::size_t>(c)]);
            d[static_cast<std::size_t>(y)] -= static_cast<T>(grad_scale * inv);
        }
    }
    return total * inv;
}

template double cross_entropy<float>(const Tensor<float>&, std::span<const int>, Tensor<float>*, double);
template double cross_entropy<double>(const Tensor<double>&, std::span<const int>, Tensor<double>*, double);

Utterance make_utterance(const Waveform& w, const FrameTrack& track, const NetConfig& cfg) {
    w.validate();
    if (w.sample_rate != cfg.sample_rate)
        throw std::invalid_argument("utterance sample rate " + std::to_string(w.sample_rate) + " differs from model " +
                                    std::to_string(cfg.sample_rate));
    Utterance u;
    u.sample_rate = w.sample_rate;
    u.codes = mulaw_encode(w.samples);
    const std::vector<double> decoded = mulaw_decode(u.codes);
    u.input.assign(decoded.size(), 0.0f);
    for (std::size_t t = 1; t < decoded.size(); ++t) u.input[t] = static_cast<float>(decoded[t - 1]);
    u.cond = build_conditioning(track, w.samples.size());
    if (u.cond.cols() != static_cast<std::size_t>(cfg.aux_dim))
        throw std::invalid_argument("utterance conditioning width " + std::to_string(u.cond.cols()) +
                                    " differs from aux_dim " + std::to_string(cfg.aux_dim));
    u.plan = build_plan(cfg, u.cond);
    return u;
}

Utterance load_utterance(const std::filesystem::path& wav, const std::filesystem::path& qpf, const NetConfig& cfg) {
    const Waveform w = read_wav(wav);
    return make_utterance(w, from_feature_file(read_qpf(qpf), w.sample_rate), cfg);
}

TrainExample crop(const Utterance& u, std::size_t start, std::size_t len) {
    if (len == 0 || start + len > u.length()) throw std::out_of_range("crop: range outside utterance");
    TrainExample ex;
    ex.input.assign(u.input.begin() + static_cast<long>(start), u.input.begin() + static_cast<long>(start + len));
    ex.input[0] = 0.0f;
    ex.targets.assign(u.codes.begin() + static_cast<long>(start), u.codes.begin() + static_cast<long>(start + len));
    ex.cond.resize(len, u.cond.cols());
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t a = 0; a < u.cond.cols(); ++a) ex.cond(t, a) = static_cast<float>(u.cond(start + t, a));
    ex.plan = u.plan.slice(start, len);
    return ex;
}

TrainExample whole(const Utterance& u) { return crop(u, 0, u.length()); }

void fit_cond_normalization(ModelParams<float>& p, std::span<const Utterance> corpus) {
    const auto A = static_cast<std::size_t>(p.config.aux_dim);
    std::vector<double> sum(A, 0.0), sq(A, 0.0);
    double n = 0.0;
    for (const Utterance& u : corpus) {
        if (u.cond.cols() != A) throw std::invalid_argument("fit_cond_normalization: width mismatch");
        for (std::size_t t = 0; t < u.cond.rows(); ++t)
            for (std::size_t a = 0; a < A; ++a) {
                sum[a] += u.cond(t, a);
                sq[a] += u.cond(t, a) * u.cond(t, a);
            }
        n += static_cast<double>(u.cond.rows());
    }
    if (n == 0.0) throw std::invalid_argument("fit_cond_normalization: empty corpus");
    for (std::size_t a = 0; a < A; ++a) {
        const double mean = sum[a] / n;
        const double var = std::max(0.0, sq[a] / n - mean * mean);
        const double sd = std::sqrt(var);
        p.cond_shift(0, a) = static_cast<float>(mean);
        p.cond_scale(0, a) = static_cast<float>(sd > 1e-6 ? 1.0 / sd : 1.0);
    }
}

void adam_update(ModelParams<float>& p, const ModelParams<float>& grads, AdamState& s, const TrainConfig& cfg) {
    auto params = p.trainable();
    const auto g = grads.trainable();
    if (s.m.size() != params.size() || s.v.size() != params.size())
        throw std::invalid_argument("adam_update: optimizer state does not match the model");
    ++s.step;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
    const double lr = cfg.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
        float* w = params[i]->data();
        float* m = s.m[i].data();
        float* v = s.v[i].data();
        const float* gi = g[i]->data();
        const std::size_t n = params[i]->size();
        for (std::size_t j = 0; j < n; ++j) {
            const double gj = gi[j];
            const double mj = b1 * m[j] + (1.0 - b1) * gj;
            const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            w[j] = static_cast<float>(w[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.epsilon));
        }
    }
}

namespace {

std::size_t total_length(std::span<const TrainExample> batch) {
    std::size_t n = 0;
    for (const auto& ex : batch) n += ex.targets.size();
    return n;
}

}  // namespace

double train_step(ModelParams<float>& p, std::span<const TrainExample> batch, AdamState& s, const TrainConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const double total = static_cast<double>(total_length(batch));
    ModelParams<float> grads = zero_params<float>(p.config);
    thread_local ForwardCache<float> cache;
    thread_local Tensor<float> dlogits;
    double loss = 0.0;
    for (const TrainExample& ex : batch) {
        forward<float>(p, ex.input, ex.cond, ex.plan, &cache);
        const double w = static_cast<double>(ex.targets.size()) / total;
        loss += w * cross_entropy<float>(cache.logits, ex.targets, &dlogits, w);
        backward_acc<float>(p, cache, dlogits, grads);
    }
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "train_step: non-finite loss " << loss << " at optimizer step " << s.step + 1;
        throw std::runtime_error(os.str());
    }
    adam_update(p, grads, s, cfg);
    return loss;
}

double batch_loss(const ModelParams<float>& p, std::span<const TrainExample> batch) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    const double total = static_cast<double>(total_length(batch));
    double loss = 0.0;
    for (const TrainExample& ex : batch) {
        const Tensor<float> logits = forward<float>(p, ex.input, ex.cond, ex.plan);
        loss += static_cast<double>(ex.targets.size()) / total * cross_entropy<float>(logits, ex.targets);
    }
    return loss;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected wav<TAB>features");
        ManifestEntry e{line.substr(0, tab), line.substr(tab + 1)};
        if (e.wav.is_relative()) e.wav = base / e.wav;
        if (e.features.is_relative()) e.features = base / e.features;
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    for (const auto& e : entries) f << e.wav.string() << '\t' << e.features.string() << '\n';
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f.precision(9);
    f << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) f << i + 1 << ',' << losses[i] << '\n';
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

namespace {

TrainResult run_training(const TrainConfig& tc, const NetConfig& net, std::span<const Utterance> corpus,
                         const StepLogger& log, const std::function<void(int, const TrainResult&)>& on_step) {
    TrainResult r;
    r.params = init_params<float>(net, tc.seed);
    fit_cond_normalization(r.params, corpus);
    r.optimizer = make_adam_state(r.params);

    std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<TrainExample> batch(static_cast<std::size_t>(tc.batch_size));
    for (int step = 1; step <= tc.max_steps; ++step) {
        for (auto& ex : batch) {
            const auto& u = corpus[std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng)];
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(tc.crop_len), u.length());
            const std::size_t start = std::uniform_int_distribution<std::size_t>(0, u.length() - len)(rng);
            ex = crop(u, start, len);
        }
        const double loss = train_step(r.params, batch, r.optimizer, tc);
        r.losses.push_back(loss);
        if (log) log(step, loss);
        if (on_step) on_step(step, r);
    }
    return r;
}

void check_corpus(std::span<const Utterance> corpus) {
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    for (const auto& u : corpus)
        if (u.length() == 0) throw std::invalid_argument("train: empty utterance in corpus");
}

}  // namespace

TrainResult train_on(const TrainConfig& tc, NetConfig net, std::span<const Utterance> corpus, const StepLogger& log) {
    tc.validate();
    net.validate();
    check_corpus(corpus);
    return run_training(tc, net, corpus, log, {});
}

TrainResult train_loop(const TrainConfig& tc, NetConfig net, const std::filesystem::path& manifest,
                       const std::filesystem::path& out_dir, const StepLogger& log) {
    tc.validate();
    const auto entries = read_manifest(manifest);
    if (entries.empty()) throw std::invalid_argument("train: manifest lists no utterances: " + manifest.string());
    for (const auto& e : entries) {
        if (!std::filesystem::is_regular_file(e.wav)) throw std::runtime_error("train: missing file " + e.wav.string());
        if (!std::filesystem::is_regular_file(e.features))
            throw std::runtime_error("train: missing file " + e.features.string());
    }

    const Waveform first = read_wav(entries.front().wav);
    const FeatureFile first_ff = read_qpf(entries.front().features);
    net.sample_rate = first.sample_rate;
    net.aux_dim = static_cast<int>(first_ff.values.cols());
    net.validate();

    std::vector<Utterance> corpus;
    corpus.reserve(entries.size());
    for (const auto& e : entries) corpus.push_back(load_utterance(e.wav, e.features, net));
    check_corpus(corpus);

    std::filesystem::create_directories(out_dir);
    const auto on_step = [&](int step, const TrainResult& r) {
        if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step != tc.max_steps)
            save_checkpoint(out_dir / ("step_" + std::to_string(step) + ".qpw"), r.params, &r.optimizer);
    };
    TrainResult r = run_training(tc, net, corpus, log, on_step);
    write_loss_csv(out_dir / "loss.csv", r.losses);
    save_checkpoint(out_dir / "model.qpw", r.params, &r.optimizer);
    return r;
}

}  // namespace qpnet
