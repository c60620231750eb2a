#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qpnet/checkpoint.hpp"
#include "qpnet/dilation.hpp"
#include "qpnet/net.hpp"

namespace qpnet {

struct TrainConfig {
    double learning_rate = 2e-4;
    int batch_size = 4;
    int crop_len = 4000;
    int max_steps = 1000;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // 0: final checkpoint only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Mean over samples of -log softmax(logits[t])[targets[t]]. When `dlogits`
// is given it receives d(mean loss)/d(logits) scaled by `grad_scale`.
template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const int> targets, Tensor<T>* dlogits = nullptr,
                     double grad_scale = 1.0);

// One utterance prepared for teacher forcing.
struct Utterance {
    std::vector<int> codes;       // targets
    std::vector<float> input;     // decoded previous sample, 0 at t = 0
    ConditioningMatrix cond;      // raw per-sample conditioning
    DilationPlan plan;
    int sample_rate = 0;

    std::size_t length() const { return codes.size(); }
};

struct TrainExample {
    std::vector<float> input;
    Tensor<float> cond;
    DilationPlan plan;
    std::vector<int> targets;
};

Utterance make_utterance(const Waveform& w, const FrameTrack& track, const NetConfig& cfg);
Utterance load_utterance(const std::filesystem::path& wav, const std::filesystem::path& qpf, const NetConfig& cfg);

// [start, start + len) of an utterance with zero history before `start`.
TrainExample crop(const Utterance& u, std::size_t start, std::size_t len);
TrainExample whole(const Utterance& u);

// Column means and inverse standard deviations over every sample of the
// corpus, written into cond_shift / cond_scale.
void fit_cond_normalization(ModelParams<float>& p, std::span<const Utterance> corpus);

// Bias-corrected adaptive-moment update of every trainable tensor.
void adam_update(ModelParams<float>& p, const ModelParams<float>& grads, AdamState& s, const TrainConfig& cfg);

// Forward, backward and one update over the batch. Items are visited in
// order and their gradients summed in that order, so the result does not
// depend on the thread count. Returns the batch mean loss; throws
// std::runtime_error on a non-finite loss before touching the parameters.
double train_step(ModelParams<float>& p, std::span<const TrainExample> batch, AdamState& s, const TrainConfig& cfg);

// Mean loss of a batch without updating anything.
double batch_loss(const ModelParams<float>& p, std::span<const TrainExample> batch);

struct ManifestEntry {
    std::filesystem::path wav, features;
};

// One "wav<TAB>features" pair per line; relative paths resolve against the
// manifest's directory. Blank lines are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct TrainResult {
    ModelParams<float> params;
    AdamState optimizer;
    std::vector<double> losses;
};

using StepLogger = std::function<void(int step, double loss)>;

// Loads the corpus (sample rate and conditioning width are taken from the
// data), fits conditioning normalisation, trains for max_steps on random
// crops, and writes loss.csv plus model.qpw into `out_dir`. Periodic
// checkpoints go to step_<n>.qpw. Missing files or an empty manifest are
// reported before the first step.
TrainResult train_loop(const TrainConfig& tc, NetConfig net, const std::filesystem::path& manifest,
                       const std::filesystem::path& out_dir, const StepLogger& log = {});

// Same, over an in-memory corpus; writes nothing.
TrainResult train_on(const TrainConfig& tc, NetConfig net, std::span<const Utterance> corpus,
                     const StepLogger& log = {});

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses);

}  // namespace qpnet
