#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latentfair/data.hpp"
#include "latentfair/losses.hpp"
#include "latentfair/metrics.hpp"
#include "latentfair/model.hpp"

namespace latentfair {

enum class Phase { vae, clf };
std::string to_string(Phase p);
Phase parse_phase(const std::string& s);

struct TrainingConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    double alpha = 10.0;
    std::size_t batch_size = 32;
    std::size_t vae_epochs = 50;
    std::size_t clf_epochs = 30;
    std::size_t disc_steps_per_enc_step = 1;
    std::uint64_t seed = 0;
    std::string precision = "f64-cpu";
    AdversarialForm adversarial_form = AdversarialForm::confusion;
    bool augment_vae = true;
    bool augment_clf = true;
    // One attribute name, or two for their Cartesian product.
    std::vector<std::string> protected_attribute{"gender"};
    // Ablation switches: adversarial weight 0 drops the discriminator from the
    // encoder objective; the autoencoder variant has KL weight 0 and z = mu.
    double kl_weight = 1.0;
    double adversarial_weight = 1.0;
    bool autoencoder = false;
    double sce_a = 1.0;
    double sce_b = 1.0;
    double sce_log_zero = kReverseCeLogZero;
    bool sample_at_eval = false;
    std::vector<std::size_t> style_widths{8, 16, 32};
    bool style_include_input = false;
    // Standardization applied to images before the style feature network.
    double style_input_mean = 0.5;
    double style_input_std = 0.25;
    // Global gradient-norm clip per optimizer step; 0 disables.
    double grad_clip = 0.0;
    // Linear ramp of the KL weight from 0 over this many VAE epochs; 0 disables.
    std::size_t kl_warmup_epochs = 0;

    void validate() const;
    bool operator==(const TrainingConfig&) const = default;
};

nlohmann::ordered_json to_json(const TrainingConfig& cfg);
TrainingConfig training_config_from_json(const nlohmann::ordered_json& j);

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Classical momentum: v <- momentum * v + g; p <- p - lr * v.
// Checks every gradient before touching anything; throws NonFiniteError on NaN/Inf.
void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
                double momentum);

// One momentum buffer per parameter of the sets it is stepped with.
class SgdOptimizer {
public:
    SgdOptimizer(std::string name, double lr, double momentum, double clip_norm = 0.0)
        : name_(std::move(name)), lr_(lr), momentum_(momentum), clip_norm_(clip_norm) {}
    void step(std::vector<std::pair<std::string, ParameterSet*>> groups);
    void save(std::map<std::string, Tensor>& out) const;
    void load(const std::map<std::string, Tensor>& in);

private:
    std::string name_;
    double lr_;
    double momentum_;
    double clip_norm_;
    std::map<std::string, Tensor> velocity_;
};

struct StepRecord {
    std::uint64_t step = 0;
    Phase phase = Phase::vae;
    std::vector<std::pair<std::string, double>> scalars;
};

struct EpochRecord {
    std::size_t epoch = 0;
    Phase phase = Phase::vae;
    std::vector<std::pair<std::string, double>> metrics;
};

// Serialized one scalar per line: "<step>\t<phase>\t<name>\t<value>" for step
// records and "epoch:<n>\t<phase>\t<name>\t<value>" for epoch records.
constexpr unsigned kLogVersion = 1;

class TrainingLog {
public:
    void add_step(StepRecord rec);
    void add_epoch(EpochRecord rec);
    void append(const TrainingLog& other);
    const std::vector<StepRecord>& steps() const { return steps_; }
    const std::vector<EpochRecord>& epochs() const { return epochs_; }
    std::size_t steps_in_phase(Phase p) const;
    // Epoch-level series of one metric for one phase.
    std::vector<double> epoch_series(Phase p, const std::string& name) const;

    std::string serialize() const;
    static TrainingLog parse(const std::string& text);

private:
    std::vector<StepRecord> steps_;
    std::vector<EpochRecord> epochs_;
    std::vector<std::pair<bool, std::size_t>> order_;  // (is_step, index) in insertion order
};

class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, Checkpoint last_good)
        : std::runtime_error(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return last_good_; }

private:
    Checkpoint last_good_;
};

// Protected-attribute grouping of a manifest; a pair of names forms their product.
struct AttributeGrouping {
    std::string name;
    std::vector<std::string> values;
    std::vector<std::size_t> group_of_record;
};
AttributeGrouping group_records(const DatasetManifest& manifest, const std::vector<std::string>& attribute);

struct TrainResult {
    Checkpoint checkpoint;
    TrainingLog log;
};

struct ClassifierResult {
    Checkpoint final_checkpoint;
    Checkpoint best_checkpoint;
    double best_score = -1.0;
    TrainingLog log;
};

// Adversarial VAE phase. Per batch: discriminator step(s) on detached latents,
// then one encoder/generator step on kl + adversarial + alpha * style with the
// discriminator held fixed. Expression labels are never read.
TrainResult train_vae(const TrainingConfig& cfg, const ModelConfig& model_cfg, const DatasetManifest& train,
                      const std::vector<ImageSample>& samples);

// Classifier phase on the frozen encoder (mu path), symmetric cross-entropy.
// With a validation set, best = highest mean accuracy x fairness.
ClassifierResult train_classifier(const TrainingConfig& cfg, const DatasetManifest& train,
                                  const std::vector<ImageSample>& samples, const Checkpoint& vae,
                                  const DatasetManifest* validation = nullptr,
                                  const std::vector<ImageSample>* validation_samples = nullptr);

struct EvalOptions {
    bool sample_latent = false;
    std::uint64_t seed = 0;
    std::size_t batch_size = 64;
};

// argmax classify(encode(x).mu) per record, manifest order.
PredictionTable evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                         const std::vector<ImageSample>& samples, const EvalOptions& opt = {});

// Accuracy of the checkpoint's discriminator at recovering `attribute` from latents.
double discriminator_accuracy(const Checkpoint& ckpt, const DatasetManifest& manifest,
                              const std::vector<ImageSample>& samples, const std::vector<std::string>& attribute,
                              const EvalOptions& opt = {});

// Stacks samples[indices] into an [N, C, H, W] tensor.
Tensor stack_pixels(const std::vector<ImageSample>& samples, std::span<const std::size_t> indices);

}  // namespace latentfair
