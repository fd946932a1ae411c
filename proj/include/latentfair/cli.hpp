#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentfair/data.hpp"
#include "latentfair/metrics.hpp"
#include "latentfair/model.hpp"
#include "latentfair/training.hpp"

namespace latentfair::cli {

namespace fs = std::filesystem;

// Bad configuration or arguments; maps to exit status 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitAbort = 2;

// Either explicit manifests or a synthetic dataset generated into `synth_dir`
// on first use.
struct DataConfig {
    fs::path train_manifest;
    fs::path val_manifest;
    fs::path test_manifest;
    std::optional<SynthConfig> synth;
    fs::path synth_dir;
};

struct MetricsConfig {
    // "name" or "a*b" for an intersection.
    std::vector<std::string> attributes;
    std::string format = "table";
    // Which classifier checkpoint the ablation evaluates: "final" or "best".
    std::string checkpoint = "final";
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainingConfig training;
    MetricsConfig metrics;
    fs::path out_dir = "runs/latentfair";
};

// Relative paths are resolved against `base_dir`. Unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::ordered_json& j, const fs::path& base_dir = {});
nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig load_run_config(const fs::path& path);
void write_run_config(const RunConfig& cfg, const fs::path& path);

nlohmann::ordered_json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::ordered_json& j);

// Command-line flags; each one overrides exactly one config key.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> out;
    std::vector<std::string> attributes;
    bool no_discriminator = false;
    bool autoencoder = false;
    std::optional<std::string> backbone;
    std::optional<std::string> adversarial;
};
void apply_overrides(RunConfig& cfg, const Overrides& o);

struct Dataset {
    DatasetManifest train;
    std::optional<DatasetManifest> val;
    std::optional<DatasetManifest> test;
};
// Loads the manifests, generating the synthetic set first when configured and absent.
Dataset prepare_data(const DataConfig& cfg);

SynthDataset cmd_synth(const SynthConfig& cfg, const fs::path& out_dir);

struct TrainOutputs {
    fs::path run_dir;
    Checkpoint vae;
    ClassifierResult classifier;
    TrainingLog log;
};
// Writes config.json, vae.ckpt, final.ckpt, best.ckpt and train.log into cfg.out_dir.
// On a training abort the last good checkpoint is saved as aborted.ckpt before rethrowing.
TrainOutputs cmd_train(const RunConfig& cfg);

// Predictions for `manifest` (defaults to the config's test split), written to `out` when non-empty.
PredictionTable cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& manifest = {},
                         const fs::path& out = {});

struct AuditResult {
    std::vector<FairnessReport> reports;
    std::string rendered;
};
AuditResult cmd_audit(const fs::path& predictions, const std::vector<std::string>& attributes,
                      ReportFormat format = ReportFormat::table);

struct AblationCell {
    std::string name;
    bool autoencoder = false;
    bool discriminator = true;
    Backbone backbone = Backbone::mbconv;
    fs::path run_dir;
    bool ok = false;
    std::string error;
    double mean_accuracy = 0.0;
    std::vector<double> fairness;  // one per audited attribute
    double discriminator_accuracy = 0.0;
};

struct AblationResult {
    std::vector<std::string> attributes;
    std::vector<AblationCell> cells;
    std::string rendered;
};

// The {VAE, AE} x {discriminator on, off} x {mbconv, resblock} grid, every
// cell with the same seed. A failing cell is recorded and the grid continues.
AblationResult cmd_ablate(const RunConfig& cfg);
std::string render_ablation(const AblationResult& result);

// Entry point for the command-line tool; returns the process exit status.
int run(int argc, char** argv);

}  // namespace latentfair::cli
