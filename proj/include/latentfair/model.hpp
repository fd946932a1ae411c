#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentfair/autograd.hpp"
#include "latentfair/data.hpp"
#include "latentfair/rng.hpp"

namespace latentfair {

enum class Backbone { mbconv, resblock };
enum class DiscriminatorInput { sampled, mean };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& s);
std::string to_string(DiscriminatorInput d);
DiscriminatorInput parse_discriminator_input(const std::string& s);

constexpr std::size_t kClassifierBlocks = 3;

struct ModelConfig {
    Resolution resolution{3, 128, 128};
    std::size_t latent_dim = 256;
    std::vector<std::size_t> encoder_widths{32, 64, 128, 256};
    // Empty means the reverse of encoder_widths.
    std::vector<std::size_t> generator_widths{};
    std::vector<std::size_t> discriminator_hidden{256, 128};
    std::size_t num_attr_values = 2;
    std::size_t num_classes = 7;
    Backbone backbone = Backbone::mbconv;
    std::size_t mbconv_expansion = 4;
    std::size_t mbconv_kernel = 3;
    double se_ratio = 0.25;
    std::size_t classifier_grid = 4;
    std::size_t classifier_channels = 64;
    DiscriminatorInput discriminator_input = DiscriminatorInput::sampled;
    double leaky_slope = 0.2;

    std::vector<std::size_t> resolved_generator_widths() const;
    std::size_t bottleneck_height() const { return resolution.height >> encoder_widths.size(); }
    std::size_t bottleneck_width() const { return resolution.width >> encoder_widths.size(); }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
// Rejects unknown keys; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

// Named, ordered parameter store for one component.
class ParameterSet {
public:
    Var& add(const std::string& name, Tensor init);
    const Var& get(const std::string& name) const;
    Var& get(const std::string& name);
    bool contains(const std::string& name) const { return params_.contains(name); }

    std::map<std::string, Var>& all() { return params_; }
    const std::map<std::string, Var>& all() const { return params_; }
    void zero_grad();
    std::size_t scalar_count() const;
    // FNV-1a over names and raw parameter bytes.
    std::uint64_t checksum() const;

private:
    std::map<std::string, Var> params_;
};

struct LatentCode {
    Var mu;      // [N, D]
    Var logvar;  // [N, D]
    Var z;       // [N, D]; undefined until reparameterized
    Tensor eps;  // noise used for z
};

// z = mu + exp(0.5 logvar) * eps
LatentCode reparameterize(const LatentCode& code, const Tensor& eps);
Tensor standard_normal(const Shape& shape, Rng& rng);

class Encoder {
public:
    Encoder(const ModelConfig& cfg, Rng& rng);
    // x: [N, C, H, W]. Returns mu and logvar; sampling is separate.
    LatentCode encode(const Var& x) const;
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

private:
    ModelConfig cfg_;
    ParameterSet params_;
};

class Generator {
public:
    Generator(const ModelConfig& cfg, Rng& rng);
    // z: [N, D] -> [N, C, H, W] in [0, 1]
    Var generate(const Var& z) const;
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

private:
    ModelConfig cfg_;
    ParameterSet params_;
};

class Discriminator {
public:
    Discriminator(const ModelConfig& cfg, Rng& rng);
    // z: [N, D] -> logits [N, K_attr]
    Var discriminate(const Var& z) const;
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

private:
    ModelConfig cfg_;
    ParameterSet params_;
};

struct MBConvSpec {
    std::size_t in_channels = 16;
    std::size_t out_channels = 16;
    std::size_t expansion = 4;
    std::size_t kernel = 3;
    double se_ratio = 0.25;
    bool use_se = true;

    std::size_t expanded() const { return in_channels * expansion; }
    std::size_t squeezed() const;
};

void init_mbconv(ParameterSet& params, const std::string& prefix, const MBConvSpec& spec, Rng& rng);
// Inverted residual: 1x1 expand -> depthwise KxK -> squeeze-excitation -> 1x1 project, + skip when shapes match.
Var mbconv_forward(const Var& x, const ParameterSet& params, const std::string& prefix, const MBConvSpec& spec);

void init_resblock(ParameterSet& params, const std::string& prefix, std::size_t channels, Rng& rng);
Var resblock_forward(const Var& x, const ParameterSet& params, const std::string& prefix, double slope);

class Classifier {
public:
    Classifier(const ModelConfig& cfg, Rng& rng);
    // z: [N, D] -> logits [N, C]
    Var classify(const Var& z) const;
    MBConvSpec block_spec() const;
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

private:
    ModelConfig cfg_;
    ParameterSet params_;
};

struct Checkpoint {
    ModelConfig config;
    std::string phase;  // "init", "vae" or "clf"
    std::uint64_t step = 0;
    std::string rng_state;
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
    // "<component>/<param>" for weights, "optim/<group>/<param>" for momentum buffers.
    std::map<std::string, Tensor> tensors;
};

constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// The four learnable components with one parameter set each. Encoding is the
// same code path for every attribute group.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);
    explicit Model(const Checkpoint& ckpt);

    const ModelConfig& config() const { return cfg_; }
    Encoder encoder;
    Generator generator;
    Discriminator discriminator;
    Classifier classifier;

    std::map<std::string, ParameterSet*> components();
    std::map<std::string, Tensor> state() const;
    void load_state(const std::map<std::string, Tensor>& tensors);

private:
    ModelConfig cfg_;
};

}  // namespace latentfair
