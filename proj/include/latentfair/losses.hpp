#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentfair/autograd.hpp"
#include "latentfair/model.hpp"

namespace latentfair {

enum class AdversarialForm { confusion, negated };
std::string to_string(AdversarialForm f);
AdversarialForm parse_adversarial_form(const std::string& s);

// 0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar), averaged over the batch.
// Throws ShapeError on mismatched dims, std::domain_error on non-finite input.
Var kl_divergence(const Var& mu, const Var& logvar);

// features [N, C, H, W] -> [N, C, C], normalized by 1 / (C H W).
Var gram_matrix(const Var& features);

// Fixed feature network for the style-reconstruction term. Parameters are
// constants: gradients flow to the input image, never into the extractor.
class StyleFeatureExtractor {
public:
    struct Layer {
        Tensor weight;  // [Cout, Cin, K, K]
        Tensor bias;    // [Cout]
        std::size_t stride = 2;
        std::size_t padding = 1;
        bool relu = true;
    };

    explicit StyleFeatureExtractor(std::vector<Layer> layers);
    // Randomly initialized conv stack, frozen from `seed`. Inputs are
    // standardized as (x - input_mean) / input_std before the first layer.
    // With include_input the standardized image is also a designated layer.
    static StyleFeatureExtractor random(std::size_t in_channels, const std::vector<std::size_t>& widths,
                                        std::uint64_t seed, bool include_input = false, double input_mean = 0.5,
                                        double input_std = 0.25);
    // phi(x) = x, one designated layer.
    static StyleFeatureExtractor identity();

    // Activations of every designated layer.
    std::vector<Var> features(const Var& image) const;
    std::size_t layer_count() const { return identity_ ? 1 : layers_.size() + (include_input_ ? 1 : 0); }
    const std::vector<Layer>& layers() const { return layers_; }

private:
    StyleFeatureExtractor() = default;
    std::vector<Layer> layers_;
    std::vector<Var> weights_;
    std::vector<Var> biases_;
    bool identity_ = false;
    bool include_input_ = false;
    double input_mean_ = 0.0;
    double input_std_ = 1.0;
};

// sum_j || G_j(y_hat) - G_j(y) ||_F^2, averaged over the batch. alpha is applied by the caller.
Var style_loss(const Var& y, const Var& y_hat, const StyleFeatureExtractor& extractor);

// Mean categorical cross-entropy -log softmax(logits)[attr].
Var discriminator_loss(const Var& logits, std::span<const std::size_t> attrs);

// Encoder-side confusion objective: cross-entropy between softmax(logits) and
// the uniform distribution; its minimum ln(K) is reached at uniform output.
Var adversarial_latent_loss(const Var& logits);

// Negated discriminator cross-entropy (the literal max-player term).
Var negated_discriminator_loss(const Var& logits, std::span<const std::size_t> attrs);

constexpr double kReverseCeLogZero = -4.0;

// a * CE + b * RCE, where RCE = -sum_k p_k log q_k with log 0 clamped to `log_zero`.
Var symmetric_cross_entropy(const Var& logits, std::span<const std::size_t> labels, double a = 1.0, double b = 1.0,
                            double log_zero = kReverseCeLogZero);

Tensor softmax_rows(const Tensor& logits);

struct VaeLossWeights {
    double kl = 1.0;
    double adversarial = 1.0;
    double alpha = 10.0;
};

struct VAELossBreakdown {
    Var kl;
    Var adversarial;
    Var style;
    Var total;
    double alpha = 10.0;
};

// total = w_kl * kl + w_adv * adversarial + alpha * style; with unit weights
// this is exactly kl + adversarial + alpha * style.
VAELossBreakdown vae_total_loss(const Var& x, const LatentCode& code, const Var& x_hat, const Var& disc_logits,
                                std::span<const std::size_t> attrs, const StyleFeatureExtractor& extractor,
                                const VaeLossWeights& weights, AdversarialForm form = AdversarialForm::confusion);

}  // namespace latentfair
