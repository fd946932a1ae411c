#include "latentfair/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "latentfair/ops.hpp"

namespace latentfair {

std::string to_string(AdversarialForm f) { return f == AdversarialForm::confusion ? "confusion" : "negated"; }

AdversarialForm parse_adversarial_form(const std::string& s) {
    if (s == "confusion") return AdversarialForm::confusion;
    if (s == "negated") return AdversarialForm::negated;
    throw std::invalid_argument("unknown adversarial form '" + s + "' (expected confusion|negated)");
}

Var kl_divergence(const Var& mu, const Var& logvar) {
    if (mu.shape() != logvar.shape() || mu.value().rank() < 1)
        throw ShapeError("kl_divergence: mu " + shape_str(mu.shape()) + " and logvar " + shape_str(logvar.shape()) +
                         " must have equal shapes");
    const std::size_t batch = mu.value().rank() == 1 ? 1 : mu.shape()[0];
    if (batch == 0) throw ShapeError("kl_divergence: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < mu.value().size(); ++i) {
        const double m = mu.value()[i], lv = logvar.value()[i];
        if (!std::isfinite(m) || !std::isfinite(lv)) throw std::domain_error("kl_divergence: non-finite input");
        total += m * m + std::exp(lv) - 1.0 - lv;
    }
    const double inv = 1.0 / static_cast<double>(batch);
    return Var::make(Tensor::scalar(0.5 * total * inv), {mu, logvar}, [inv](Node& self) {
        Node& m = *self.inputs[0];
        Node& lv = *self.inputs[1];
        const double up = self.grad[0] * inv;
        if (m.requires_grad) {
            auto& g = m.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * m.value[i];
        }
        if (lv.requires_grad) {
            auto& g = lv.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * 0.5 * (std::exp(lv.value[i]) - 1.0);
        }
    });
}

Var gram_matrix(const Var& features) {
    const auto& s = features.shape();
    if (s.size() != 4) throw ShapeError("gram_matrix expects [N, C, H, W], got " + shape_str(s));
    const std::size_t n = s[0], c = s[1], area = s[2] * s[3];
    if (n == 0 || c == 0 || area == 0) throw ShapeError("gram_matrix: empty tensor " + shape_str(s));
    const double norm = 1.0 / static_cast<double>(c * area);
    Tensor out({n, c, c});
    const double* f = features.value().raw();
    for (std::size_t b = 0; b < n; ++b) {
        const double* fb = f + b * c * area;
        double* gb = out.raw() + b * c * c;
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = i; j < c; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < area; ++p) acc += fb[i * area + p] * fb[j * area + p];
                gb[i * c + j] = gb[j * c + i] = acc * norm;
            }
    }
    return Var::make(std::move(out), {features}, [n, c, area, norm](Node& self) {
        Node& in = *self.inputs[0];
        double* g = in.grad_buffer().raw();
        const double* f = in.value.raw();
        for (std::size_t b = 0; b < n; ++b) {
            const double* gg = self.grad.raw() + b * c * c;
            const double* fb = f + b * c * area;
            double* gb = g + b * c * area;
            for (std::size_t i = 0; i < c; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double w = (gg[i * c + j] + gg[j * c + i]) * norm;
                    if (w == 0.0) continue;
                    for (std::size_t p = 0; p < area; ++p) gb[i * area + p] += w * fb[j * area + p];
                }
        }
    });
}

StyleFeatureExtractor::StyleFeatureExtractor(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw std::invalid_argument("style extractor needs at least one layer");
    for (const auto& l : layers_) {
        if (l.weight.rank() != 4 || l.bias.shape() != Shape{l.weight.dim(0)})
            throw ShapeError("style extractor layer has inconsistent weight/bias shapes");
        weights_.emplace_back(l.weight, false);
        biases_.emplace_back(l.bias, false);
    }
}

StyleFeatureExtractor StyleFeatureExtractor::random(std::size_t in_channels, const std::vector<std::size_t>& widths,
                                                    std::uint64_t seed, bool include_input, double input_mean,
                                                    double input_std) {
    if (!(input_std > 0.0)) throw std::invalid_argument("style extractor input_std must be > 0");
    Rng rng(Rng::derive(seed, 0x57594c45));
    std::vector<Layer> layers;
    std::size_t in = in_channels;
    for (std::size_t w : widths) {
        Layer l;
        l.weight = Tensor({w, in, 3, 3});
        const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
        for (auto& v : l.weight.data()) v = rng.uniform(-bound, bound);
        l.bias = Tensor({w}, 0.0);
        layers.push_back(std::move(l));
        in = w;
    }
    StyleFeatureExtractor e(std::move(layers));
    e.include_input_ = include_input;
    e.input_mean_ = input_mean;
    e.input_std_ = input_std;
    return e;
}

StyleFeatureExtractor StyleFeatureExtractor::identity() {
    StyleFeatureExtractor e;
    e.identity_ = true;
    return e;
}

std::vector<Var> StyleFeatureExtractor::features(const Var& image) const {
    if (identity_) return {image};
    std::vector<Var> out;
    Var h = image;
    if (input_mean_ != 0.0 || input_std_ != 1.0)
        h = ops::affine(image, 1.0 / input_std_, -input_mean_ / input_std_);
    if (include_input_) out.push_back(h);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = ops::conv2d(h, weights_[i], biases_[i], {layers_[i].stride, layers_[i].padding, 1});
        if (layers_[i].relu) h = ops::relu(h);
        out.push_back(h);
    }
    return out;
}

namespace {

// mean_n sum (a - b)^2 for [N, ...] tensors
Var batch_squared_distance(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw ShapeError("squared distance: shape mismatch");
    const std::size_t n = a.shape()[0];
    double total = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        total += d * d;
    }
    const double inv = 1.0 / static_cast<double>(n);
    return Var::make(Tensor::scalar(total * inv), {a, b}, [inv](Node& self) {
        Node& x = *self.inputs[0];
        Node& y = *self.inputs[1];
        const double up = 2.0 * inv * self.grad[0];
        for (std::size_t i = 0; i < x.value.size(); ++i) {
            const double d = up * (x.value[i] - y.value[i]);
            if (x.requires_grad) x.grad_buffer()[i] += d;
            if (y.requires_grad) y.grad_buffer()[i] -= d;
        }
    });
}

void check_logits(const Var& logits, const char* who) {
    if (logits.value().rank() != 2 || logits.shape()[0] == 0 || logits.shape()[1] == 0)
        throw ShapeError(std::string(who) + ": expected logits [N, K], got " + shape_str(logits.shape()));
}

void check_labels(const Var& logits, std::span<const std::size_t> labels, const char* who) {
    check_logits(logits, who);
    if (labels.size() != logits.shape()[0])
        throw ShapeError(std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.shape()[0]) + " rows");
    for (auto l : labels)
        if (l >= logits.shape()[1])
            throw std::out_of_range(std::string(who) + ": index " + std::to_string(l) + " out of range for " +
                                    std::to_string(logits.shape()[1]) + " classes");
}

// Row-wise log-softmax.
Tensor log_softmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double mx = logits[i * k];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[i * k + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(logits[i * k + j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = logits[i * k + j] - lse;
    }
    return out;
}

// Builds a scalar loss from per-row values and a per-logit gradient table (already batch-averaged).
Var logits_loss(const Var& logits, double value, Tensor dlogits) {
    return Var::make(Tensor::scalar(value), {logits}, [d = std::move(dlogits)](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const double up = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * d[i];
    });
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
    Tensor p = log_softmax_rows(logits);
    for (auto& v : p.data()) v = std::exp(v);
    return p;
}

Var style_loss(const Var& y, const Var& y_hat, const StyleFeatureExtractor& extractor) {
    if (y.shape() != y_hat.shape())
        throw ShapeError("style_loss: y " + shape_str(y.shape()) + " and y_hat " + shape_str(y_hat.shape()) +
                         " differ in shape");
    const auto fy = extractor.features(y);
    const auto fh = extractor.features(y_hat);
    std::vector<std::pair<double, Var>> terms;
    for (std::size_t j = 0; j < fy.size(); ++j)
        terms.emplace_back(1.0, batch_squared_distance(gram_matrix(fh[j]), gram_matrix(fy[j])));
    return ops::weighted_sum(terms);
}

Var discriminator_loss(const Var& logits, std::span<const std::size_t> attrs) {
    check_labels(logits, attrs, "discriminator_loss");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    const Tensor lp = log_softmax_rows(logits.value());
    Tensor d(logits.shape());
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        total -= lp[i * k + attrs[i]];
        for (std::size_t j = 0; j < k; ++j)
            d[i * k + j] = inv * (std::exp(lp[i * k + j]) - (j == attrs[i] ? 1.0 : 0.0));
    }
    return logits_loss(logits, total * inv, std::move(d));
}

Var adversarial_latent_loss(const Var& logits) {
    check_logits(logits, "adversarial_latent_loss");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    const Tensor lp = log_softmax_rows(logits.value());
    Tensor d(logits.shape());
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(n), invk = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            total -= invk * lp[i * k + j];
            d[i * k + j] = inv * (std::exp(lp[i * k + j]) - invk);
        }
    return logits_loss(logits, total * inv, std::move(d));
}

Var negated_discriminator_loss(const Var& logits, std::span<const std::size_t> attrs) {
    return ops::scale(discriminator_loss(logits, attrs), -1.0);
}

Var symmetric_cross_entropy(const Var& logits, std::span<const std::size_t> labels, double a, double b,
                            double log_zero) {
    check_labels(logits, labels, "symmetric_cross_entropy");
    if (a < 0.0 || b < 0.0 || (a == 0.0 && b == 0.0))
        throw std::invalid_argument("symmetric_cross_entropy: weights must be >= 0 and not both zero");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    const Tensor lp = log_softmax_rows(logits.value());
    Tensor d(logits.shape());
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = labels[i];
        const double py = std::exp(lp[i * k + y]);
        const double ce = -lp[i * k + y];
        // -sum_k p_k log q_k with q one-hot: log q_y = 0, log q_k = log_zero elsewhere
        const double rce = -log_zero * (1.0 - py);
        total += a * ce + b * rce;
        for (std::size_t j = 0; j < k; ++j) {
            const double pj = std::exp(lp[i * k + j]);
            const double delta = j == y ? 1.0 : 0.0;
            d[i * k + j] = inv * (a * (pj - delta) + b * log_zero * py * (delta - pj));
        }
    }
    return logits_loss(logits, total * inv, std::move(d));
}

VAELossBreakdown vae_total_loss(const Var& x, const LatentCode& code, const Var& x_hat, const Var& disc_logits,
                                std::span<const std::size_t> attrs, const StyleFeatureExtractor& extractor,
                                const VaeLossWeights& weights, AdversarialForm form) {
    VAELossBreakdown out;
    out.alpha = weights.alpha;
    out.kl = kl_divergence(code.mu, code.logvar);
    out.adversarial = form == AdversarialForm::confusion ? adversarial_latent_loss(disc_logits)
                                                         : negated_discriminator_loss(disc_logits, attrs);
    out.style = style_loss(x, x_hat, extractor);
    out.total = ops::weighted_sum(
        {{weights.kl, out.kl}, {weights.adversarial, out.adversarial}, {weights.alpha, out.style}});
    for (const Var* v : {&out.kl, &out.adversarial, &out.style, &out.total})
        if (!std::isfinite(v->value().item())) throw std::domain_error("vae_total_loss: non-finite loss term");
    return out;
}

}  // namespace latentfair
