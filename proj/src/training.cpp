#include "latentfair/training.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "latentfair/ops.hpp"

namespace latentfair {

using ojson = nlohmann::ordered_json;

std::string to_string(Phase p) { return p == Phase::vae ? "vae" : "clf"; }

Phase parse_phase(const std::string& s) {
    if (s == "vae") return Phase::vae;
    if (s == "clf") return Phase::clf;
    throw std::invalid_argument("unknown phase '" + s + "'");
}

void TrainingConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("training config field '" + field + "': " + why);
    };
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
    if (!(alpha >= 0.0)) fail("alpha", "must be >= 0");
    if (batch_size == 0) fail("batch_size", "must be positive");
    if (vae_epochs < 1) fail("vae_epochs", "must be >= 1");
    if (clf_epochs < 1) fail("clf_epochs", "must be >= 1");
    if (disc_steps_per_enc_step < 1) fail("disc_steps_per_enc_step", "must be >= 1");
    if (protected_attribute.empty() || protected_attribute.size() > 2)
        fail("protected_attribute", "must name one attribute or a pair");
    if (!(kl_weight >= 0.0)) fail("kl_weight", "must be >= 0");
    if (!(adversarial_weight >= 0.0)) fail("adversarial_weight", "must be >= 0");
    if (sce_a < 0.0 || sce_b < 0.0 || (sce_a == 0.0 && sce_b == 0.0)) fail("sce_a", "weights must be >= 0, not both 0");
    if (style_widths.empty()) fail("style_widths", "needs at least one layer");
    if (!(grad_clip >= 0.0)) fail("grad_clip", "must be >= 0");
    if (!(style_input_std > 0.0)) fail("style_input_std", "must be > 0");
}

ojson to_json(const TrainingConfig& c) {
    ojson j;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["alpha"] = c.alpha;
    j["batch_size"] = c.batch_size;
    j["vae_epochs"] = c.vae_epochs;
    j["clf_epochs"] = c.clf_epochs;
    j["disc_steps_per_enc_step"] = c.disc_steps_per_enc_step;
    j["seed"] = c.seed;
    j["precision"] = c.precision;
    j["adversarial_form"] = to_string(c.adversarial_form);
    j["augment_vae"] = c.augment_vae;
    j["augment_clf"] = c.augment_clf;
    j["protected_attribute"] = c.protected_attribute;
    j["kl_weight"] = c.kl_weight;
    j["adversarial_weight"] = c.adversarial_weight;
    j["autoencoder"] = c.autoencoder;
    j["sce_a"] = c.sce_a;
    j["sce_b"] = c.sce_b;
    j["sce_log_zero"] = c.sce_log_zero;
    j["sample_at_eval"] = c.sample_at_eval;
    j["style_widths"] = c.style_widths;
    j["style_include_input"] = c.style_include_input;
    j["style_input_mean"] = c.style_input_mean;
    j["style_input_std"] = c.style_input_std;
    j["grad_clip"] = c.grad_clip;
    j["kl_warmup_epochs"] = c.kl_warmup_epochs;
    return j;
}

TrainingConfig training_config_from_json(const ojson& j) {
    if (!j.is_object()) throw std::invalid_argument("training config must be an object");
    const ojson defaults = to_json(TrainingConfig{});
    for (const auto& [key, _] : j.items())
        if (!defaults.contains(key)) throw std::invalid_argument("training config: unknown key '" + key + "'");
    TrainingConfig c;
    try {
        auto get = [&j](const char* key, auto& dst) {
            if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
        };
        get("lr", c.lr);
        get("momentum", c.momentum);
        get("alpha", c.alpha);
        get("batch_size", c.batch_size);
        get("vae_epochs", c.vae_epochs);
        get("clf_epochs", c.clf_epochs);
        get("disc_steps_per_enc_step", c.disc_steps_per_enc_step);
        get("seed", c.seed);
        get("precision", c.precision);
        if (j.contains("adversarial_form"))
            c.adversarial_form = parse_adversarial_form(j.at("adversarial_form").get<std::string>());
        get("augment_vae", c.augment_vae);
        get("augment_clf", c.augment_clf);
        if (j.contains("protected_attribute")) {
            const auto& pa = j.at("protected_attribute");
            c.protected_attribute =
                pa.is_string() ? std::vector<std::string>{pa.get<std::string>()} : pa.get<std::vector<std::string>>();
        }
        get("kl_weight", c.kl_weight);
        get("adversarial_weight", c.adversarial_weight);
        get("autoencoder", c.autoencoder);
        get("sce_a", c.sce_a);
        get("sce_b", c.sce_b);
        get("sce_log_zero", c.sce_log_zero);
        get("sample_at_eval", c.sample_at_eval);
        get("style_widths", c.style_widths);
        get("style_include_input", c.style_include_input);
        get("style_input_mean", c.style_input_mean);
        get("style_input_std", c.style_input_std);
        get("grad_clip", c.grad_clip);
        get("kl_warmup_epochs", c.kl_warmup_epochs);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("training config: wrong value type: ") + e.what());
    }
    c.validate();
    return c;
}

void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
                double momentum) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw ShapeError("sgd_update: parameter, gradient and velocity sizes differ");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw NonFiniteError("sgd_update: non-finite gradient at element " + std::to_string(i));
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
}

void SgdOptimizer::step(std::vector<std::pair<std::string, ParameterSet*>> groups) {
    // validate everything first so a bad gradient leaves all parameters untouched
    double sq = 0.0;
    for (auto& [comp, ps] : groups)
        for (auto& [name, p] : ps->all())
            for (double g : p.grad().data()) {
                if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in " + comp + "/" + name);
                sq += g * g;
            }
    const double norm = std::sqrt(sq);
    const double factor = clip_norm_ > 0.0 && norm > clip_norm_ ? clip_norm_ / norm : 1.0;
    for (auto& [comp, ps] : groups) {
        for (auto& [name, p] : ps->all()) {
            auto [it, _] = velocity_.try_emplace(comp + "/" + name, Tensor(p.shape(), 0.0));
            if (factor != 1.0) {
                Tensor g = p.grad();
                for (auto& v : g.data()) v *= factor;
                sgd_update(p.mutable_value().data(), g.data(), it->second.data(), lr_, momentum_);
            } else {
                sgd_update(p.mutable_value().data(), p.grad().data(), it->second.data(), lr_, momentum_);
            }
        }
    }
}

void SgdOptimizer::save(std::map<std::string, Tensor>& out) const {
    for (const auto& [k, v] : velocity_) out["optim/" + name_ + "/" + k] = v;
}

void SgdOptimizer::load(const std::map<std::string, Tensor>& in) {
    const std::string prefix = "optim/" + name_ + "/";
    for (const auto& [k, v] : in)
        if (k.rfind(prefix, 0) == 0) velocity_[k.substr(prefix.size())] = v;
}

// ---------------------------------------------------------------------------

void TrainingLog::add_step(StepRecord rec) {
    if (!steps_.empty() && rec.step <= steps_.back().step)
        throw std::logic_error("training log steps must be strictly increasing");
    order_.emplace_back(true, steps_.size());
    steps_.push_back(std::move(rec));
}

void TrainingLog::add_epoch(EpochRecord rec) {
    order_.emplace_back(false, epochs_.size());
    epochs_.push_back(std::move(rec));
}

void TrainingLog::append(const TrainingLog& other) {
    for (auto [is_step, i] : other.order_) {
        if (is_step)
            add_step(other.steps_[i]);
        else
            add_epoch(other.epochs_[i]);
    }
}

std::size_t TrainingLog::steps_in_phase(Phase p) const {
    std::size_t n = 0;
    for (const auto& s : steps_) n += s.phase == p;
    return n;
}

std::vector<double> TrainingLog::epoch_series(Phase p, const std::string& name) const {
    std::vector<double> out;
    for (const auto& e : epochs_) {
        if (e.phase != p) continue;
        for (const auto& [k, v] : e.metrics)
            if (k == name) out.push_back(v);
    }
    return out;
}

namespace {

std::string fmt_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string TrainingLog::serialize() const {
    std::ostringstream os;
    for (auto [is_step, i] : order_) {
        if (is_step) {
            const auto& s = steps_[i];
            for (const auto& [k, v] : s.scalars)
                os << s.step << '\t' << to_string(s.phase) << '\t' << k << '\t' << fmt_value(v) << '\n';
        } else {
            const auto& e = epochs_[i];
            for (const auto& [k, v] : e.metrics)
                os << "epoch:" << e.epoch << '\t' << to_string(e.phase) << '\t' << k << '\t' << fmt_value(v) << '\n';
        }
    }
    return os.str();
}

TrainingLog TrainingLog::parse(const std::string& text) {
    TrainingLog log;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::optional<StepRecord> pending_step;
    std::optional<EpochRecord> pending_epoch;
    auto flush = [&] {
        if (pending_step) log.add_step(std::move(*pending_step));
        if (pending_epoch) log.add_epoch(std::move(*pending_epoch));
        pending_step.reset();
        pending_epoch.reset();
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key, phase, name, value;
        if (!std::getline(ls, key, '\t') || !std::getline(ls, phase, '\t') || !std::getline(ls, name, '\t') ||
            !std::getline(ls, value))
            throw std::runtime_error("training log line " + std::to_string(line_no) + " is malformed");
        const Phase p = parse_phase(phase);
        const double v = std::stod(value);
        if (key.rfind("epoch:", 0) == 0) {
            const std::size_t e = std::stoul(key.substr(6));
            if (!pending_epoch || pending_epoch->epoch != e || pending_epoch->phase != p) {
                flush();
                pending_epoch = EpochRecord{e, p, {}};
            }
            pending_epoch->metrics.emplace_back(name, v);
        } else {
            const std::uint64_t s = std::stoull(key);
            if (!pending_step || pending_step->step != s) {
                flush();
                pending_step = StepRecord{s, p, {}};
            }
            pending_step->scalars.emplace_back(name, v);
        }
    }
    flush();
    return log;
}

// ---------------------------------------------------------------------------

AttributeGrouping group_records(const DatasetManifest& manifest, const std::vector<std::string>& attribute) {
    if (attribute.empty() || attribute.size() > 2)
        throw std::invalid_argument("protected attribute must name one attribute or a pair");
    AttributeGrouping g;
    const std::size_t a = manifest.schema.index_of(attribute[0]);
    const auto& first = manifest.schema.attributes()[a];
    if (attribute.size() == 1) {
        g.name = first.name;
        g.values = first.values;
        for (const auto& r : manifest.records) g.group_of_record.push_back(r.attrs[a]);
        return g;
    }
    const std::size_t b = manifest.schema.index_of(attribute[1]);
    const Attribute prod = manifest.schema.product(attribute[0], attribute[1]);
    const std::size_t kb = manifest.schema.attributes()[b].values.size();
    g.name = prod.name;
    g.values = prod.values;
    for (const auto& r : manifest.records) g.group_of_record.push_back(r.attrs[a] * kb + r.attrs[b]);
    return g;
}

Tensor stack_pixels(const std::vector<ImageSample>& samples, std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("stack_pixels: empty batch");
    const Shape& s = samples.at(indices[0]).pixels.shape();
    Shape out_shape{indices.size()};
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    Tensor out(out_shape);
    const std::size_t per = numel(s);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& p = samples.at(indices[i]).pixels;
        if (p.shape() != s) throw ShapeError("stack_pixels: inconsistent sample shapes");
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<long>(i * per));
    }
    return out;
}

namespace {

Tensor batch_pixels(const std::vector<ImageSample>& samples, std::span<const std::size_t> idx, bool augment_on,
                    Rng& rng) {
    if (!augment_on) return stack_pixels(samples, idx);
    std::vector<ImageSample> aug;
    aug.reserve(idx.size());
    std::vector<std::size_t> local;
    for (std::size_t i : idx) {
        local.push_back(aug.size());
        aug.push_back(augment(samples.at(i), rng));
    }
    return stack_pixels(aug, local);
}

Checkpoint snapshot(const Model& model, const std::string& phase, std::uint64_t step, const Rng& rng,
                    const std::vector<const SgdOptimizer*>& optimizers, const TrainingConfig& cfg) {
    Checkpoint c;
    c.config = model.config();
    c.phase = phase;
    c.step = step;
    c.rng_state = rng.state();
    c.metadata["training"] = to_json(cfg);
    c.tensors = model.state();
    for (const auto* o : optimizers) o->save(c.tensors);
    return c;
}

double argmax_accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits[i * k + j] > logits[i * k + best]) best = j;
        hits += best == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

void check_finite(const Var& loss, const char* what, const Model& model, std::uint64_t step, const Rng& rng,
                  const std::vector<const SgdOptimizer*>& opts, const TrainingConfig& cfg, const std::string& phase) {
    if (!std::isfinite(loss.value().item()))
        throw TrainingAborted(std::string("non-finite ") + what + " loss at step " + std::to_string(step),
                              snapshot(model, phase, step - 1, rng, opts, cfg));
}

void check_resolution(const ModelConfig& mc, const DatasetManifest& m) {
    if (!(mc.resolution == m.resolution))
        throw std::invalid_argument("manifest resolution " + shape_str(m.resolution.shape()) +
                                    " does not match model resolution " + shape_str(mc.resolution.shape()));
}

struct Mean {
    double sum = 0.0;
    std::size_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    double value() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

}  // namespace

TrainResult train_vae(const TrainingConfig& cfg, const ModelConfig& model_cfg, const DatasetManifest& train,
                      const std::vector<ImageSample>& samples) {
    cfg.validate();
    model_cfg.validate();
    check_resolution(model_cfg, train);
    if (samples.size() != train.records.size()) throw std::invalid_argument("train_vae: samples do not match manifest");
    const AttributeGrouping grouping = group_records(train, cfg.protected_attribute);
    if (grouping.values.size() != model_cfg.num_attr_values)
        throw std::invalid_argument("protected attribute '" + grouping.name + "' has " +
                                    std::to_string(grouping.values.size()) + " values, model expects " +
                                    std::to_string(model_cfg.num_attr_values));

    Model model(model_cfg, cfg.seed);
    const auto extractor = StyleFeatureExtractor::random(model_cfg.resolution.channels, cfg.style_widths, cfg.seed,
                                                         cfg.style_include_input, cfg.style_input_mean,
                                                         cfg.style_input_std);
    Rng rng(Rng::derive(cfg.seed, 1));
    BalancedBatcher batcher(grouping.group_of_record, grouping.values.size(), cfg.batch_size);
    SgdOptimizer opt_eg("encgen", cfg.lr, cfg.momentum, cfg.grad_clip);
    SgdOptimizer opt_d("disc", cfg.lr, cfg.momentum, cfg.grad_clip);
    const std::vector<const SgdOptimizer*> opts{&opt_eg, &opt_d};
    VaeLossWeights weights{cfg.autoencoder ? 0.0 : cfg.kl_weight, cfg.adversarial_weight, cfg.alpha};
    const double kl_target = weights.kl;
    const bool disc_on_mean = model_cfg.discriminator_input == DiscriminatorInput::mean || cfg.autoencoder;

    auto latent = [&](const LatentCode& code, std::size_t n) {
        if (cfg.autoencoder) return code;
        return reparameterize(code, standard_normal({n, model_cfg.latent_dim}, rng));
    };

    TrainResult result;
    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.vae_epochs; ++epoch) {
        Mean m_kl, m_adv, m_style, m_total, m_dce, m_dacc;
        if (cfg.kl_warmup_epochs > 0)
            weights.kl = kl_target * std::min(1.0, static_cast<double>(epoch - 1) / static_cast<double>(cfg.kl_warmup_epochs));
        for (const auto& batch : batcher.epoch(rng)) {
            ++step;
            const std::size_t n = batch.size();
            std::vector<std::size_t> attrs;
            for (std::size_t i : batch) attrs.push_back(grouping.group_of_record[i]);
            const Var x(batch_pixels(samples, batch, cfg.augment_vae, rng));

            double disc_ce = 0.0, disc_acc = 0.0;
            for (std::size_t k = 0; k < cfg.disc_steps_per_enc_step; ++k) {
                LatentCode frozen = model.encoder.encode(x);
                frozen.mu = frozen.mu.detach();
                frozen.logvar = frozen.logvar.detach();
                frozen = latent(frozen, n);
                const Var zin = disc_on_mean ? frozen.mu : frozen.z.detach();
                const Var logits = model.discriminator.discriminate(zin);
                const Var loss = discriminator_loss(logits, attrs);
                check_finite(loss, "discriminator", model, step, rng, opts, cfg, "vae");
                model.discriminator.params().zero_grad();
                backward(loss);
                try {
                    opt_d.step({{"discriminator", &model.discriminator.params()}});
                } catch (const NonFiniteError& e) {
                    throw TrainingAborted(e.what(), snapshot(model, "vae", step - 1, rng, opts, cfg));
                }
                disc_ce = loss.value().item();
                disc_acc = argmax_accuracy(logits.value(), attrs);
            }

            const LatentCode code = latent(model.encoder.encode(x), n);
            const Var z = cfg.autoencoder ? code.mu : code.z;
            const Var x_hat = model.generator.generate(z);
            const Var logits = model.discriminator.discriminate(disc_on_mean ? code.mu : z);
            VAELossBreakdown br;
            try {
                br = vae_total_loss(x, code, x_hat, logits, attrs, extractor, weights, cfg.adversarial_form);
            } catch (const std::domain_error& e) {
                throw TrainingAborted(std::string("non-finite VAE loss at step ") + std::to_string(step) + ": " +
                                          e.what(),
                                      snapshot(model, "vae", step - 1, rng, opts, cfg));
            }
            model.encoder.params().zero_grad();
            model.generator.params().zero_grad();
            backward(br.total);
            try {
                opt_eg.step({{"encoder", &model.encoder.params()}, {"generator", &model.generator.params()}});
            } catch (const NonFiniteError& e) {
                throw TrainingAborted(e.what(), snapshot(model, "vae", step - 1, rng, opts, cfg));
            }
            model.discriminator.params().zero_grad();

            StepRecord rec{step, Phase::vae,
                           {{"kl", br.kl.value().item()},
                            {"adv", br.adversarial.value().item()},
                            {"style", br.style.value().item()},
                            {"total", br.total.value().item()},
                            {"disc_ce", disc_ce},
                            {"disc_acc", disc_acc}}};
            m_kl.add(rec.scalars[0].second);
            m_adv.add(rec.scalars[1].second);
            m_style.add(rec.scalars[2].second);
            m_total.add(rec.scalars[3].second);
            m_dce.add(disc_ce);
            m_dacc.add(disc_acc);
            result.log.add_step(std::move(rec));
        }
        result.log.add_epoch({epoch,
                              Phase::vae,
                              {{"kl", m_kl.value()},
                               {"adv", m_adv.value()},
                               {"style", m_style.value()},
                               {"total", m_total.value()},
                               {"disc_ce", m_dce.value()},
                               {"disc_acc", m_dacc.value()}}});
    }
    result.checkpoint = snapshot(model, "vae", step, rng, opts, cfg);
    return result;
}

ClassifierResult train_classifier(const TrainingConfig& cfg, const DatasetManifest& train,
                                  const std::vector<ImageSample>& samples, const Checkpoint& vae,
                                  const DatasetManifest* validation,
                                  const std::vector<ImageSample>* validation_samples) {
    cfg.validate();
    if (vae.phase != "vae" && vae.phase != "clf")
        throw std::invalid_argument("checkpoint/config mismatch: expected a VAE checkpoint, got phase '" + vae.phase +
                                    "'");
    if (vae.config.num_classes != train.num_classes)
        throw std::invalid_argument("checkpoint/config mismatch: checkpoint has " +
                                    std::to_string(vae.config.num_classes) + " classes, manifest has " +
                                    std::to_string(train.num_classes));
    check_resolution(vae.config, train);
    if (samples.size() != train.records.size())
        throw std::invalid_argument("train_classifier: samples do not match manifest");

    Model model(vae);
    const std::uint64_t encoder_sum = model.encoder.params().checksum();
    Rng rng(Rng::derive(cfg.seed, 2));
    SgdOptimizer opt_c("clf", cfg.lr, cfg.momentum, cfg.grad_clip);
    // carried along so the final checkpoint keeps the VAE optimizer state
    SgdOptimizer opt_eg("encgen", cfg.lr, cfg.momentum), opt_d("disc", cfg.lr, cfg.momentum);
    opt_eg.load(vae.tensors);
    opt_d.load(vae.tensors);
    const std::vector<const SgdOptimizer*> opts{&opt_eg, &opt_d, &opt_c};

    // Without augmentation the frozen encoder's latents are fixed; compute them once.
    std::vector<Tensor> cached_mu;
    if (!cfg.augment_clf) {
        std::vector<std::size_t> all(samples.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        for (std::size_t off = 0; off < all.size(); off += 256) {
            std::span<const std::size_t> chunk(all.data() + off, std::min<std::size_t>(256, all.size() - off));
            const Tensor mu = model.encoder.encode(Var(stack_pixels(samples, chunk))).mu.value();
            const std::size_t d = mu.dim(1);
            for (std::size_t i = 0; i < chunk.size(); ++i)
                cached_mu.emplace_back(Shape{d}, std::vector<double>(mu.raw() + i * d, mu.raw() + (i + 1) * d));
        }
    }

    ClassifierResult result;
    std::uint64_t step = vae.step;
    for (std::size_t epoch = 1; epoch <= cfg.clf_epochs; ++epoch) {
        Mean m_loss, m_acc;
        for (const auto& batch : shuffled_batches(samples.size(), cfg.batch_size, rng)) {
            ++step;
            std::vector<std::size_t> labels;
            for (std::size_t i : batch) labels.push_back(samples[i].expression);
            Var mu;
            if (cfg.augment_clf) {
                mu = model.encoder.encode(Var(batch_pixels(samples, batch, true, rng))).mu.detach();
            } else {
                const std::size_t d = vae.config.latent_dim;
                Tensor t({batch.size(), d});
                for (std::size_t i = 0; i < batch.size(); ++i)
                    std::copy(cached_mu[batch[i]].data().begin(), cached_mu[batch[i]].data().end(),
                              t.data().begin() + static_cast<long>(i * d));
                mu = Var(std::move(t));
            }
            const Var logits = model.classifier.classify(mu);
            const Var loss = symmetric_cross_entropy(logits, labels, cfg.sce_a, cfg.sce_b, cfg.sce_log_zero);
            check_finite(loss, "classifier", model, step, rng, opts, cfg, "clf");
            model.classifier.params().zero_grad();
            backward(loss);
            try {
                opt_c.step({{"classifier", &model.classifier.params()}});
            } catch (const NonFiniteError& e) {
                throw TrainingAborted(e.what(), snapshot(model, "clf", step - 1, rng, opts, cfg));
            }
            const double acc = argmax_accuracy(logits.value(), labels);
            m_loss.add(loss.value().item());
            m_acc.add(acc);
            result.log.add_step({step, Phase::clf, {{"sce", loss.value().item()}, {"acc", acc}}});
        }
        EpochRecord er{epoch, Phase::clf, {{"sce", m_loss.value()}, {"acc", m_acc.value()}}};
        if (validation && validation_samples) {
            const Checkpoint current = snapshot(model, "clf", step, rng, opts, cfg);
            const PredictionTable preds = evaluate(current, *validation, *validation_samples);
            const AttributeGrouping vg = group_records(*validation, cfg.protected_attribute);
            PredictionTable grouped = preds;
            grouped.attribute_names = {vg.name};
            for (std::size_t i = 0; i < grouped.rows.size(); ++i)
                grouped.rows[i].attrs = {vg.values[vg.group_of_record[i]]};
            double score = 0.0, mean_acc = 0.0, fairness = 0.0;
            try {
                const FairnessReport rep = attribute_report(grouped, vg.name);
                mean_acc = rep.mean_accuracy;
                fairness = rep.score.fairness;
                score = mean_acc * fairness;
            } catch (const MetricsError&) {
                score = 0.0;
            }
            er.metrics.emplace_back("val_mean_acc", mean_acc);
            er.metrics.emplace_back("val_fairness", fairness);
            er.metrics.emplace_back("val_score", score);
            if (score > result.best_score) {
                result.best_score = score;
                result.best_checkpoint = current;
                result.best_checkpoint.metadata["best_epoch"] = epoch;
                result.best_checkpoint.metadata["best_score"] = score;
            }
        }
        result.log.add_epoch(std::move(er));
    }
    if (model.encoder.params().checksum() != encoder_sum)
        throw std::logic_error("encoder parameters changed during classifier training");
    result.final_checkpoint = snapshot(model, "clf", step, rng, opts, cfg);
    if (result.best_score < 0.0) result.best_checkpoint = result.final_checkpoint;
    return result;
}

namespace {

Tensor latent_batch(const Model& model, const Tensor& pixels, Rng& rng, bool use_sampled) {
    LatentCode code = model.encoder.encode(Var(pixels));
    if (!use_sampled) return code.mu.value();
    return reparameterize(code, standard_normal(code.mu.shape(), rng)).z.value();
}

}  // namespace

PredictionTable evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                         const std::vector<ImageSample>& samples, const EvalOptions& opt) {
    check_resolution(ckpt.config, manifest);
    if (manifest.num_classes != ckpt.config.num_classes)
        throw std::invalid_argument("evaluate: manifest has " + std::to_string(manifest.num_classes) +
                                    " classes, checkpoint has " + std::to_string(ckpt.config.num_classes));
    if (samples.size() != manifest.records.size()) throw std::invalid_argument("evaluate: samples do not match manifest");
    const Model model(ckpt);
    Rng rng(Rng::derive(opt.seed, 3));
    PredictionTable table;
    table.num_classes = manifest.num_classes;
    for (const auto& a : manifest.schema.attributes()) table.attribute_names.push_back(a.name);
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t off = 0; off < all.size(); off += opt.batch_size) {
        std::span<const std::size_t> chunk(all.data() + off, std::min(opt.batch_size, all.size() - off));
        const Tensor z = latent_batch(model, stack_pixels(samples, chunk), rng, opt.sample_latent);
        const Tensor logits = model.classifier.classify(Var(z)).value();
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (logits[i * k + j] > logits[i * k + best]) best = j;
            const Record& r = manifest.records[chunk[i]];
            PredictionRow row{r.path, r.expression, best, {}};
            for (std::size_t a = 0; a < manifest.schema.size(); ++a)
                row.attrs.push_back(manifest.schema.attributes()[a].values[r.attrs[a]]);
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

double discriminator_accuracy(const Checkpoint& ckpt, const DatasetManifest& manifest,
                              const std::vector<ImageSample>& samples, const std::vector<std::string>& attribute,
                              const EvalOptions& opt) {
    check_resolution(ckpt.config, manifest);
    const AttributeGrouping g = group_records(manifest, attribute);
    if (g.values.size() != ckpt.config.num_attr_values)
        throw std::invalid_argument("discriminator_accuracy: attribute arity does not match checkpoint");
    const Model model(ckpt);
    Rng rng(Rng::derive(opt.seed, 4));
    const bool sampled = opt.sample_latent && ckpt.config.discriminator_input == DiscriminatorInput::sampled;
    std::size_t hits = 0;
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t off = 0; off < all.size(); off += opt.batch_size) {
        std::span<const std::size_t> chunk(all.data() + off, std::min(opt.batch_size, all.size() - off));
        const Tensor z = latent_batch(model, stack_pixels(samples, chunk), rng, sampled);
        const Tensor logits = model.discriminator.discriminate(Var(z)).value();
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (logits[i * k + j] > logits[i * k + best]) best = j;
            hits += best == g.group_of_record[chunk[i]];
        }
    }
    return samples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace latentfair
