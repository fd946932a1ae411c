#include "latentfair/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "latentfair/ops.hpp"

namespace latentfair {

using ojson = nlohmann::ordered_json;

std::string to_string(Backbone b) { return b == Backbone::mbconv ? "mbconv" : "resblock"; }

Backbone parse_backbone(const std::string& s) {
    if (s == "mbconv") return Backbone::mbconv;
    if (s == "resblock") return Backbone::resblock;
    throw std::invalid_argument("unknown backbone '" + s + "' (expected mbconv|resblock)");
}

std::string to_string(DiscriminatorInput d) { return d == DiscriminatorInput::sampled ? "sampled" : "mean"; }

DiscriminatorInput parse_discriminator_input(const std::string& s) {
    if (s == "sampled") return DiscriminatorInput::sampled;
    if (s == "mean") return DiscriminatorInput::mean;
    throw std::invalid_argument("unknown discriminator input '" + s + "' (expected sampled|mean)");
}

std::vector<std::size_t> ModelConfig::resolved_generator_widths() const {
    if (!generator_widths.empty()) return generator_widths;
    return {encoder_widths.rbegin(), encoder_widths.rend()};
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("model config field '" + field + "': " + why);
    };
    if (latent_dim < 1) fail("latent_dim", "must be >= 1");
    if (encoder_widths.empty()) fail("encoder_widths", "needs at least one stage");
    for (auto w : encoder_widths)
        if (w == 0) fail("encoder_widths", "widths must be positive");
    const auto gw = resolved_generator_widths();
    if (gw.size() != encoder_widths.size()) fail("generator_widths", "must have one width per encoder stage");
    for (auto w : gw)
        if (w == 0) fail("generator_widths", "widths must be positive");
    for (auto w : discriminator_hidden)
        if (w == 0) fail("discriminator_hidden", "widths must be positive");
    if (resolution.channels == 0) fail("resolution", "channels must be positive");
    const std::size_t div = std::size_t{1} << encoder_widths.size();
    if (resolution.height % div != 0 || resolution.width % div != 0 || resolution.height < div ||
        resolution.width < div)
        fail("resolution", "height and width must be divisible by 2^" + std::to_string(encoder_widths.size()));
    if (num_attr_values < 2) fail("num_attr_values", "must be >= 2");
    if (num_classes < 2) fail("num_classes", "must be >= 2");
    if (mbconv_expansion < 1) fail("mbconv_expansion", "must be >= 1");
    if (mbconv_kernel % 2 == 0) fail("mbconv_kernel", "must be odd");
    if (!(se_ratio > 0.0 && se_ratio <= 1.0)) fail("se_ratio", "must lie in (0, 1]");
    if (classifier_grid < 1) fail("classifier_grid", "must be >= 1");
    if (classifier_channels < 1) fail("classifier_channels", "must be >= 1");
}

ojson to_json(const ModelConfig& c) {
    ojson j;
    j["resolution"] = {c.resolution.channels, c.resolution.height, c.resolution.width};
    j["latent_dim"] = c.latent_dim;
    j["encoder_widths"] = c.encoder_widths;
    j["generator_widths"] = c.resolved_generator_widths();
    j["discriminator_hidden"] = c.discriminator_hidden;
    j["num_attr_values"] = c.num_attr_values;
    j["num_classes"] = c.num_classes;
    j["backbone"] = to_string(c.backbone);
    j["mbconv_expansion"] = c.mbconv_expansion;
    j["mbconv_kernel"] = c.mbconv_kernel;
    j["se_ratio"] = c.se_ratio;
    j["classifier_grid"] = c.classifier_grid;
    j["classifier_channels"] = c.classifier_channels;
    j["discriminator_input"] = to_string(c.discriminator_input);
    j["leaky_slope"] = c.leaky_slope;
    return j;
}

ModelConfig model_config_from_json(const ojson& j) {
    static const std::set<std::string> known{"resolution",       "latent_dim",      "encoder_widths",
                                             "generator_widths", "discriminator_hidden", "num_attr_values",
                                             "num_classes",      "backbone",        "mbconv_expansion",
                                             "mbconv_kernel",    "se_ratio",        "classifier_grid",
                                             "classifier_channels", "discriminator_input", "leaky_slope"};
    if (!j.is_object()) throw std::invalid_argument("model config must be an object");
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw std::invalid_argument("model config: unknown key '" + key + "'");
    ModelConfig c;
    try {
        if (j.contains("resolution")) {
            auto r = j.at("resolution").get<std::vector<std::size_t>>();
            if (r.size() != 3) throw std::invalid_argument("model config field 'resolution': expected [c, h, w]");
            c.resolution = {r[0], r[1], r[2]};
        }
        if (j.contains("latent_dim")) c.latent_dim = j.at("latent_dim").get<std::size_t>();
        if (j.contains("encoder_widths")) c.encoder_widths = j.at("encoder_widths").get<std::vector<std::size_t>>();
        if (j.contains("generator_widths"))
            c.generator_widths = j.at("generator_widths").get<std::vector<std::size_t>>();
        if (j.contains("discriminator_hidden"))
            c.discriminator_hidden = j.at("discriminator_hidden").get<std::vector<std::size_t>>();
        if (j.contains("num_attr_values")) c.num_attr_values = j.at("num_attr_values").get<std::size_t>();
        if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<std::size_t>();
        if (j.contains("backbone")) c.backbone = parse_backbone(j.at("backbone").get<std::string>());
        if (j.contains("mbconv_expansion")) c.mbconv_expansion = j.at("mbconv_expansion").get<std::size_t>();
        if (j.contains("mbconv_kernel")) c.mbconv_kernel = j.at("mbconv_kernel").get<std::size_t>();
        if (j.contains("se_ratio")) c.se_ratio = j.at("se_ratio").get<double>();
        if (j.contains("classifier_grid")) c.classifier_grid = j.at("classifier_grid").get<std::size_t>();
        if (j.contains("classifier_channels")) c.classifier_channels = j.at("classifier_channels").get<std::size_t>();
        if (j.contains("discriminator_input"))
            c.discriminator_input = parse_discriminator_input(j.at("discriminator_input").get<std::string>());
        if (j.contains("leaky_slope")) c.leaky_slope = j.at("leaky_slope").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("model config: wrong value type: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

Var& ParameterSet::add(const std::string& name, Tensor init) {
    auto [it, inserted] = params_.emplace(name, Var(std::move(init), true));
    if (!inserted) throw std::logic_error("duplicate parameter '" + name + "'");
    return it->second;
}

const Var& ParameterSet::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second;
}

Var& ParameterSet::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second;
}

void ParameterSet::zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value().size();
    return n;
}

std::uint64_t ParameterSet::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, p] : params_) {
        mix(name.data(), name.size());
        mix(p.value().raw(), p.value().size() * sizeof(double));
    }
    return h;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

// He-style init for layers feeding a rectifier, Glorot-like scale for heads.
void add_linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                double gain = std::sqrt(6.0)) {
    ps.add(name + ".w", uniform_tensor({out, in}, gain / std::sqrt(static_cast<double>(in)), rng));
    ps.add(name + ".b", Tensor({out}, 0.0));
}

void add_conv(ParameterSet& ps, const std::string& name, std::size_t in_per_group, std::size_t out, std::size_t k,
              Rng& rng, double gain = std::sqrt(6.0)) {
    const double fan_in = static_cast<double>(in_per_group * k * k);
    ps.add(name + ".w", uniform_tensor({out, in_per_group, k, k}, gain / std::sqrt(fan_in), rng));
    ps.add(name + ".b", Tensor({out}, 0.0));
}

Var linear_layer(const ParameterSet& ps, const std::string& name, const Var& x) {
    return ops::linear(x, ps.get(name + ".w"), ps.get(name + ".b"));
}

Var conv_layer(const ParameterSet& ps, const std::string& name, const Var& x, ops::Conv2dOptions opt) {
    return ops::conv2d(x, ps.get(name + ".w"), ps.get(name + ".b"), opt);
}

void require_latent(const Var& z, std::size_t dim, const char* who) {
    if (z.value().rank() != 2 || z.shape()[1] != dim)
        throw ShapeError(std::string(who) + ": expected latent [N, " + std::to_string(dim) + "], got " +
                         shape_str(z.shape()));
}

}  // namespace

Tensor standard_normal(const Shape& shape, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

LatentCode reparameterize(const LatentCode& code, const Tensor& eps) {
    if (eps.shape() != code.mu.shape() || code.logvar.shape() != code.mu.shape())
        throw ShapeError("reparameterize: noise " + shape_str(eps.shape()) + " does not match latent " +
                         shape_str(code.mu.shape()));
    Tensor z(code.mu.shape());
    Tensor sigma(code.mu.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        sigma[i] = std::exp(0.5 * code.logvar.value()[i]);
        z[i] = code.mu.value()[i] + sigma[i] * eps[i];
    }
    LatentCode out = code;
    out.eps = eps;
    out.z = Var::make(std::move(z), {code.mu, code.logvar}, [eps, sigma](Node& self) {
        Node& mu = *self.inputs[0];
        Node& lv = *self.inputs[1];
        if (mu.requires_grad) {
            auto& g = mu.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (lv.requires_grad) {
            auto& g = lv.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 0.5 * sigma[i] * eps[i];
        }
    });
    return out;
}

Encoder::Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = cfg.resolution.channels;
    for (std::size_t s = 0; s < cfg.encoder_widths.size(); ++s) {
        add_conv(params_, "conv" + std::to_string(s), in, cfg.encoder_widths[s], 3, rng);
        in = cfg.encoder_widths[s];
    }
    const std::size_t flat = in * cfg.bottleneck_height() * cfg.bottleneck_width();
    add_linear(params_, "mu", flat, cfg.latent_dim, rng, 1.0);
    add_linear(params_, "logvar", flat, cfg.latent_dim, rng, 0.1);
}

LatentCode Encoder::encode(const Var& x) const {
    const auto& r = cfg_.resolution;
    if (x.value().rank() != 4 || x.shape()[1] != r.channels || x.shape()[2] != r.height || x.shape()[3] != r.width)
        throw ShapeError("encode: expected input [N, " + std::to_string(r.channels) + ", " + std::to_string(r.height) +
                         ", " + std::to_string(r.width) + "], got " + shape_str(x.shape()));
    Var h = x;
    for (std::size_t s = 0; s < cfg_.encoder_widths.size(); ++s) {
        h = ops::leaky_relu(conv_layer(params_, "conv" + std::to_string(s), h, {2, 1, 1}), cfg_.leaky_slope);
    }
    h = ops::flatten(h);
    LatentCode code;
    code.mu = linear_layer(params_, "mu", h);
    code.logvar = linear_layer(params_, "logvar", h);
    return code;
}

Generator::Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto widths = cfg.resolved_generator_widths();
    add_linear(params_, "project", cfg.latent_dim, widths[0] * cfg.bottleneck_height() * cfg.bottleneck_width(), rng);
    for (std::size_t s = 0; s < widths.size(); ++s) {
        const std::size_t out = s + 1 < widths.size() ? widths[s + 1] : cfg.resolution.channels;
        add_conv(params_, "conv" + std::to_string(s), widths[s], out, 3, rng,
                 s + 1 < widths.size() ? std::sqrt(6.0) : 1.0);
    }
}

Var Generator::generate(const Var& z) const {
    require_latent(z, cfg_.latent_dim, "generate");
    const auto widths = cfg_.resolved_generator_widths();
    const std::size_t n = z.shape()[0];
    Var h = ops::leaky_relu(linear_layer(params_, "project", z), cfg_.leaky_slope);
    h = ops::reshape(h, {n, widths[0], cfg_.bottleneck_height(), cfg_.bottleneck_width()});
    for (std::size_t s = 0; s < widths.size(); ++s) {
        h = conv_layer(params_, "conv" + std::to_string(s), ops::upsample2x(h), {1, 1, 1});
        h = s + 1 < widths.size() ? ops::leaky_relu(h, cfg_.leaky_slope) : ops::sigmoid(h);
    }
    return h;
}

Discriminator::Discriminator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    std::size_t in = cfg.latent_dim;
    for (std::size_t l = 0; l < cfg.discriminator_hidden.size(); ++l) {
        add_linear(params_, "fc" + std::to_string(l), in, cfg.discriminator_hidden[l], rng);
        in = cfg.discriminator_hidden[l];
    }
    add_linear(params_, "out", in, cfg.num_attr_values, rng, 1.0);
}

Var Discriminator::discriminate(const Var& z) const {
    require_latent(z, cfg_.latent_dim, "discriminate");
    Var h = z;
    for (std::size_t l = 0; l < cfg_.discriminator_hidden.size(); ++l)
        h = ops::leaky_relu(linear_layer(params_, "fc" + std::to_string(l), h), cfg_.leaky_slope);
    return linear_layer(params_, "out", h);
}

std::size_t MBConvSpec::squeezed() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(in_channels) * se_ratio)));
}

void init_mbconv(ParameterSet& ps, const std::string& prefix, const MBConvSpec& spec, Rng& rng) {
    const std::size_t mid = spec.expanded();
    add_conv(ps, prefix + "expand", spec.in_channels, mid, 1, rng);
    add_conv(ps, prefix + "dw", 1, mid, spec.kernel, rng);
    if (spec.use_se) {
        add_linear(ps, prefix + "se.reduce", mid, spec.squeezed(), rng);
        add_linear(ps, prefix + "se.expand", spec.squeezed(), mid, rng, 1.0);
    }
    add_conv(ps, prefix + "project", mid, spec.out_channels, 1, rng, 1.0);
}

Var mbconv_forward(const Var& x, const ParameterSet& ps, const std::string& prefix, const MBConvSpec& spec) {
    if (x.value().rank() != 4 || x.shape()[1] != spec.in_channels)
        throw ShapeError("mbconv: expected " + std::to_string(spec.in_channels) + " input channels, got " +
                         shape_str(x.shape()));
    const std::size_t mid = spec.expanded();
    Var h = ops::silu(conv_layer(ps, prefix + "expand", x, {1, 0, 1}));
    h = ops::silu(conv_layer(ps, prefix + "dw", h, {1, spec.kernel / 2, mid}));
    if (spec.use_se) {
        Var s = ops::global_avg_pool(h);
        s = ops::silu(linear_layer(ps, prefix + "se.reduce", s));
        s = ops::sigmoid(linear_layer(ps, prefix + "se.expand", s));
        h = ops::channel_gate(h, s);
    }
    h = conv_layer(ps, prefix + "project", h, {1, 0, 1});
    if (spec.in_channels == spec.out_channels) h = ops::add(h, x);
    return h;
}

void init_resblock(ParameterSet& ps, const std::string& prefix, std::size_t channels, Rng& rng) {
    add_conv(ps, prefix + "conv0", channels, channels, 3, rng);
    add_conv(ps, prefix + "conv1", channels, channels, 3, rng, 1.0);
}

Var resblock_forward(const Var& x, const ParameterSet& ps, const std::string& prefix, double slope) {
    Var h = ops::leaky_relu(conv_layer(ps, prefix + "conv0", x, {1, 1, 1}), slope);
    h = conv_layer(ps, prefix + "conv1", h, {1, 1, 1});
    return ops::leaky_relu(ops::add(h, x), slope);
}

Classifier::Classifier(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t grid = cfg.classifier_grid, ch = cfg.classifier_channels;
    add_linear(params_, "project", cfg.latent_dim, ch * grid * grid, rng);
    for (std::size_t b = 0; b < kClassifierBlocks; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        if (cfg.backbone == Backbone::mbconv)
            init_mbconv(params_, prefix, block_spec(), rng);
        else
            init_resblock(params_, prefix, ch, rng);
    }
    add_linear(params_, "head", ch, cfg.num_classes, rng, 1.0);
}

MBConvSpec Classifier::block_spec() const {
    MBConvSpec spec;
    spec.in_channels = spec.out_channels = cfg_.classifier_channels;
    spec.expansion = cfg_.mbconv_expansion;
    spec.kernel = cfg_.mbconv_kernel;
    spec.se_ratio = cfg_.se_ratio;
    return spec;
}

Var Classifier::classify(const Var& z) const {
    require_latent(z, cfg_.latent_dim, "classify");
    const std::size_t n = z.shape()[0], grid = cfg_.classifier_grid;
    Var h = ops::silu(linear_layer(params_, "project", z));
    h = ops::reshape(h, {n, cfg_.classifier_channels, grid, grid});
    for (std::size_t b = 0; b < kClassifierBlocks; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        h = cfg_.backbone == Backbone::mbconv ? mbconv_forward(h, params_, prefix, block_spec())
                                              : resblock_forward(h, params_, prefix, cfg_.leaky_slope);
    }
    return linear_layer(params_, "head", ops::global_avg_pool(h));
}

// ---------------------------------------------------------------------------

namespace {

Rng component_rng(std::uint64_t seed, std::uint64_t tag) { return Rng(Rng::derive(seed, tag)); }

template <typename T>
T make_component(const ModelConfig& cfg, std::uint64_t seed, std::uint64_t tag) {
    Rng rng = component_rng(seed, tag);
    return T(cfg, rng);
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : encoder(make_component<Encoder>(cfg, seed, 101)),
      generator(make_component<Generator>(cfg, seed, 102)),
      discriminator(make_component<Discriminator>(cfg, seed, 103)),
      classifier(make_component<Classifier>(cfg, seed, 104)),
      cfg_(cfg) {}

Model::Model(const Checkpoint& ckpt) : Model(ckpt.config, 0) { load_state(ckpt.tensors); }

std::map<std::string, ParameterSet*> Model::components() {
    return {{"classifier", &classifier.params()},
            {"discriminator", &discriminator.params()},
            {"encoder", &encoder.params()},
            {"generator", &generator.params()}};
}

std::map<std::string, Tensor> Model::state() const {
    std::map<std::string, Tensor> out;
    auto dump = [&out](const std::string& comp, const ParameterSet& ps) {
        for (const auto& [name, p] : ps.all()) out.emplace(comp + "/" + name, p.value());
    };
    dump("encoder", encoder.params());
    dump("generator", generator.params());
    dump("discriminator", discriminator.params());
    dump("classifier", classifier.params());
    return out;
}

void Model::load_state(const std::map<std::string, Tensor>& tensors) {
    for (auto& [comp, ps] : components()) {
        for (auto& [name, p] : ps->all()) {
            const std::string key = comp + "/" + name;
            auto it = tensors.find(key);
            if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor '" + key + "'");
            if (it->second.shape() != p.shape())
                throw ShapeError("checkpoint tensor '" + key + "' has shape " + shape_str(it->second.shape()) +
                                 ", model expects " + shape_str(p.shape()));
            p.mutable_value() = it->second;
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'F', 'C', 'K', 'P', 'T', '\0', '\n'};

template <typename T>
void put_le(std::string& out, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ojson header;
    header["format"] = "latentfair-checkpoint";
    header["version"] = kCheckpointVersion;
    header["config"] = to_json(ckpt.config);
    header["phase"] = ckpt.phase;
    header["step"] = ckpt.step;
    header["rng_state"] = ckpt.rng_state;
    header["metadata"] = ckpt.metadata;
    ojson entries = ojson::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        ojson e;
        e["name"] = name;
        e["dtype"] = "f64le";
        e["shape"] = t.shape();
        e["offset"] = offset;
        e["nbytes"] = t.size() * sizeof(double);
        offset += t.size() * sizeof(double);
        entries.push_back(e);
    }
    header["tensors"] = entries;
    const std::string head = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, head.size());
    out += head;
    out.reserve(out.size() + offset);
    for (const auto& [_, t] : ckpt.tensors) out.append(reinterpret_cast<const char*>(t.raw()), t.size() * sizeof(double));
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a latentfair checkpoint (bad magic)");
    std::size_t pos = sizeof(kMagic);
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint format version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    const auto head_len = get_le<std::uint64_t>(bytes, pos);
    if (pos + head_len > bytes.size()) throw std::runtime_error("checkpoint truncated");
    const ojson header = ojson::parse(bytes.substr(pos, head_len));
    pos += head_len;
    if (header.value("format", "") != "latentfair-checkpoint" || header.value("version", 0u) != kCheckpointVersion)
        throw std::runtime_error("checkpoint header has an unexpected format tag");

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.phase = header.at("phase").get<std::string>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    ckpt.metadata = header.value("metadata", ojson::object());
    const std::size_t payload = pos;
    for (const auto& e : header.at("tensors")) {
        if (e.at("dtype").get<std::string>() != "f64le") throw std::runtime_error("unsupported tensor dtype");
        const Shape shape = e.at("shape").get<Shape>();
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto nbytes = e.at("nbytes").get<std::uint64_t>();
        if (nbytes != numel(shape) * sizeof(double) || payload + offset + nbytes > bytes.size())
            throw std::runtime_error("checkpoint tensor '" + e.at("name").get<std::string>() + "' is corrupt");
        Tensor t(shape);
        std::memcpy(t.raw(), bytes.data() + payload + offset, nbytes);
        ckpt.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

}  // namespace latentfair
