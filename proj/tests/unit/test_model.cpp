#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latentfair/losses.hpp"
#include "latentfair/model.hpp"
#include "latentfair/ops.hpp"

using namespace latentfair;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.resolution = {3, 8, 8};
    c.latent_dim = 4;
    c.encoder_widths = {4, 8};
    c.generator_widths = {8, 4};  // explicit, so json round-trips compare equal
    c.discriminator_hidden = {8};
    c.num_classes = 3;
    c.classifier_grid = 2;
    c.classifier_channels = 4;
    return c;
}

Tensor rows_of(const Tensor& t, std::size_t from, std::size_t count) {
    Shape s = t.shape();
    const std::size_t per = t.size() / s[0];
    s[0] = count;
    return Tensor(s, std::vector<double>(t.values().begin() + from * per, t.values().begin() + (from + count) * per));
}

void check_close(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

bool all_finite(const Tensor& t) {
    for (double v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

TEST_CASE("reparameterize examples") {
    LatentCode c;
    c.mu = Var(Tensor({1, 2}, std::vector<double>{1, 2}));
    c.logvar = Var(Tensor({1, 2}, 0.0));
    CHECK(reparameterize(c, Tensor({1, 2}, 0.0)).z.value().values() == std::vector<double>{1, 2});

    c.mu = Var(Tensor({1, 2}, 0.0));
    c.logvar = Var(Tensor({1, 2}, std::vector<double>{2 * std::log(3.0), 0}));
    auto z = reparameterize(c, Tensor({1, 2}, 1.0)).z.value();
    CHECK(z[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(z[1] == 1.0);
    CHECK_THROWS_AS(reparameterize(c, Tensor({1, 3}, 1.0)), ShapeError);
}

TEST_CASE("encoder with zeroed heads returns zero codes") {
    Model m(tiny_config(), 1);
    for (auto* name : {"mu.w", "mu.b", "logvar.w", "logvar.b"}) m.encoder.params().get(name).mutable_value().fill(0.0);
    auto code = m.encoder.encode(Var(Tensor({2, 3, 8, 8}, 0.0)));
    for (double v : code.mu.value().values()) CHECK(v == 0.0);
    for (double v : code.logvar.value().values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(m.encoder.encode(Var(Tensor({1, 3, 4, 4}))), ShapeError);
}

TEST_CASE("components are batch-size equivariant and deterministic") {
    Model m(tiny_config(), 2);
    Rng rng(3);
    Tensor x = random_tensor({3, 3, 8, 8}, rng, 0, 1);
    auto full = m.encoder.encode(Var(x));
    auto last = m.encoder.encode(Var(rows_of(x, 2, 1)));
    // GEMM blocking may differ with batch width, so compare to rounding
    check_close(rows_of(full.mu.value(), 2, 1), last.mu.value());

    Tensor z = random_tensor({3, 4}, rng);
    check_close(rows_of(m.generator.generate(Var(z)).value(), 1, 1), m.generator.generate(Var(rows_of(z, 1, 1))).value());
    check_close(rows_of(m.discriminator.discriminate(Var(z)).value(), 0, 1),
                m.discriminator.discriminate(Var(rows_of(z, 0, 1))).value());
    check_close(rows_of(m.classifier.classify(Var(z)).value(), 2, 1), m.classifier.classify(Var(rows_of(z, 2, 1))).value());
    CHECK(m.classifier.classify(Var(z)).value() == m.classifier.classify(Var(z)).value());
}

TEST_CASE("generator output is an image in [0, 1]") {
    Model m(tiny_config(), 4);
    Rng rng(1);
    Tensor img = m.generator.generate(Var(random_tensor({5, 4}, rng, -20, 20))).value();
    CHECK(img.shape() == Shape{5, 3, 8, 8});
    for (double v : img.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(m.generator.generate(Var(Tensor({1, 5}))), ShapeError);
}

TEST_CASE("discriminator and classifier logits") {
    Model m(tiny_config(), 5);
    Rng rng(2);
    Tensor z = random_tensor({4, 4}, rng);
    Tensor p = softmax_rows(m.discriminator.discriminate(Var(z)).value());
    CHECK(p.shape() == Shape{4, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[2 * i] + p[2 * i + 1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.classifier.classify(Var(z)).shape() == Shape{4, 3});
    CHECK_THROWS_AS(m.discriminator.discriminate(Var(Tensor({1, 3}))), ShapeError);
    CHECK_THROWS_AS(m.classifier.classify(Var(Tensor({1, 3}))), ShapeError);
}

TEST_CASE("mbconv residual and gating identities") {
    Rng rng(9);
    MBConvSpec spec;
    spec.in_channels = spec.out_channels = 16;
    CHECK(spec.expanded() == 64);
    ParameterSet ps;
    init_mbconv(ps, "b.", spec, rng);
    CHECK(ps.get("b.dw.w").shape() == Shape{64, 1, 3, 3});
    Tensor x = random_tensor({2, 16, 4, 4}, rng);

    // forcing the gate to one matches the block without squeeze-excitation
    ps.get("b.se.expand.w").mutable_value().fill(0.0);
    ps.get("b.se.expand.b").mutable_value().fill(40.0);
    MBConvSpec plain = spec;
    plain.use_se = false;
    CHECK(mbconv_forward(Var(x), ps, "b.", spec).value() == mbconv_forward(Var(x), ps, "b.", plain).value());

    ps.get("b.project.w").mutable_value().fill(0.0);
    ps.get("b.project.b").mutable_value().fill(0.0);
    CHECK(mbconv_forward(Var(x), ps, "b.", spec).value() == x);
    CHECK_THROWS_AS(mbconv_forward(Var(Tensor({1, 8, 4, 4})), ps, "b.", spec), ShapeError);
}

TEST_CASE("classifier has three blocks of the configured backbone") {
    auto cfg = tiny_config();
    Model m(cfg, 1);
    for (std::size_t b = 0; b < kClassifierBlocks; ++b)
        CHECK(m.classifier.params().contains("block" + std::to_string(b) + ".project.w"));
    CHECK_FALSE(m.classifier.params().contains("block3.project.w"));
    cfg.backbone = Backbone::resblock;
    Model r(cfg, 1);
    CHECK(r.classifier.params().contains("block2.conv1.w"));
}

TEST_CASE("gradients are finite at random init across seeds") {
    auto cfg = tiny_config();
    auto phi = StyleFeatureExtractor::random(3, {4, 4}, 0);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Model m(cfg, seed);
        Rng rng(seed);
        Var x(random_tensor({2, 3, 8, 8}, rng, 0, 1));
        const std::size_t attrs[] = {0, 1};
        const std::size_t labels[] = {2, 0};
        auto code = reparameterize(m.encoder.encode(x), standard_normal({2, 4}, rng));
        Var xh = m.generator.generate(code.z);
        auto loss = vae_total_loss(x, code, xh, m.discriminator.discriminate(code.z), attrs, phi, {});
        Var total = ops::add(loss.total, discriminator_loss(m.discriminator.discriminate(code.z), attrs));
        total = ops::add(total, symmetric_cross_entropy(m.classifier.classify(code.mu), labels));
        backward(total);
        bool ok = true;
        for (auto& [comp, ps] : m.components())
            for (auto& [name, p] : ps->all()) ok = ok && all_finite(p.grad());
        REQUIRE(ok);
    }
}

TEST_CASE("classifier gradient matches finite differences") {
    auto cfg = tiny_config();
    Model m(cfg, 3);
    Rng rng(4);
    Tensor z = random_tensor({2, 4}, rng);
    const std::size_t labels[] = {1, 2};
    Var& w = m.classifier.params().get("block1.dw.w");
    backward(symmetric_cross_entropy(m.classifier.classify(Var(z)), labels));
    const Tensor analytic = w.grad();
    double worst = 0;
    for (std::size_t i = 0; i < w.value().size(); i += 7) {
        const double keep = w.value()[i];
        auto eval = [&](double d) {
            w.mutable_value()[i] = keep + d;
            return symmetric_cross_entropy(m.classifier.classify(Var(z)), labels).value().item();
        };
        const double num = (eval(1e-5) - eval(-1e-5)) / 2e-5;
        w.mutable_value()[i] = keep;
        if (std::abs(num - analytic[i]) > 1e-8)
            worst = std::max(worst, std::abs(num - analytic[i]) / std::max(std::abs(num), std::abs(analytic[i])));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("weight sharing: one parameter set for every attribute group") {
    Model m(tiny_config(), 6);
    const auto before = m.encoder.params().checksum();
    Rng rng(1);
    for (int group = 0; group < 2; ++group) m.encoder.encode(Var(random_tensor({1, 3, 8, 8}, rng, 0, 1)));
    CHECK(m.encoder.params().checksum() == before);
}

TEST_CASE("checkpoint round-trip") {
    Model m(tiny_config(), 7);
    Checkpoint c;
    c.config = m.config();
    c.phase = "vae";
    c.step = 12;
    c.rng_state = Rng(3).state();
    c.metadata["note"] = "x";
    c.tensors = m.state();
    const std::string bytes = serialize_checkpoint(c);
    Checkpoint back = parse_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.step == 12);
    CHECK(back.config == c.config);
    Model restored(back);
    CHECK(restored.encoder.params().checksum() == m.encoder.params().checksum());
    CHECK_THROWS(parse_checkpoint(bytes.substr(0, bytes.size() / 2)));
    CHECK_THROWS(parse_checkpoint("garbage"));
}

TEST_CASE("model config json") {
    auto cfg = tiny_config();
    CHECK(model_config_from_json(to_json(cfg)) == cfg);
    auto j = to_json(cfg);
    j["bogus"] = 1;
    CHECK_THROWS(model_config_from_json(j));
    cfg.latent_dim = 0;
    CHECK_THROWS(cfg.validate());
}
