#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "latentfair/ops.hpp"
#include "latentfair/training.hpp"

using namespace latentfair;
using testutil::TempDir;

namespace {

ModelConfig tiny_model(std::size_t classes = 4) {
    ModelConfig m;
    m.resolution = {3, 8, 8};
    m.latent_dim = 4;
    m.encoder_widths = {4, 8};
    m.discriminator_hidden = {8};
    m.num_classes = classes;
    m.classifier_grid = 2;
    m.classifier_channels = 4;
    return m;
}

TrainingConfig tiny_training() {
    TrainingConfig t;
    t.lr = 0.01;
    t.batch_size = 8;
    t.vae_epochs = 1;
    t.clf_epochs = 1;
    t.protected_attribute = {"group"};
    t.style_widths = {4, 4};
    t.grad_clip = 1.0;
    return t;
}

struct SynthFixture {
    TempDir dir{"training"};
    SynthDataset ds;
    std::vector<ImageSample> train, test;
    explicit SynthFixture(SynthConfig cfg) {
        ds = synth_generate(cfg, dir.path);
        train = load_samples(ds.train);
        test = load_samples(ds.test);
    }
};

SynthConfig small_synth(std::size_t classes = 4) {
    SynthConfig c;
    c.train_samples = 64;
    c.val_samples = 16;
    c.test_samples = 10;
    c.resolution = {3, 8, 8};
    c.num_classes = classes;
    return c;
}

double last_epoch_metric(const TrainingLog& log, Phase p, const std::string& name) {
    auto s = log.epoch_series(p, name);
    REQUIRE(!s.empty());
    return s.back();
}

}  // namespace

TEST_CASE("sgd update examples") {
    double p = 1.0, v = 0.0;
    const double g = 2.0;
    sgd_update({&p, 1}, {&g, 1}, {&v, 1}, 0.1, 0.0);
    CHECK(p == doctest::Approx(0.8).epsilon(1e-15));

    double q = 0.0, w = 0.0;
    const double one = 1.0;
    sgd_update({&q, 1}, {&one, 1}, {&w, 1}, 1.0, 0.9);
    CHECK(w == 1.0);
    CHECK(q == -1.0);
    sgd_update({&q, 1}, {&one, 1}, {&w, 1}, 1.0, 0.9);
    CHECK(w == doctest::Approx(1.9).epsilon(1e-15));
    CHECK(q == doctest::Approx(-2.9).epsilon(1e-15));

    // zero gradient: velocity decays geometrically and p converges
    const double zero = 0.0;
    double prev = q;
    for (int i = 0; i < 400; ++i) {
        prev = q;
        sgd_update({&q, 1}, {&zero, 1}, {&w, 1}, 1.0, 0.9);
    }
    CHECK(std::abs(q - prev) < 1e-15);
    CHECK(std::abs(w) < 1e-15);
}

TEST_CASE("sgd update matches a hand-iterated scalar oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const double lr = rng.uniform(1e-4, 1.0), mom = rng.uniform(0.0, 0.99);
        double p = rng.uniform(-1, 1), v = 0.0;
        double op = p, ov = 0.0;
        for (int i = 0; i < 10; ++i) {
            const double g = rng.uniform(-2, 2);
            sgd_update({&p, 1}, {&g, 1}, {&v, 1}, lr, mom);
            ov = mom * ov + g;
            op = op - lr * ov;
        }
        CHECK(std::abs(p - op) <= 1e-12);
        CHECK(std::abs(v - ov) <= 1e-12);
    }
}

TEST_CASE("sgd update rejects bad input without touching state") {
    double p[2] = {1, 2}, v[2] = {0, 0};
    const double g1[1] = {1};
    CHECK_THROWS_AS(sgd_update(p, g1, v, 0.1, 0.9), ShapeError);
    const double bad[2] = {1, std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(sgd_update(p, bad, v, 0.1, 0.9), NonFiniteError);
    CHECK(p[0] == 1.0);
    CHECK(v[0] == 0.0);
}

TEST_CASE("optimizer clips the global gradient norm") {
    ParameterSet ps;
    Var& w = ps.add("w", Tensor({2}, std::vector<double>{0, 0}));
    // gradient (3, 4), norm 5
    backward(ops::sum(ops::mul(w, Var(Tensor({2}, std::vector<double>{3, 4})))));
    SgdOptimizer opt("t", 1.0, 0.0, 1.0);
    opt.step({{"c", &ps}});
    CHECK(w.value()[0] == doctest::Approx(-0.6).epsilon(1e-12));
    CHECK(w.value()[1] == doctest::Approx(-0.8).epsilon(1e-12));

    std::map<std::string, Tensor> saved;
    opt.save(saved);
    CHECK(saved.contains("optim/t/c/w"));
}

TEST_CASE("training config json and validation") {
    auto t = tiny_training();
    CHECK(training_config_from_json(to_json(t)) == t);
    auto j = to_json(t);
    j["learning_rate"] = 0.1;
    CHECK_THROWS(training_config_from_json(j));
    j = to_json(t);
    j["protected_attribute"] = "group";
    CHECK(training_config_from_json(j).protected_attribute == std::vector<std::string>{"group"});

    t.lr = 0;
    CHECK_THROWS_WITH_AS(t.validate(), doctest::Contains("'lr'"), std::invalid_argument);
    t = tiny_training();
    t.momentum = 1.0;
    CHECK_THROWS(t.validate());
    t = tiny_training();
    t.disc_steps_per_enc_step = 0;
    CHECK_THROWS(t.validate());
    t = tiny_training();
    t.vae_epochs = 0;
    CHECK_THROWS(t.validate());
}

TEST_CASE("training log round-trips") {
    TrainingLog log;
    log.add_step({1, Phase::vae, {{"kl", 0.1}, {"adv", 1.0 / 3.0}}});
    log.add_step({2, Phase::vae, {{"kl", 0.2}}});
    log.add_epoch({1, Phase::vae, {{"kl", 0.15}}});
    log.add_step({3, Phase::clf, {{"sce", 2.0}}});
    const auto text = log.serialize();
    auto back = TrainingLog::parse(text);
    CHECK(back.serialize() == text);
    CHECK(back.steps_in_phase(Phase::vae) == 2);
    CHECK(back.steps()[0].scalars[1].second == 1.0 / 3.0);
    CHECK(back.epoch_series(Phase::vae, "kl") == std::vector<double>{0.15});
    CHECK_THROWS(log.add_step({3, Phase::clf, {}}));
}

TEST_CASE("one epoch on 64 samples with batch 8 logs 8 steps per phase") {
    SynthFixture fx(small_synth());
    auto cfg = tiny_training();
    auto vae = train_vae(cfg, tiny_model(), fx.ds.train, fx.train);
    CHECK(vae.log.steps_in_phase(Phase::vae) == 8);
    CHECK(vae.checkpoint.phase == "vae");
    auto clf = train_classifier(cfg, fx.ds.train, fx.train, vae.checkpoint);
    CHECK(clf.log.steps_in_phase(Phase::clf) == 8);

    TrainingLog all = vae.log;
    all.append(clf.log);
    std::uint64_t prev = 0;
    for (const auto& s : all.steps()) {
        CHECK(s.step > prev);
        prev = s.step;
    }
    for (const auto* name : {"kl", "adv", "style", "total", "disc_ce"})
        CHECK(!vae.log.epoch_series(Phase::vae, name).empty());
    CHECK(!clf.log.epoch_series(Phase::clf, "sce").empty());

    // frozen encoder
    Model before(vae.checkpoint), after(clf.final_checkpoint);
    CHECK(before.encoder.params().checksum() == after.encoder.params().checksum());
    CHECK(before.discriminator.params().checksum() == after.discriminator.params().checksum());
    CHECK(before.classifier.params().checksum() != after.classifier.params().checksum());
}

TEST_CASE("training is deterministic in the seed") {
    SynthFixture fx(small_synth());
    auto cfg = tiny_training();
    auto a = train_vae(cfg, tiny_model(), fx.ds.train, fx.train);
    auto b = train_vae(cfg, tiny_model(), fx.ds.train, fx.train);
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
    CHECK(a.log.serialize() == b.log.serialize());
    auto ca = train_classifier(cfg, fx.ds.train, fx.train, a.checkpoint);
    auto cb = train_classifier(cfg, fx.ds.train, fx.train, b.checkpoint);
    CHECK(serialize_checkpoint(ca.final_checkpoint) == serialize_checkpoint(cb.final_checkpoint));

    cfg.seed = 1;
    auto c = train_vae(cfg, tiny_model(), fx.ds.train, fx.train);
    CHECK(serialize_checkpoint(a.checkpoint) != serialize_checkpoint(c.checkpoint));
}

TEST_CASE("classifier separates an easy two-class set") {
    auto sc = small_synth(2);
    sc.train_samples = 128;
    sc.expression_contrast = 0.4;
    sc.expression_jitter = 0.0;
    sc.noise = 0.02;
    SynthFixture fx(sc);
    auto cfg = tiny_training();
    cfg.augment_clf = false;
    cfg.clf_epochs = 10;
    cfg.lr = 0.05;
    auto vae = train_vae(cfg, tiny_model(2), fx.ds.train, fx.train);
    auto clf = train_classifier(cfg, fx.ds.train, fx.train, vae.checkpoint);
    CHECK(last_epoch_metric(clf.log, Phase::clf, "acc") > 0.95);
}

TEST_CASE("classifier on a barely trained encoder beats chance") {
    auto sc = small_synth();
    sc.train_samples = 128;
    sc.expression_contrast = 0.4;
    sc.expression_jitter = 0.2;
    SynthFixture fx(sc);
    auto cfg = tiny_training();
    cfg.lr = 1e-6;  // the encoder stays essentially at its initialization
    auto vae = train_vae(cfg, tiny_model(), fx.ds.train, fx.train);
    cfg.lr = 0.05;
    cfg.augment_clf = false;
    cfg.clf_epochs = 20;
    auto clf = train_classifier(cfg, fx.ds.train, fx.train, vae.checkpoint);
    CHECK(last_epoch_metric(clf.log, Phase::clf, "acc") > 0.25 + 0.1);
}

TEST_CASE("evaluate keeps manifest order and is repeatable") {
    SynthFixture fx(small_synth());
    auto cfg = tiny_training();
    auto vae = train_vae(cfg, tiny_model(), fx.ds.train, fx.train);
    auto clf = train_classifier(cfg, fx.ds.train, fx.train, vae.checkpoint);
    EvalOptions opt;
    opt.batch_size = 3;
    auto t1 = evaluate(clf.final_checkpoint, fx.ds.test, fx.test, opt);
    auto t2 = evaluate(clf.final_checkpoint, fx.ds.test, fx.test);
    REQUIRE(t1.rows.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(t1.rows[i].id == fx.ds.test.records[i].path);
        CHECK(t1.rows[i].true_label == fx.ds.test.records[i].expression);
    }
    CHECK(t1 == t2);

    const double acc = discriminator_accuracy(clf.final_checkpoint, fx.ds.test, fx.test, {"group"});
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
}

TEST_CASE("mismatched checkpoint and data are rejected") {
    SynthFixture fx(small_synth());
    auto cfg = tiny_training();
    auto vae = train_vae(cfg, tiny_model(), fx.ds.train, fx.train);
    auto wrong = vae.checkpoint;
    wrong.config.num_classes = 3;
    CHECK_THROWS_WITH(train_classifier(cfg, fx.ds.train, fx.train, wrong), doctest::Contains("mismatch"));
    CHECK_THROWS(train_vae(cfg, tiny_model(), fx.ds.train, std::vector<ImageSample>(fx.train.begin(), fx.train.end() - 1)));
    auto bad_attr = cfg;
    bad_attr.protected_attribute = {"height"};
    CHECK_THROWS(train_vae(bad_attr, tiny_model(), fx.ds.train, fx.train));
    auto res = tiny_model();
    res.resolution = {3, 16, 16};
    CHECK_THROWS(train_vae(cfg, res, fx.ds.train, fx.train));
}

TEST_CASE("non-finite loss aborts with the last good checkpoint") {
    SynthFixture fx(small_synth());
    auto samples = fx.train;
    samples[3].pixels[0] = std::numeric_limits<double>::quiet_NaN();
    auto cfg = tiny_training();
    cfg.augment_vae = false;
    try {
        train_vae(cfg, tiny_model(), fx.ds.train, samples);
        FAIL("expected an abort");
    } catch (const TrainingAborted& e) {
        CHECK(e.last_good().phase == "vae");
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
}
