#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "latentfair/cli.hpp"

using namespace latentfair;
using namespace latentfair::cli;
using testutil::TempDir;

namespace {

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Tiny synthetic run that trains in well under a second.
nlohmann::ordered_json tiny_run_json() {
    return nlohmann::ordered_json::parse(R"({
      "data": {"synth": {"train_samples": 32, "val_samples": 8, "test_samples": 40, "resolution": [3, 8, 8],
                         "num_classes": 2,
                         "aux_attr_values": 2}},
      "model": {"latent_dim": 4, "encoder_widths": [4, 8], "discriminator_hidden": [8],
                "classifier_grid": 2, "classifier_channels": 4},
      "training": {"lr": 0.01, "batch_size": 8, "vae_epochs": 1, "clf_epochs": 1, "protected_attribute": "group",
                   "style_widths": [4, 4], "grad_clip": 1.0},
      "metrics": {"attributes": ["group", "aux", "group*aux"]}
    })");
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(LATENTFAIR_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run config round-trips and resolves relative paths") {
    auto j = tiny_run_json();
    j["data"]["train"] = "m/train.json";
    auto cfg = run_config_from_json(j, "/base");
    CHECK(cfg.data.train_manifest == fs::path("/base/m/train.json"));
    CHECK(cfg.data.synth->train_samples == 32);
    CHECK(cfg.training.protected_attribute == std::vector<std::string>{"group"});
    auto again = run_config_from_json(to_json(cfg));
    CHECK(to_json(again) == to_json(cfg));
    CHECK(to_json(cfg).contains("formats"));
}

TEST_CASE("run config rejects unknown keys and bad values") {
    auto j = tiny_run_json();
    j["trainig"] = nlohmann::ordered_json::object();
    CHECK_THROWS_AS(run_config_from_json(j), ValidationError);
    j = tiny_run_json();
    j["training"]["lrr"] = 1;
    CHECK_THROWS_AS(run_config_from_json(j), ValidationError);
    j = tiny_run_json();
    j["metrics"]["format"] = "xml";
    CHECK_THROWS_AS(run_config_from_json(j), ValidationError);
    j = tiny_run_json();
    j["formats"] = {{"checkpoint", 99}, {"predictions", 1}, {"log", 1}};
    CHECK_THROWS_AS(run_config_from_json(j), ValidationError);
    j = tiny_run_json();
    j["data"]["synth"]["rho"] = 1.5;
    CHECK_THROWS_WITH(run_config_from_json(j), doctest::Contains("rho"));
}

TEST_CASE("flags override exactly their config keys") {
    RunConfig cfg = run_config_from_json(tiny_run_json());
    Overrides o;
    o.seed = 7;
    o.no_discriminator = true;
    o.autoencoder = true;
    o.backbone = "resblock";
    o.adversarial = "negated";
    o.attributes = {"group*aux", "aux"};
    apply_overrides(cfg, o);
    CHECK(cfg.training.seed == 7);
    CHECK(cfg.training.adversarial_weight == 0.0);
    CHECK(cfg.training.autoencoder);
    CHECK(cfg.model.backbone == Backbone::resblock);
    CHECK(cfg.training.adversarial_form == AdversarialForm::negated);
    CHECK(cfg.training.protected_attribute == std::vector<std::string>{"group", "aux"});
    CHECK(cfg.metrics.attributes.size() == 2);
    CHECK(cfg.training.lr == 0.01);

    Overrides bad;
    bad.backbone = "vgg";
    CHECK_THROWS_AS(apply_overrides(cfg, bad), ValidationError);
}

TEST_CASE("train, eval and audit end to end") {
    TempDir dir("cli_train");
    auto j = tiny_run_json();
    j["output"]["dir"] = (dir.path / "run").string();
    RunConfig cfg = run_config_from_json(j);
    auto out = cmd_train(cfg);
    for (auto* f : {"config.json", "vae.ckpt", "final.ckpt", "best.ckpt", "train.log"})
        CHECK(fs::exists(out.run_dir / f));
    CHECK(fs::exists(dir.path / "run" / "data" / "train.json"));

    // the resolved config reproduces the run bit for bit
    RunConfig replay = load_run_config(out.run_dir / "config.json");
    replay.out_dir = dir.path / "replay";
    cmd_train(replay);
    for (auto* f : {"vae.ckpt", "final.ckpt", "best.ckpt", "train.log"})
        CHECK(read_bytes(out.run_dir / f) == read_bytes(dir.path / "replay" / f));

    auto table = cmd_eval(cfg, out.run_dir / "final.ckpt", {}, dir.path / "pred.tsv");
    CHECK(table.rows.size() == 40);
    CHECK(cmd_eval(cfg, out.run_dir / "final.ckpt") == table);

    auto audit = cmd_audit(dir.path / "pred.tsv", {"group", "aux", "group*aux"});
    CHECK(audit.reports.size() == 3);
    CHECK(audit.rendered.find("Fairness") != std::string::npos);

    // a third-party file with the same layout audits identically
    auto external = read_bytes(dir.path / "pred.tsv");
    external = external.substr(external.find('\n') + 1);  // drop the optional comment line
    write_file(dir.path / "external.tsv", external);
    auto ext = cmd_audit(dir.path / "external.tsv", {"group", "aux", "group*aux"});
    CHECK(ext.reports[0].score.fairness == audit.reports[0].score.fairness);

    CHECK_THROWS(cmd_audit(dir.path / "pred.tsv", {"race"}));
}

TEST_CASE("eval rejects a checkpoint of another resolution") {
    TempDir dir("cli_eval");
    auto j = tiny_run_json();
    j["output"]["dir"] = (dir.path / "run").string();
    auto out = cmd_train(run_config_from_json(j));

    auto k = tiny_run_json();
    k["data"]["synth"]["resolution"] = {3, 16, 16};
    k["output"]["dir"] = (dir.path / "other").string();
    RunConfig other = run_config_from_json(k);
    CHECK_THROWS_WITH(cmd_eval(other, out.run_dir / "final.ckpt"), doctest::Contains("resolution"));
}

TEST_CASE("synth reruns produce identical bytes") {
    TempDir dir("cli_synth");
    SynthConfig sc;
    sc.train_samples = 10;
    sc.val_samples = 2;
    sc.test_samples = 4;
    cmd_synth(sc, dir.path / "a");
    cmd_synth(sc, dir.path / "b");
    CHECK(read_bytes(dir.path / "a" / "train.json") == read_bytes(dir.path / "b" / "train.json"));
    CHECK(read_bytes(dir.path / "a" / "synth_config.json") == read_bytes(dir.path / "b" / "synth_config.json"));
}

TEST_CASE("ablation report marks failed cells") {
    AblationResult r;
    r.attributes = {"group"};
    AblationCell ok{"VAE+Disc+MBConv", false, true, Backbone::mbconv, "x", true, "", 0.7312, {0.951}, 0.52};
    AblationCell bad{"AE+MBConv", true, false, Backbone::mbconv, "y", false, "boom", 0, {}, 0};
    r.cells = {ok, bad};
    const auto text = render_ablation(r);
    CHECK(text.find("F(group)") != std::string::npos);
    CHECK(text.find("73.1") != std::string::npos);
    CHECK(text.find("FAILED AE+MBConv: boom") != std::string::npos);
}

TEST_CASE("command-line exit codes") {
    TempDir dir("cli_exit");
    const auto log = dir.path / "out.txt";
    CHECK(run_cli("--help", log) == kExitOk);
    CHECK(run_cli("bogus", log) == kExitValidation);

    auto j = tiny_run_json();
    j["data"]["synth"]["rho"] = 1.5;
    write_file(dir.path / "bad.json", j.dump());
    CHECK(run_cli("synth --config '" + (dir.path / "bad.json").string() + "'", log) == kExitValidation);
    CHECK(read_bytes(log).find("rho") != std::string::npos);

    CHECK(run_cli("train --config '" + (dir.path / "missing.json").string() + "'", log) == kExitValidation);

    j = tiny_run_json();
    write_file(dir.path / "good.json", j.dump());
    const std::string cfg = " --config '" + (dir.path / "good.json").string() + "' --out '" + (dir.path / "run").string() + "'";
    CHECK(run_cli("train" + cfg, log) == kExitOk);
    CHECK(run_cli("eval" + cfg + " --checkpoint '" + (dir.path / "run" / "final.ckpt").string() + "'", log) ==
          kExitOk);
    CHECK(run_cli("audit --predictions '" + (dir.path / "run" / "predictions.tsv").string() +
                      "' --attribute group --attribute 'group*aux'",
                  log) == kExitOk);
    CHECK_MESSAGE(read_bytes(log).find("group-aux") != std::string::npos, read_bytes(log));

    write_file(dir.path / "broken.tsv", "id\ttrue\tpred\tgroup\n1\t0\t0\tv0\n2\t1\n");
    CHECK(run_cli("audit --predictions '" + (dir.path / "broken.tsv").string() + "' --attribute group", log) ==
          kExitValidation);
    CHECK(read_bytes(log).find("line 3") != std::string::npos);

    // a diverging run aborts with status 2 and leaves the last good checkpoint
    j = tiny_run_json();
    j["training"]["lr"] = 1e12;
    j["training"]["grad_clip"] = 0.0;
    j["training"]["vae_epochs"] = 3;
    write_file(dir.path / "diverge.json", j.dump());
    CHECK(run_cli("train --config '" + (dir.path / "diverge.json").string() + "' --out '" +
                      (dir.path / "div").string() + "'",
                  log) == kExitAbort);
    CHECK(fs::exists(dir.path / "div" / "aborted.ckpt"));
}

TEST_CASE("changed synth settings regenerate the dataset") {
    TempDir dir("cli_regen");
    RunConfig cfg = run_config_from_json(tiny_run_json());
    cfg.data.synth_dir = dir.path / "data";
    CHECK(prepare_data(cfg.data).test->records.size() == 40);
    cfg.data.synth->test_samples = 20;
    CHECK(prepare_data(cfg.data).test->records.size() == 20);
    cfg.data.synth_dir.clear();
    CHECK_THROWS_AS(prepare_data(cfg.data), ValidationError);
}
