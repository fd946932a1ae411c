#include "latentfair/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace latentfair::cli {

using ojson = nlohmann::ordered_json;

namespace {

ojson format_versions() {
    return {{"checkpoint", kCheckpointVersion}, {"predictions", kPredictionsVersion}, {"log", kLogVersion}};
}

void reject_unknown(const ojson& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + " must be an object");
    for (const auto& [k, _] : j.items()) {
        bool known = false;
        for (const char* key : keys) known = known || k == key;
        if (!known) throw ValidationError(where + ": unknown key '" + k + "'");
    }
}

// The synthetic dataset defaults to <out>/data; fixed only once --out has been applied.
RunConfig with_data_dir(RunConfig cfg) {
    if (cfg.data.synth && cfg.data.synth_dir.empty()) cfg.data.synth_dir = cfg.out_dir / "data";
    if (!cfg.data.synth_dir.empty()) cfg.data.synth_dir = fs::absolute(cfg.data.synth_dir);
    return cfg;
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return (base / p).lexically_normal();
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& text, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

// Runs `fn`, turning the library's configuration exceptions into ValidationError.
template <typename Fn>
auto validated(const std::string& where, Fn fn) {
    try {
        return fn();
    } catch (const ValidationError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ValidationError(where + ": " + e.what());
    } catch (const DataError& e) {
        throw ValidationError(where + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": " + e.what());
    }
}

}  // namespace

ojson to_json(const SynthConfig& c) {
    ojson j;
    j["train_samples"] = c.train_samples;
    j["val_samples"] = c.val_samples;
    j["test_samples"] = c.test_samples;
    j["resolution"] = {c.resolution.channels, c.resolution.height, c.resolution.width};
    j["num_classes"] = c.num_classes;
    j["num_attr_values"] = c.num_attr_values;
    j["rho"] = c.rho;
    j["noise"] = c.noise;
    j["seed"] = c.seed;
    j["attribute"] = c.attribute;
    j["aux_attr_values"] = c.aux_attr_values;
    j["aux_attribute"] = c.aux_attribute;
    j["expression_contrast"] = c.expression_contrast;
    j["attribute_contrast"] = c.attribute_contrast;
    j["expression_jitter"] = c.expression_jitter;
    return j;
}

SynthConfig synth_config_from_json(const ojson& j) {
    reject_unknown(j,
                   {"train_samples", "val_samples", "test_samples", "resolution", "num_classes", "num_attr_values",
                    "rho", "noise", "seed", "attribute", "aux_attr_values", "aux_attribute", "expression_contrast",
                    "attribute_contrast", "expression_jitter"},
                   "data.synth");
    return validated("data.synth", [&] {
        SynthConfig c;
        auto get = [&j](const char* key, auto& dst) {
            if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
        };
        get("train_samples", c.train_samples);
        get("val_samples", c.val_samples);
        get("test_samples", c.test_samples);
        if (j.contains("resolution")) {
            const auto r = j.at("resolution").get<std::vector<std::size_t>>();
            if (r.size() != 3) throw ValidationError("data.synth.resolution must be [channels, height, width]");
            c.resolution = {r[0], r[1], r[2]};
        }
        get("num_classes", c.num_classes);
        get("num_attr_values", c.num_attr_values);
        get("rho", c.rho);
        get("noise", c.noise);
        get("seed", c.seed);
        get("attribute", c.attribute);
        get("aux_attr_values", c.aux_attr_values);
        get("aux_attribute", c.aux_attribute);
        get("expression_contrast", c.expression_contrast);
        get("attribute_contrast", c.attribute_contrast);
        get("expression_jitter", c.expression_jitter);
        c.validate();
        return c;
    });
}

RunConfig run_config_from_json(const ojson& j, const fs::path& base_dir) {
    reject_unknown(j, {"data", "model", "training", "metrics", "output", "formats"}, "config");
    RunConfig cfg;
    if (j.contains("formats")) {
        // Written by cmd_train; a run directory from another format generation is refused.
        const ojson expected = format_versions();
        if (j.at("formats") != expected)
            throw ValidationError("config: formats " + j.at("formats").dump() + " do not match this build (" +
                                  expected.dump() + ")");
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, {"train", "val", "test", "synth", "synth_dir"}, "data");
        validated("data", [&] {
            if (d.contains("train")) cfg.data.train_manifest = resolve(d.at("train").get<std::string>(), base_dir);
            if (d.contains("val")) cfg.data.val_manifest = resolve(d.at("val").get<std::string>(), base_dir);
            if (d.contains("test")) cfg.data.test_manifest = resolve(d.at("test").get<std::string>(), base_dir);
            if (d.contains("synth_dir")) cfg.data.synth_dir = resolve(d.at("synth_dir").get<std::string>(), base_dir);
            return 0;
        });
        if (d.contains("synth")) cfg.data.synth = synth_config_from_json(d.at("synth"));
    }
    if (j.contains("model")) cfg.model = validated("model", [&] { return model_config_from_json(j.at("model")); });
    if (j.contains("training"))
        cfg.training = validated("training", [&] { return training_config_from_json(j.at("training")); });
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        reject_unknown(m, {"attributes", "format", "checkpoint"}, "metrics");
        validated("metrics", [&] {
            if (m.contains("attributes")) cfg.metrics.attributes = m.at("attributes").get<std::vector<std::string>>();
            if (m.contains("format")) cfg.metrics.format = m.at("format").get<std::string>();
            if (m.contains("checkpoint")) cfg.metrics.checkpoint = m.at("checkpoint").get<std::string>();
            parse_report_format(cfg.metrics.format);
            return 0;
        });
        if (cfg.metrics.checkpoint != "final" && cfg.metrics.checkpoint != "best")
            throw ValidationError("metrics.checkpoint must be 'final' or 'best'");
    }
    if (j.contains("output")) {
        const auto& o = j.at("output");
        reject_unknown(o, {"dir"}, "output");
        validated("output", [&] {
            if (o.contains("dir")) cfg.out_dir = resolve(o.at("dir").get<std::string>(), base_dir);
            return 0;
        });
    }
    return cfg;
}

ojson to_json(const RunConfig& cfg) {
    ojson j;
    ojson d = ojson::object();
    if (!cfg.data.train_manifest.empty()) d["train"] = cfg.data.train_manifest.string();
    if (!cfg.data.val_manifest.empty()) d["val"] = cfg.data.val_manifest.string();
    if (!cfg.data.test_manifest.empty()) d["test"] = cfg.data.test_manifest.string();
    if (cfg.data.synth) d["synth"] = to_json(*cfg.data.synth);
    if (!cfg.data.synth_dir.empty()) d["synth_dir"] = cfg.data.synth_dir.string();
    j["data"] = d;
    j["model"] = to_json(cfg.model);
    j["training"] = to_json(cfg.training);
    j["metrics"] = {{"attributes", cfg.metrics.attributes},
                    {"format", cfg.metrics.format},
                    {"checkpoint", cfg.metrics.checkpoint}};
    j["output"] = {{"dir", cfg.out_dir.string()}};
    j["formats"] = format_versions();
    return j;
}

RunConfig load_run_config(const fs::path& path) {
    const std::string text = read_text(path);
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config '" + path.string() + "': " + e.what());
    }
    return run_config_from_json(j, fs::absolute(path).parent_path());
}

void write_run_config(const RunConfig& cfg, const fs::path& path) { write_text(to_json(cfg).dump(2) + "\n", path); }

void apply_overrides(RunConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.training.seed = *o.seed;
    if (o.out) cfg.out_dir = *o.out;
    if (!o.attributes.empty()) {
        cfg.metrics.attributes = o.attributes;
        // The first attribute named is also the protected attribute for training.
        const std::string& first = o.attributes.front();
        const auto star = first.find('*');
        cfg.training.protected_attribute = star == std::string::npos
                                               ? std::vector<std::string>{first}
                                               : std::vector<std::string>{first.substr(0, star), first.substr(star + 1)};
    }
    if (o.no_discriminator) cfg.training.adversarial_weight = 0.0;
    if (o.autoencoder) cfg.training.autoencoder = true;
    if (o.backbone) cfg.model.backbone = validated("--backbone", [&] { return parse_backbone(*o.backbone); });
    if (o.adversarial)
        cfg.training.adversarial_form = validated("--adversarial", [&] { return parse_adversarial_form(*o.adversarial); });
    validated("config", [&] {
        cfg.training.validate();
        return 0;
    });
}

Dataset prepare_data(const DataConfig& cfg) {
    return validated("data", [&] {
        Dataset ds;
        if (cfg.synth) {
            if (cfg.synth_dir.empty()) throw ValidationError("data: synth_dir is not set");
            // Reuse an existing dataset only when it was generated from the same settings.
            const std::string wanted = to_json(*cfg.synth).dump(2) + "\n";
            const fs::path stamp = cfg.synth_dir / "synth_config.json";
            if (!fs::exists(cfg.synth_dir / "train.json") || !fs::exists(stamp) || read_text(stamp) != wanted) {
                synth_generate(*cfg.synth, cfg.synth_dir);
                write_text(wanted, stamp);
            }
            ds.train = load_manifest(cfg.synth_dir / "train.json");
            if (fs::exists(cfg.synth_dir / "val.json")) ds.val = load_manifest(cfg.synth_dir / "val.json");
            ds.test = load_manifest(cfg.synth_dir / "test.json");
            return ds;
        }
        if (cfg.train_manifest.empty()) throw ValidationError("data: no train manifest and no synth section");
        ds.train = load_manifest(cfg.train_manifest);
        if (!cfg.val_manifest.empty()) ds.val = load_manifest(cfg.val_manifest);
        if (!cfg.test_manifest.empty()) ds.test = load_manifest(cfg.test_manifest);
        return ds;
    });
}

SynthDataset cmd_synth(const SynthConfig& cfg, const fs::path& out_dir) {
    SynthDataset ds = validated("synth", [&] { return synth_generate(cfg, out_dir); });
    write_text(to_json(cfg).dump(2) + "\n", out_dir / "synth_config.json");
    return ds;
}

TrainOutputs cmd_train(const RunConfig& in) {
    RunConfig cfg = with_data_dir(in);
    const Dataset ds = prepare_data(cfg.data);
    // Data-derived model fields are filled in so the resolved config is complete.
    const AttributeGrouping grouping =
        validated("training", [&] { return group_records(ds.train, cfg.training.protected_attribute); });
    cfg.model.resolution = ds.train.resolution;
    cfg.model.num_classes = ds.train.num_classes;
    cfg.model.num_attr_values = grouping.values.size();
    if (cfg.metrics.attributes.empty()) {
        const auto& pa = cfg.training.protected_attribute;
        cfg.metrics.attributes = {pa.size() == 1 ? pa[0] : pa[0] + "*" + pa[1]};
    }
    validated("config", [&] {
        cfg.model.validate();
        cfg.training.validate();
        return 0;
    });

    TrainOutputs out;
    out.run_dir = fs::absolute(cfg.out_dir);
    fs::create_directories(out.run_dir);
    cfg.out_dir = out.run_dir;
    write_run_config(cfg, out.run_dir / "config.json");

    const auto train_samples = load_samples(ds.train);
    std::vector<ImageSample> val_samples;
    if (ds.val) val_samples = load_samples(*ds.val);
    try {
        TrainResult vae = train_vae(cfg.training, cfg.model, ds.train, train_samples);
        save_checkpoint(vae.checkpoint, out.run_dir / "vae.ckpt");
        out.vae = vae.checkpoint;
        out.log = vae.log;
        out.classifier = ds.val ? train_classifier(cfg.training, ds.train, train_samples, vae.checkpoint, &*ds.val,
                                                   &val_samples)
                                : train_classifier(cfg.training, ds.train, train_samples, vae.checkpoint);
    } catch (const TrainingAborted& e) {
        save_checkpoint(e.last_good(), out.run_dir / "aborted.ckpt");
        write_text(out.log.serialize(), out.run_dir / "train.log");
        throw;
    }
    out.log.append(out.classifier.log);
    save_checkpoint(out.classifier.final_checkpoint, out.run_dir / "final.ckpt");
    save_checkpoint(out.classifier.best_checkpoint, out.run_dir / "best.ckpt");
    write_text(out.log.serialize(), out.run_dir / "train.log");
    return out;
}

PredictionTable cmd_eval(const RunConfig& in, const fs::path& checkpoint, const fs::path& manifest_path,
                         const fs::path& out) {
    const RunConfig cfg = with_data_dir(in);
    DatasetManifest manifest;
    if (!manifest_path.empty()) {
        manifest = validated("eval", [&] { return load_manifest(manifest_path); });
    } else {
        Dataset ds = prepare_data(cfg.data);
        if (!ds.test) throw ValidationError("eval: no test manifest configured");
        manifest = *ds.test;
    }
    const Checkpoint ckpt = validated("eval", [&] { return load_checkpoint(checkpoint); });
    const auto samples = load_samples(manifest);
    EvalOptions opt;
    opt.sample_latent = cfg.training.sample_at_eval;
    opt.seed = cfg.training.seed;
    PredictionTable table = validated("eval", [&] { return evaluate(ckpt, manifest, samples, opt); });
    if (!out.empty()) write_predictions(table, out);
    return table;
}

AuditResult cmd_audit(const fs::path& predictions, const std::vector<std::string>& attributes, ReportFormat format) {
    if (attributes.empty()) throw ValidationError("audit: at least one --attribute is required");
    const PredictionTable table = [&] {
        try {
            return load_predictions(predictions);
        } catch (const MetricsError& e) {
            throw ValidationError(predictions.string() + ": " + e.what());
        }
    }();
    AuditResult result;
    for (const auto& a : attributes) {
        try {
            result.reports.push_back(report_for(table, a));
        } catch (const MetricsError& e) {
            throw ValidationError("audit: " + std::string(e.what()));
        }
    }
    result.rendered = render_report(result.reports, format);
    return result;
}

namespace {

std::string cell_name(bool ae, bool disc, Backbone b) {
    std::string s = ae ? "AE" : "VAE";
    if (disc) s += "+Disc";
    s += b == Backbone::mbconv ? "+MBConv" : "+ResBlock";
    return s;
}

std::string cell_slug(bool ae, bool disc, Backbone b) {
    return std::string(ae ? "ae" : "vae") + (disc ? "_disc" : "_nodisc") + (b == Backbone::mbconv ? "_mbconv" : "_resblock");
}

std::string fmt(double v, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string render_ablation(const AblationResult& r) {
    std::vector<std::string> header{"Model", "Mean acc"};
    for (const auto& a : r.attributes) header.push_back("F(" + a + ")");
    header.push_back("Disc acc");
    std::vector<std::vector<std::string>> rows;
    for (const auto& c : r.cells) {
        std::vector<std::string> row{c.name};
        if (c.ok) {
            row.push_back(fmt(100.0 * c.mean_accuracy, 2));
            for (double f : c.fairness) row.push_back(fmt(100.0 * f, 2));
            row.push_back(fmt(c.discriminator_accuracy, 3));
        } else {
            for (std::size_t i = 1; i < header.size(); ++i) row.push_back("FAILED");
        }
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) {
        width[i] = header[i].size();
        for (const auto& row : rows) width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            os << (i ? "  " : "");
            if (i == 0)
                os << cells[i] << std::string(width[i] - cells[i].size(), ' ');
            else
                os << std::string(width[i] - cells[i].size(), ' ') << cells[i];
        }
        os << '\n';
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& row : rows) line(row);
    for (const auto& c : r.cells)
        if (!c.ok) os << "FAILED " << c.name << ": " << c.error << '\n';
    return os.str();
}

AblationResult cmd_ablate(const RunConfig& base) {
    AblationResult result;
    // Every cell shares the dataset under the grid's own output directory.
    RunConfig cfg = with_data_dir(base);
    if (cfg.metrics.attributes.empty()) {
        const auto& pa = cfg.training.protected_attribute;
        cfg.metrics.attributes = {pa.size() == 1 ? pa[0] : pa[0] + "*" + pa[1]};
    }
    result.attributes = cfg.metrics.attributes;
    // Generate the shared dataset once, before any cell runs.
    const Dataset ds = prepare_data(cfg.data);
    if (!ds.test) throw ValidationError("ablate: a test split is required");
    const auto test_samples = load_samples(*ds.test);

    for (bool ae : {false, true})
        for (bool disc : {true, false})
            for (Backbone b : {Backbone::mbconv, Backbone::resblock}) {
                AblationCell cell;
                cell.name = cell_name(ae, disc, b);
                cell.autoencoder = ae;
                cell.discriminator = disc;
                cell.backbone = b;
                RunConfig c = cfg;
                c.training.autoencoder = ae;
                c.training.adversarial_weight = disc ? base.training.adversarial_weight : 0.0;
                c.model.backbone = b;
                c.out_dir = cfg.out_dir / "cells" / cell_slug(ae, disc, b);
                cell.run_dir = fs::absolute(c.out_dir);
                try {
                    const TrainOutputs t = cmd_train(c);
                    const Checkpoint& ck =
                        cfg.metrics.checkpoint == "best" ? t.classifier.best_checkpoint : t.classifier.final_checkpoint;
                    EvalOptions opt;
                    opt.sample_latent = c.training.sample_at_eval;
                    opt.seed = c.training.seed;
                    const PredictionTable preds = evaluate(ck, *ds.test, test_samples, opt);
                    write_predictions(preds, cell.run_dir / "predictions.tsv");
                    std::vector<FairnessReport> reports;
                    for (const auto& a : cfg.metrics.attributes) reports.push_back(report_for(preds, a));
                    write_text(render_report(reports, parse_report_format(cfg.metrics.format)),
                               cell.run_dir / "report.txt");
                    cell.mean_accuracy = reports.front().mean_accuracy;
                    for (const auto& r : reports) cell.fairness.push_back(r.score.fairness);
                    cell.discriminator_accuracy =
                        discriminator_accuracy(ck, *ds.test, test_samples, c.training.protected_attribute, opt);
                    cell.ok = true;
                } catch (const std::exception& e) {
                    cell.error = e.what();
                }
                result.cells.push_back(std::move(cell));
            }
    result.rendered = render_ablation(result);
    write_text(result.rendered, fs::absolute(cfg.out_dir) / "ablation.txt");
    return result;
}

int run(int argc, char** argv) {
    CLI::App app{"Latent-alignment debiasing: synthesis, training, evaluation and fairness audits"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    std::uint64_t seed = 0;
    std::string out;
    std::string backbone, adversarial;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--seed", seed, "seed (training.seed; data.synth.seed for synth)");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--attribute", ov.attributes, "attribute to audit or protect; a*b for an intersection");
        sub->add_flag("--no-discriminator", ov.no_discriminator, "drop the adversarial term");
        sub->add_flag("--autoencoder", ov.autoencoder, "KL weight 0 and deterministic latents");
        sub->add_option("--backbone", backbone, "mbconv or resblock");
        sub->add_option("--adversarial", adversarial, "confusion or negated");
    };
    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic biased dataset");
    CLI::App* train = app.add_subcommand("train", "train the VAE then the classifier");
    CLI::App* eval = app.add_subcommand("eval", "write predictions for a manifest");
    CLI::App* audit = app.add_subcommand("audit", "fairness report for a predictions table");
    CLI::App* ablate = app.add_subcommand("ablate", "run the 8-cell ablation grid");
    for (auto* sub : {synth, train, eval, ablate}) add_common(sub);
    std::string checkpoint, manifest, predictions, format = "table";
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--manifest", manifest, "manifest to evaluate (default: test split)");
    eval->add_option("--predictions", predictions, "output predictions file (default: <out>/predictions.tsv)");
    audit->add_option("--predictions", predictions, "predictions table")->required();
    audit->add_option("--attribute", ov.attributes, "attribute; a*b for an intersection")->required();
    audit->add_option("--format", format, "table or csv");
    audit->add_option("--out", out, "also write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        auto seed_given = [&](CLI::App* sub) { return sub->count("--seed") > 0; };
        auto load = [&](CLI::App* sub) {
            RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
            if (seed_given(sub)) ov.seed = seed;
            if (!out.empty()) ov.out = fs::path(out);
            if (!backbone.empty()) ov.backbone = backbone;
            if (!adversarial.empty()) ov.adversarial = adversarial;
            apply_overrides(cfg, ov);
            return cfg;
        };

        if (synth->parsed()) {
            RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
            SynthConfig sc = cfg.data.synth.value_or(SynthConfig{});
            if (seed_given(synth)) sc.seed = seed;
            const fs::path dir = !out.empty() ? fs::path(out) : !cfg.data.synth_dir.empty() ? cfg.data.synth_dir : cfg.out_dir / "data";
            const SynthDataset ds = cmd_synth(sc, dir);
            std::cout << "wrote " << ds.train.records.size() << " train, " << ds.val.records.size() << " val, "
                      << ds.test.records.size() << " test records to " << dir.string() << "\n";
        } else if (train->parsed()) {
            const TrainOutputs t = cmd_train(load(train));
            std::cout << "run directory: " << t.run_dir.string() << "\n";
            if (t.classifier.best_score >= 0.0)
                std::cout << "best validation score (mean acc x fairness): " << t.classifier.best_score << "\n";
        } else if (eval->parsed()) {
            const RunConfig cfg = load(eval);
            const fs::path dest = !predictions.empty() ? fs::path(predictions) : cfg.out_dir / "predictions.tsv";
            const PredictionTable t = cmd_eval(cfg, checkpoint, manifest, dest);
            std::cout << "wrote " << t.rows.size() << " predictions to " << dest.string() << "\n";
        } else if (audit->parsed()) {
            const AuditResult r = cmd_audit(predictions, ov.attributes,
                                            validated("--format", [&] { return parse_report_format(format); }));
            std::cout << r.rendered;
            if (!out.empty()) write_text(r.rendered, out);
        } else if (ablate->parsed()) {
            const AblationResult r = cmd_ablate(load(ablate));
            std::cout << r.rendered;
            for (const auto& c : r.cells)
                if (!c.ok) return kExitAbort;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const MetricsError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const TrainingAborted& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return kExitAbort;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitAbort;
    }
    return kExitOk;
}

}  // namespace latentfair::cli
