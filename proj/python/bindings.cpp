#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "latentfair/cli.hpp"
#include "latentfair/losses.hpp"
#include "latentfair/metrics.hpp"

namespace py = pybind11;
using namespace latentfair;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

std::vector<std::size_t> to_labels(const std::vector<long long>& v) {
    std::vector<std::size_t> out;
    for (long long x : v) {
        if (x < 0) throw std::invalid_argument("labels must be non-negative");
        out.push_back(static_cast<std::size_t>(x));
    }
    return out;
}

cli::RunConfig config_from(const std::string& json_text, const std::filesystem::path& base_dir) {
    return cli::run_config_from_json(nlohmann::ordered_json::parse(json_text), base_dir);
}

py::dict report_dict(const FairnessReport& r) {
    py::dict d;
    d["attribute"] = r.attribute;
    d["groups"] = r.matrix.groups;
    d["fairness"] = r.score.fairness;
    d["reference"] = r.matrix.groups[r.score.reference];
    d["group_sums"] = r.score.group_sums;
    d["classes_used"] = r.score.classes_used;
    d["group_mean_accuracy"] = r.group_mean_accuracy;
    d["mean_accuracy"] = r.mean_accuracy;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Latent-alignment debiasing: losses, fairness metric and the training pipeline";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<MetricsError>(m, "MetricsError", PyExc_ValueError);
    py::register_exception<cli::ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);

    m.def("kl_divergence", [](const Array& mu, const Array& logvar) {
        return kl_divergence(Var(to_tensor(mu)), Var(to_tensor(logvar))).value().item();
    }, py::arg("mu"), py::arg("logvar"));

    m.def("gram_matrix", [](const Array& features) { return to_array(gram_matrix(Var(to_tensor(features))).value()); },
          py::arg("features"));

    // phi = identity unless widths are given, in which case a frozen random conv stack is used
    m.def("style_loss", [](const Array& y, const Array& y_hat, const std::vector<std::size_t>& widths,
                           std::uint64_t seed) {
        const Tensor a = to_tensor(y);
        const auto phi = widths.empty() ? StyleFeatureExtractor::identity()
                                        : StyleFeatureExtractor::random(a.dim(1), widths, seed);
        return style_loss(Var(a), Var(to_tensor(y_hat)), phi).value().item();
    }, py::arg("y"), py::arg("y_hat"), py::arg("widths") = std::vector<std::size_t>{}, py::arg("seed") = 0);

    m.def("discriminator_loss", [](const Array& logits, const std::vector<long long>& attrs) {
        return discriminator_loss(Var(to_tensor(logits)), to_labels(attrs)).value().item();
    }, py::arg("logits"), py::arg("attrs"));

    m.def("adversarial_latent_loss",
          [](const Array& logits) { return adversarial_latent_loss(Var(to_tensor(logits))).value().item(); },
          py::arg("logits"));

    m.def("symmetric_cross_entropy", [](const Array& logits, const std::vector<long long>& labels, double a, double b) {
        return symmetric_cross_entropy(Var(to_tensor(logits)), to_labels(labels), a, b).value().item();
    }, py::arg("logits"), py::arg("labels"), py::arg("a") = 1.0, py::arg("b") = 1.0);

    m.def("fairness_score", [](const std::vector<std::vector<std::size_t>>& correct,
                               const std::vector<std::vector<std::size_t>>& support,
                               std::vector<std::string> groups) {
        if (correct.empty() || correct.size() != support.size())
            throw std::invalid_argument("correct and support need one row per group");
        RecallMatrix mat;
        mat.attribute = "q";
        mat.num_classes = correct[0].size();
        for (std::size_t g = 0; g < correct.size(); ++g) {
            if (correct[g].size() != mat.num_classes || support[g].size() != mat.num_classes)
                throw std::invalid_argument("ragged recall counts");
            for (std::size_t c = 0; c < mat.num_classes; ++c)
                if (correct[g][c] > support[g][c]) throw std::invalid_argument("correct exceeds support");
        }
        if (groups.empty())
            for (std::size_t g = 0; g < correct.size(); ++g) groups.push_back("g" + std::to_string(g));
        if (groups.size() != correct.size()) throw std::invalid_argument("one name per group");
        mat.groups = groups;
        mat.correct = correct;
        mat.support = support;
        const FairnessScore s = fairness_score(mat);
        py::dict d;
        d["fairness"] = s.fairness;
        d["reference"] = groups[s.reference];
        d["group_sums"] = s.group_sums;
        d["classes_used"] = s.classes_used;
        return d;
    }, py::arg("correct"), py::arg("support"), py::arg("groups") = std::vector<std::string>{});

    m.def("synth", [](const std::string& synth_json, const std::filesystem::path& out_dir) {
        const SynthConfig cfg = cli::synth_config_from_json(nlohmann::ordered_json::parse(synth_json));
        const SynthDataset ds = cli::cmd_synth(cfg, out_dir);
        py::dict d;
        d["train"] = ds.train.records.size();
        d["val"] = ds.val.records.size();
        d["test"] = ds.test.records.size();
        return d;
    }, py::arg("synth_json"), py::arg("out_dir"));

    m.def("train", [](const std::string& config_json, const std::filesystem::path& base_dir) {
        const cli::RunConfig cfg = config_from(config_json, base_dir);
        cli::TrainOutputs out;
        {
            py::gil_scoped_release release;
            out = cli::cmd_train(cfg);
        }
        py::dict d;
        d["run_dir"] = out.run_dir;
        d["best_score"] = out.classifier.best_score;
        return d;
    }, py::arg("config_json"), py::arg("base_dir") = std::filesystem::path{});

    m.def("evaluate", [](const std::string& config_json, const std::filesystem::path& checkpoint,
                         const std::filesystem::path& manifest, const std::filesystem::path& out,
                         const std::filesystem::path& base_dir) {
        const PredictionTable t = cli::cmd_eval(config_from(config_json, base_dir), checkpoint, manifest, out);
        py::list rows;
        for (const auto& r : t.rows) {
            py::dict row;
            row["id"] = r.id;
            row["true"] = r.true_label;
            row["pred"] = r.predicted;
            for (std::size_t a = 0; a < t.attribute_names.size(); ++a) row[py::str(t.attribute_names[a])] = r.attrs[a];
            rows.append(row);
        }
        return rows;
    }, py::arg("config_json"), py::arg("checkpoint"), py::arg("manifest") = std::filesystem::path{},
       py::arg("out") = std::filesystem::path{}, py::arg("base_dir") = std::filesystem::path{});

    m.def("audit", [](const std::filesystem::path& predictions, const std::vector<std::string>& attributes,
                      const std::string& format) {
        const cli::AuditResult r = cli::cmd_audit(predictions, attributes, parse_report_format(format));
        py::list reports;
        for (const auto& rep : r.reports) reports.append(report_dict(rep));
        return py::make_tuple(reports, r.rendered);
    }, py::arg("predictions"), py::arg("attributes"), py::arg("format") = "table");

    m.def("ablate", [](const std::string& config_json, const std::filesystem::path& base_dir) {
        const cli::RunConfig cfg = config_from(config_json, base_dir);
        cli::AblationResult r;
        {
            py::gil_scoped_release release;
            r = cli::cmd_ablate(cfg);
        }
        py::list cells;
        for (const auto& c : r.cells) {
            py::dict d;
            d["name"] = c.name;
            d["ok"] = c.ok;
            d["error"] = c.error;
            d["run_dir"] = c.run_dir;
            d["mean_accuracy"] = c.mean_accuracy;
            d["fairness"] = c.fairness;
            d["discriminator_accuracy"] = c.discriminator_accuracy;
            cells.append(d);
        }
        return py::make_tuple(cells, r.rendered);
    }, py::arg("config_json"), py::arg("base_dir") = std::filesystem::path{});
}
