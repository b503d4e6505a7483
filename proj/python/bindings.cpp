#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "synthaug/classify.hpp"
#include "synthaug/corpus.hpp"
#include "synthaug/diffusion.hpp"
#include "synthaug/errors.hpp"
#include "synthaug/metrics.hpp"
#include "synthaug/pipeline.hpp"
#include "synthaug/selection.hpp"

namespace py = pybind11;
using namespace synthaug;
namespace pl = synthaug::pipeline;

namespace {

py::array_t<float> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
    return out;
}

py::dict metrics_dict(const metrics::ClassificationMetrics& m) {
    py::dict d;
    d["accuracy"] = m.accuracy;
    d["precision"] = m.precision;
    d["recall"] = m.recall;
    d["f1"] = m.f1;
    d["tp"] = m.tp();
    d["fp"] = m.fp();
    d["fn"] = m.fn();
    d["tn"] = m.tn();
    return d;
}

py::dict report_dict(const pl::ExperimentReport& r) {
    py::list rows, fid, expert;
    for (const auto& x : r.rows) {
        py::dict d;
        d["model"] = x.model;
        d["scenario"] = x.scenario;
        d["sampling"] = x.sampling;
        d["variant"] = x.variant;
        d["run"] = x.run;
        d["accuracy"] = x.accuracy;
        d["precision"] = x.precision;
        d["recall"] = x.recall;
        d["f1"] = x.f1;
        rows.append(d);
    }
    for (const auto& x : r.fid_rows) fid.append(py::dict(py::arg("generator") = x.generator, py::arg("class") = x.class_name, py::arg("extractor") = x.extractor, py::arg("fid") = x.fid));
    for (const auto& x : r.expert_rows) expert.append(py::dict(py::arg("generator") = x.generator, py::arg("class") = x.class_name, py::arg("agreement") = x.agreement));
    py::dict d;
    d["rows"] = rows;
    d["fid"] = fid;
    d["expert"] = expert;
    return d;
}

pl::ExperimentConfig with_overrides(const std::string& config_json, std::optional<std::string> out, std::optional<std::uint64_t> seed) {
    auto cfg = pl::parse_config(config_json);
    if (out) cfg.output_dir = *out;
    if (seed) cfg.master_seed = *seed;
    return cfg;
}

} // namespace

PYBIND11_MODULE(_synthaug, m) {
    m.doc() = "Synthetic-augmentation experiment core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<pl::StageError>(m, "StageError", PyExc_RuntimeError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("parse_config", [](const std::string& text) { return pl::config_to_json(pl::parse_config(text)); },
          "Validates a JSON config and returns it with every default filled in.");

    m.def("run_experiment",
          [](const std::string& config_json, std::optional<std::string> out, std::optional<std::uint64_t> seed) {
              const auto cfg = with_overrides(config_json, out, seed);
              pl::ExperimentReport r;
              {
                  py::gil_scoped_release release;
                  r = pl::run_experiment(cfg);
              }
              return report_dict(r);
          },
          py::arg("config_json"), py::arg("out") = py::none(), py::arg("seed") = py::none());

    m.def("run_stage",
          [](const std::string& stage, const std::string& config_json, std::optional<std::string> out,
             std::optional<std::uint64_t> seed) {
              const auto cfg = with_overrides(config_json, out, seed);
              py::gil_scoped_release release;
              if (stage == "gen-corpus") pl::stage_corpus(cfg);
              else if (stage == "scenario") pl::stage_scenario(cfg);
              else if (stage == "train-ddpm") pl::stage_train_ddpm(cfg);
              else if (stage == "train-pggan") pl::stage_train_pggan(cfg);
              else if (stage == "synth") pl::stage_synth(cfg);
              else if (stage == "fid") pl::stage_fid(cfg);
              else if (stage == "train-classifier") pl::stage_classifiers(cfg);
              else if (stage == "report") pl::stage_report(cfg);
              else throw std::invalid_argument("unknown stage '" + stage + "'");
          },
          py::arg("stage"), py::arg("config_json"), py::arg("out") = py::none(), py::arg("seed") = py::none());

    m.def("read_report", [](const std::string& dir) { return report_dict(pl::read_report(dir)); });

    m.def("format_cell", [](const std::vector<double>& values) { return pl::format_cell(metrics::run_stats(values)); },
          "Renders mean and sample SD as '0.91 ± 0.016'.");

    m.def("run_stats", [](const std::vector<double>& values) {
        const auto a = metrics::run_stats(values);
        return py::make_tuple(a.mean, a.std);
    });

    m.def("frechet_distance",
          [](const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2, const Eigen::MatrixXd& s2) {
              return metrics::frechet_distance({mu1, s1, 2}, {mu2, s2, 2});
          },
          py::arg("mu1"), py::arg("sigma1"), py::arg("mu2"), py::arg("sigma2"));

    m.def("fid_from_features", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        return metrics::frechet_distance(metrics::gaussian_stats(a), metrics::gaussian_stats(b));
    });

    m.def("classification_metrics",
          [](const std::vector<int>& pred, const std::vector<int>& labels, int positive_class) {
              return metrics_dict(metrics::classification_metrics(pred, labels, positive_class));
          },
          py::arg("predictions"), py::arg("labels"), py::arg("positive_class") = 1);

    m.def("metrics_from_confusion",
          [](std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
              return metrics_dict(metrics::metrics_from_confusion(tp, fp, fn, tn));
          },
          py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));

    m.def("farthest_point_order", &selection::farthest_point_order, py::arg("points"), py::arg("k"));

    m.def("alpha_bars", [](int steps, double beta_start, double beta_end) {
        return build_schedule(ScheduleKind::linear, steps, beta_start, beta_end).alpha_bars;
    });

    m.def("generate_corpus",
          [](int n_per_class, int size, std::uint64_t seed) {
              RngStream rng(seed, 0);
              const auto ds = corpus::generate_synthetic_corpus(n_per_class, size, rng);
              std::vector<std::size_t> all(ds.size());
              for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
              return py::make_tuple(to_numpy(ds.images()), ds.labels(all), ds.ids(), ds.class_names());
          },
          py::arg("n_per_class"), py::arg("size"), py::arg("seed"));

    m.def("encode_pgm", [](int width, int height, const std::vector<std::uint8_t>& pixels) {
        return py::bytes(corpus::encode_pgm(width, height, pixels));
    });

    m.def("decode_pgm", [](const py::bytes& data) {
        const auto img = corpus::decode_pgm(std::string(data));
        return py::make_tuple(img.width, img.height, img.pixels);
    });

    m.def("parameter_counts",
          [](const std::string& model, int input_size, bool freeze_backbone) {
              const auto kind = classify::model_kind_from_string(model);
              auto net = kind == classify::ModelKind::vgg16 ? classify::build_vgg16(input_size, freeze_backbone)
                                                            : classify::build_custom_cnn(input_size);
              const auto& p = net->params();
              return py::make_tuple(p.total_count(), p.trainable_count(), p.non_trainable_count());
          },
          py::arg("model"), py::arg("input_size"), py::arg("freeze_backbone") = false);
}
