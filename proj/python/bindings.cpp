// SPDX-License-Identifier: Apache-2.0
// pybind11 module hardcore._core

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hardcore/dataset.hpp"
#include "hardcore/error.hpp"
#include "hardcore/evaluation.hpp"
#include "hardcore/features.hpp"
#include "hardcore/magloss.hpp"
#include "hardcore/model.hpp"
#include "hardcore/synthetic.hpp"
#include "hardcore/training.hpp"

namespace py = pybind11;
using namespace hardcore;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

std::vector<double> to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return std::vector<double>(a.data(), a.data() + a.size());
}

WaveformRecord make_record(const py::array_t<double, py::array::c_style | py::array::forcecast>& b, double frequency,
                           double temperature, std::optional<py::array_t<double, py::array::c_style | py::array::forcecast>> h,
                           std::optional<double> loss, std::string record_id) {
  WaveformRecord r;
  r.b = to_vector(b);
  if (h) r.h = to_vector(*h);
  r.frequency = frequency;
  r.temperature = temperature;
  r.loss = loss;
  r.record_id = std::move(record_id);
  validate_record(r);
  return r;
}

TrainConfig make_config(const std::optional<std::string>& config_path, const std::vector<std::string>& overrides) {
  TrainConfig c = config_path ? load_train_config(*config_path) : TrainConfig{};
  for (const auto& o : overrides) apply_config_override(c, o);
  c.validate();
  return c;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["material_id"] = m.material_id;
  d["n_eval"] = m.n_eval;
  d["avg_rel_err"] = m.avg_rel_err;
  d["p95_rel_err"] = m.p95_rel_err;
  d["median_rel_err"] = m.median_rel_err;
  d["min_rel_err"] = m.min_rel_err;
  d["max_rel_err"] = m.max_rel_err;
  d["rel_errors"] = to_array(m.rel_errors);
  d["record_ids"] = m.record_ids;
  return d;
}

py::list log_list(const std::vector<EpochLog>& log) {
  py::list out;
  for (const auto& e : log) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["loss_h"] = e.loss_h;
    d["loss_p"] = e.loss_p;
    d["alpha"] = e.alpha;
    d["lr"] = e.lr;
    d["val_avg_rel_err"] = e.val_avg_rel_err;
    d["val_p95_rel_err"] = e.val_p95_rel_err;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "HARDCORE core-loss model: data handling, training and inference";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.attr("SEQUENCE_LENGTH") = kSequenceLength;
  m.attr("DEFAULT_TOPOLOGY") = HardcoreConfig{}.label();

  m.def("parameter_count", [](const std::string& label) { return parameter_count(config_from_label(label)); },
        py::arg("topology") = HardcoreConfig{}.label(), "Trainable parameters of a topology label.");

  m.def(
      "shoelace_power",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& b,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& h, double frequency) {
        const auto bv = to_vector(b), hv = to_vector(h);
        const LoopLoss l = shoelace_power(bv, hv, frequency);
        return py::make_tuple(l.area, l.p_hyst);
      },
      py::arg("b"), py::arg("h"), py::arg("frequency"), "Signed loop area and f * area.");

  m.def(
      "classify_waveform",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        return to_string(classify_waveform(to_vector(b)));
      },
      py::arg("b"));

  m.def(
      "relative_error_stats",
      [](const std::vector<double>& p_hat, const std::vector<double>& p) {
        return metrics_dict(relative_error_stats(p_hat, p));
      },
      py::arg("p_hat"), py::arg("p"));

  m.def(
      "pareto_frontier",
      [](const std::vector<std::pair<std::size_t, double>>& points) {
        std::vector<ParetoPoint> pts;
        for (const auto& [n, e] : points) pts.push_back({"", n, e});
        return pareto_frontier(pts);
      },
      py::arg("points"), "Indices of non-dominated (parameters, error) pairs.");

  py::class_<WaveformRecord>(m, "Record")
      .def(py::init(&make_record), py::arg("b"), py::arg("frequency"), py::arg("temperature"),
           py::arg("h") = py::none(), py::arg("loss") = py::none(), py::arg("record_id") = "")
      .def_property_readonly("b", [](const WaveformRecord& r) { return to_array(r.b); })
      .def_property_readonly("h",
                             [](const WaveformRecord& r) -> py::object {
                               return r.h ? py::object(to_array(*r.h)) : py::object(py::none());
                             })
      .def_readonly("frequency", &WaveformRecord::frequency)
      .def_readonly("temperature", &WaveformRecord::temperature)
      .def_readonly("loss", &WaveformRecord::loss)
      .def_readonly("record_id", &WaveformRecord::record_id);

  py::class_<MaterialDataset>(m, "Dataset")
      .def(py::init([](std::string id, std::vector<WaveformRecord> records) {
             return MaterialDataset(std::move(id), std::move(records));
           }),
           py::arg("material_id"), py::arg("records"))
      .def_property_readonly("material_id", &MaterialDataset::material_id)
      .def_property_readonly("b_lim", &MaterialDataset::b_lim)
      .def_property_readonly("h_lim", &MaterialDataset::h_lim)
      .def("__len__", &MaterialDataset::size)
      .def("__getitem__",
           [](const MaterialDataset& d, std::size_t i) {
             if (i >= d.size()) throw py::index_error();
             return d[i];
           })
      .def("save", [](const MaterialDataset& d, const std::filesystem::path& dir) { write_material(d, dir); });

  m.def(
      "load_material",
      [](const std::filesystem::path& dir, std::optional<std::string> id) { return load_material(dir, id); },
      py::arg("directory"), py::arg("material_id") = py::none());

  m.def(
      "synthetic_dataset",
      [](std::size_t records, std::uint64_t seed, const std::vector<std::string>& shapes, double factor_amplitude,
         const std::string& material_id) {
        SyntheticOptions o;
        o.records = records;
        o.seed = seed;
        o.factor_amplitude = factor_amplitude;
        o.shapes.clear();
        for (const auto& s : shapes) o.shapes.push_back(waveform_class_from_string(s));
        return make_synthetic_dataset(o, material_id);
      },
      py::arg("records") = 1000, py::arg("seed") = 0, py::arg("shapes") = std::vector<std::string>{"sine"},
      py::arg("factor_amplitude") = 0.05, py::arg("material_id") = "synthetic");

  m.def(
      "area_error_stats",
      [](const MaterialDataset& d, std::size_t bins) {
        const auto s = area_error_stats(d, bins);
        py::dict out;
        out["relative_errors"] = to_array(s.relative_errors);
        out["min"] = s.min;
        out["max"] = s.max;
        out["mean"] = s.mean;
        out["skipped"] = s.skipped;
        out["negative_area_records"] = s.negative_area_records;
        py::list hist;
        for (const auto& b : s.bins) hist.append(py::make_tuple(b.left, b.right, b.count));
        out["bins"] = hist;
        return out;
      },
      py::arg("dataset"), py::arg("bins") = 40);

  py::class_<HardcoreModel>(m, "Model")
      .def(py::init([](const MaterialDataset& d, const std::string& topology, std::uint64_t seed) {
             return HardcoreModel(config_from_label(topology), compute_norms(d.records()), d.material_id(), seed);
           }),
           py::arg("dataset"), py::arg("topology") = HardcoreConfig{}.label(), py::arg("seed") = 0,
           "Untrained model with normalization limits taken from the dataset.")
      .def_property_readonly("material_id", &HardcoreModel::material_id)
      .def_property_readonly("topology", [](const HardcoreModel& mdl) { return mdl.config().label(); })
      .def_property_readonly("parameter_count", &HardcoreModel::parameter_total)
      .def(
          "predict",
          [](const HardcoreModel& mdl, const MaterialDataset& d) {
            std::vector<Prediction> pred;
            {
              py::gil_scoped_release release;
              pred = mdl.predict(d.records());
            }
            std::vector<double> p;
            py::array_t<double> h({pred.size(), kSequenceLength});
            auto hv = h.mutable_unchecked<2>();
            for (std::size_t i = 0; i < pred.size(); ++i) {
              p.push_back(pred[i].p_hat);
              for (std::size_t k = 0; k < kSequenceLength; ++k) hv(i, k) = pred[i].h_hat[k];
            }
            return py::make_tuple(to_array(p), h);
          },
          py::arg("dataset"), "Returns (p_hat, h_hat) with shapes (N,) and (N, 1024).")
      .def("save", [](const HardcoreModel& mdl, const std::filesystem::path& p) { save_model(mdl, p); })
      .def("to_json", &model_to_json_text);

  m.def("load_model", &load_model, py::arg("path"));

  m.def(
      "train",
      [](const MaterialDataset& d, std::optional<std::string> config, std::vector<std::string> overrides) {
        const TrainConfig c = make_config(config, overrides);
        TrainRun run;
        {
          py::gil_scoped_release release;
          run = train(d, nullptr, std::nullopt, c);
        }
        py::dict out;
        out["model"] = py::cast(std::move(*run.model));
        out["log"] = log_list(run.log);
        out["training_p_hat"] = to_array(run.training_p_hat);
        return out;
      },
      py::arg("dataset"), py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
      "Train on every trainable record. Overrides use section.key=value.");

  m.def(
      "cross_validate",
      [](const MaterialDataset& d, std::vector<std::uint64_t> seeds, std::optional<std::string> config,
         std::vector<std::string> overrides, unsigned workers) {
        const TrainConfig c = make_config(config, overrides);
        CrossValidation cv;
        {
          py::gil_scoped_release release;
          cv = cross_validate(d, c, seeds, 0, workers);
        }
        py::list runs;
        for (const auto& r : cv.runs) {
          py::dict e;
          e["seed"] = r.config.seed;
          e["fold"] = r.fold;
          e["validation"] = metrics_dict(*r.validation);
          e["log"] = log_list(r.log);
          runs.append(e);
        }
        py::dict out;
        out["runs"] = runs;
        out["best_seed"] = cv.best_seed;
        out["seed_mean_avg_rel_err"] = cv.seed_mean_avg_rel_err;
        if (cv.best_pooled) out["best_pooled"] = metrics_dict(*cv.best_pooled);
        return out;
      },
      py::arg("dataset"), py::arg("seeds") = std::vector<std::uint64_t>{0}, py::arg("config") = py::none(),
      py::arg("overrides") = std::vector<std::string>{}, py::arg("workers") = 0);
}
