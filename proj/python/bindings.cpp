#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mmfuse/expcli/ablation.hpp"
#include "mmfuse/expcli/cli.hpp"
#include "mmfuse/expcli/report.hpp"
#include "mmfuse/features/container.hpp"
#include "mmfuse/features/detr_mask.hpp"
#include "mmfuse/features/split.hpp"
#include "mmfuse/features/synth.hpp"
#include "mmfuse/trainer/metrics.hpp"
#include "mmfuse/trainer/optim.hpp"

namespace py = pybind11;
using namespace mmfuse;

namespace {

// nlohmann::json -> Python via the json module keeps the binding small.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict generate_synthetic(const std::string& kind, const std::string& out, std::size_t records,
                            std::size_t text_dim, std::size_t image_dim, std::size_t max_boxes, std::size_t max_text,
                            double signal, std::uint64_t seed) {
  features::SynthSpec spec;
  if (kind == "mami") {
    spec = features::mami_synth_spec(records, text_dim, image_dim, max_boxes, max_text);
  } else if (kind == "fbhm") {
    spec = features::fbhm_synth_spec(records, text_dim, image_dim, max_boxes, max_text);
  } else {
    throw py::value_error("kind must be 'mami' or 'fbhm'");
  }
  spec.signal_strength = signal;
  const auto set = features::synth_generate(spec, seed);
  features::write_features(out, set.spec, set.records);
  py::dict d;
  d["dataset"] = set.spec.name;
  d["records"] = set.records.size();
  return d;
}

py::dict read_dataset(const std::string& dir) {
  const auto set = features::read_features(dir);
  py::dict d;
  d["spec"] = to_python(features::dataset_spec_to_json(set.spec));
  std::vector<std::uint64_t> ids;
  py::array_t<std::uint8_t> labels({set.records.size(), set.spec.label_names.size()});
  auto l = labels.mutable_unchecked<2>();
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    ids.push_back(set.records[i].id);
    for (std::size_t c = 0; c < set.spec.label_names.size(); ++c) l(i, c) = set.records[i].labels[c];
  }
  d["ids"] = ids;
  d["labels"] = labels;
  return d;
}

py::tuple stratified_split(const std::string& dir, double ratio, std::uint64_t seed) {
  const auto set = features::read_features(dir);
  const auto s = features::stratified_split(set.records, ratio, seed);
  return py::make_tuple(s.train, s.dev);
}

py::array_t<std::uint8_t> detr_object_mask(py::array_t<float, py::array::c_style | py::array::forcecast> logits,
                                           std::size_t no_object_index) {
  if (logits.ndim() != 2) throw py::value_error("logits must be a boxes x classes matrix");
  const std::size_t boxes = logits.shape(0), classes = logits.shape(1);
  const auto mask = features::detr_object_mask(std::span<const float>(logits.data(), boxes * classes), boxes, classes,
                                               no_object_index);
  py::array_t<std::uint8_t> out(boxes);
  std::copy(mask.begin(), mask.end(), out.mutable_data());
  return out;
}

py::tuple run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = expcli::run_cli(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

py::list ablation_round(int round) {
  py::list out;
  for (const auto& e : expcli::ablation_round(round, trainer::RunConfig{})) {
    out.append(py::make_tuple(e.id, to_python(trainer::to_json(e.config))));
  }
  return out;
}

py::dict series_stats(const std::vector<double>& values) {
  const auto s = expcli::series_stats(values);
  return to_python(expcli::stats_to_json({"", "", "", "", values}, s)).cast<py::dict>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "mmfuse core bindings";

  py::register_exception<features::FeatureStoreError>(m, "FeatureStoreError", PyExc_RuntimeError);
  py::register_exception<trainer::MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<fusion::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<expcli::ReportError>(m, "ReportError", PyExc_ValueError);

  m.def("generate_synthetic", &generate_synthetic, py::arg("kind"), py::arg("out"), py::arg("records") = 400,
        py::arg("text_dim") = 32, py::arg("image_dim") = 32, py::arg("max_boxes") = 24, py::arg("max_text") = 24,
        py::arg("signal") = 3.0, py::arg("seed") = 0, "Write a synthetic MAMI- or FBHM-shaped feature directory.");
  m.def("read_dataset", &read_dataset, py::arg("dir"), "Spec, record ids and the label matrix of a feature directory.");
  m.def("stratified_split", &stratified_split, py::arg("dir"), py::arg("ratio") = 0.8, py::arg("seed") = 0,
        "(train ids, dev ids) stratified on the full label vector.");
  m.def("detr_object_mask", &detr_object_mask, py::arg("logits"), py::arg("no_object_index"),
        "Keep-mask over boxes for a boxes x classes logit matrix.");
  m.def(
      "score_a",
      [](const std::vector<double>& probs, const std::vector<std::uint8_t>& labels, double threshold) {
        return trainer::score_a(probs, labels, threshold);
      },
      py::arg("probs"), py::arg("labels"), py::arg("threshold") = trainer::kDecisionThreshold,
      "Mean of positive and negative F1 of one binary label.");
  m.def("score_b", &trainer::score_b, py::arg("probs"), py::arg("labels"),
        py::arg("threshold") = trainer::kDecisionThreshold,
        "Support-weighted positive F1 over labels; rows are instances.");
  m.def("lr_at", &trainer::lr_at, py::arg("step"), py::arg("warmup"), py::arg("total"), py::arg("base_lr"));
  m.def("ablation_round", &ablation_round, py::arg("round"), "[(id, config)] of an ablation round.");
  m.def("series_stats", &series_stats, py::arg("values"), "Mean, 95% t-interval and box summary.");
  m.def("run_cli", &run_cli, py::arg("args"), "Run an mmfuse subcommand; returns (exit code, stdout, stderr).");
}
