#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "densemp/checkpoint.hpp"
#include "densemp/config.hpp"
#include "densemp/errors.hpp"
#include "densemp/fewshot.hpp"
#include "densemp/pipeline.hpp"
#include "densemp/superpixel.hpp"
#include "densemp/synthetic.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace densemp;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Grid<double> to_grid(const DoubleArray& a) {
  if (a.ndim() != 2) throw ArgumentError("expected a 2-D array");
  Grid<double> g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), g.values().begin());
  return g;
}

Mask to_mask(const ByteArray& a) {
  if (a.ndim() != 2) throw ArgumentError("expected a 2-D array");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m[i] = a.data()[i] != 0;
  return m;
}

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
  py::array_t<T> a({g.height(), g.width()});
  std::copy(g.values().begin(), g.values().end(), a.mutable_data());
  return a;
}

py::array_t<double> tensor_to_array(const ad::Tensor& t) {
  py::array_t<double> a(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

PipelineConfig config_from_str(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  return config_from_json(j);
}

ImageSlice slice_of(const DoubleArray& image) { return {to_grid(image), "array", 1}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of densemp";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("default_config", [] { return to_json(PipelineConfig{}).dump(); }, "Default configuration as JSON text");
  m.def(
      "normalize_config", [](const std::string& text) { return to_json(config_from_str(text)).dump(); },
      py::arg("config_json"), "Validate a JSON configuration and fill in defaults");
  m.def(
      "config_fingerprint", [](const std::string& text) { return config_fingerprint(config_from_str(text)); },
      py::arg("config_json"));

  m.def(
      "felzenszwalb",
      [](const DoubleArray& image, double k_scale, double sigma, int min_size) {
        return to_array(felzenszwalb_segment(to_grid(image), {k_scale, sigma, min_size}).labels);
      },
      py::arg("image"), py::arg("k_scale") = FelzParams{}.k_scale, py::arg("sigma") = FelzParams{}.sigma,
      py::arg("min_size") = FelzParams{}.min_size, "Superpixel labels (int32, contiguous from 0)");

  m.def(
      "dice", [](const ByteArray& pred, const ByteArray& gt) { return dice(to_mask(pred), to_mask(gt)); },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "synthesize_slice",
      [](std::uint64_t seed, int patient, int slice, int image_size) {
        SyntheticConfig sc;
        sc.seed = seed;
        sc.image_size = image_size;
        const auto s = synthesize_slice(sc, patient, slice);
        return py::make_tuple(to_array(s.image), to_array(s.labels));
      },
      py::arg("seed"), py::arg("patient"), py::arg("slice"), py::arg("image_size") = 32,
      "(image, labels) of one phantom slice");

  m.def(
      "generate_synthetic",
      [](const fs::path& out_dir, int n_patients, int slices_per_patient, int n_folds, std::uint64_t seed) {
        SyntheticConfig sc;
        sc.n_patients = n_patients;
        sc.slices_per_patient = slices_per_patient;
        sc.n_folds = n_folds;
        sc.seed = seed;
        generate_synthetic(sc, out_dir);
        return out_dir / "manifest.jsonl";
      },
      py::arg("out_dir"), py::arg("n_patients") = 10, py::arg("slices_per_patient") = 10,
      py::arg("n_folds") = kDefaultFolds, py::arg("seed") = 0, "Writes the phantom dataset; returns the manifest path");

  m.def(
      "run_all",
      [](const std::string& config_json, const fs::path& out_dir) {
        const auto config = config_from_str(config_json);
        py::gil_scoped_release release;
        return run_all(config, out_dir).report.to_json().dump();
      },
      py::arg("config_json"), py::arg("out_dir"), "Full pipeline; returns the evaluation report as JSON text");

  py::class_<Encoder>(m, "Encoder")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return initial_encoder([&] {
               auto c = config_from_str(config_json);
               c.seed = seed;
               return c;
             }());
           }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def_static("load", &load_encoder, py::arg("path"))
      .def("save", [](const Encoder& e, const fs::path& p) { save_checkpoint(p, e); }, py::arg("path"))
      .def_property_readonly("parameter_count", &Encoder::parameter_count)
      .def(
          "encode", [](const Encoder& e, const DoubleArray& image) { return tensor_to_array(e.encode(slice_of(image))); },
          py::arg("image"), "Backbone features {C, h, w}")
      .def(
          "dense_keys",
          [](const Encoder& e, const DoubleArray& image) {
            return tensor_to_array(e.project_dense(e.encode(slice_of(image))));
          },
          py::arg("image"), "Normalized dense keys {C', S*S}")
      .def(
          "heatmap", [](const Encoder& e, const DoubleArray& image) { return to_array(feature_heatmap(e, slice_of(image))); },
          py::arg("image"));
}
