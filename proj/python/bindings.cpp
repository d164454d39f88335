#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "ascm/config.hpp"
#include "ascm/evaluation.hpp"
#include "ascm/flow.hpp"
#include "ascm/io.hpp"
#include "ascm/matcher.hpp"
#include "ascm/model.hpp"
#include "ascm/parallel.hpp"
#include "ascm/synth.hpp"
#include "ascm/trainer.hpp"

namespace py = pybind11;
using namespace ascm;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// H x W images become 1 x H x W.
Tensor<float> to_tensor(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("expected a 2-D or 3-D array");
  Shape shape;
  if (a.ndim() == 2) shape.push_back(1);
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  Tensor<float> t(shape);
  std::memcpy(t.data(), a.data(), t.size() * sizeof(float));
  return t;
}

FloatArray to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray a(shape);
  std::memcpy(a.mutable_data(), t.data(), t.size() * sizeof(float));
  return a;
}

py::dict flow_to_dict(const FlowField& f) {
  py::dict d;
  const std::vector<py::ssize_t> shape{f.height, f.width};
  py::array_t<float> u(shape), v(shape);
  py::array_t<bool> valid(shape);
  std::memcpy(u.mutable_data(), f.u.data(), f.size() * sizeof(float));
  std::memcpy(v.mutable_data(), f.v.data(), f.size() * sizeof(float));
  for (std::size_t i = 0; i < f.size(); ++i) valid.mutable_data()[i] = f.valid[i] != 0;
  d["u"] = u;
  d["v"] = v;
  d["valid"] = valid;
  return d;
}

FlowField flow_from_arrays(const FloatArray& u, const FloatArray& v,
                           const py::array_t<bool, py::array::c_style | py::array::forcecast>& valid) {
  if (u.ndim() != 2 || v.ndim() != 2 || valid.ndim() != 2) throw std::invalid_argument("flow arrays must be 2-D");
  if (u.shape(0) != v.shape(0) || u.shape(1) != v.shape(1) || u.shape(0) != valid.shape(0) ||
      u.shape(1) != valid.shape(1)) {
    throw std::invalid_argument("flow arrays differ in shape");
  }
  FlowField f(static_cast<int>(u.shape(0)), static_cast<int>(u.shape(1)));
  std::memcpy(f.u.data(), u.data(), f.size() * sizeof(float));
  std::memcpy(f.v.data(), v.data(), f.size() * sizeof(float));
  for (std::size_t i = 0; i < f.size(); ++i) f.valid[i] = valid.data()[i];
  return f;
}

py::array_t<std::uint8_t> image_to_array(const Image8& img) {
  std::vector<py::ssize_t> shape{img.height, img.width};
  if (img.channels == 3) shape.push_back(3);
  py::array_t<std::uint8_t> a(shape);
  std::memcpy(a.mutable_data(), img.pixels.data(), img.pixels.size());
  return a;
}

Image8 image_from_array(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 && !(a.ndim() == 3 && a.shape(2) == 3)) {
    throw std::invalid_argument("expected an H x W or H x W x 3 uint8 array");
  }
  Image8 img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), a.ndim() == 3 ? 3 : 1);
  std::memcpy(img.pixels.data(), a.data(), img.pixels.size());
  return img;
}

}  // namespace

PYBIND11_MODULE(_ascm, m) {
  m.doc() = "Scale-attention correspondence network: features, matching and flow";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::enum_<Fusion>(m, "Fusion").value("attention", Fusion::attention).value("concat", Fusion::concat);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](int width, std::vector<double> scales, Fusion fusion, int in_channels) {
             ModelConfig c;
             c.width = width;
             c.scales = std::move(scales);
             c.fusion = fusion;
             c.in_channels = in_channels;
             c.validate();
             return c;
           }),
           py::arg("width") = 64, py::arg("scales") = std::vector<double>{1.0, 2.0},
           py::arg("fusion") = Fusion::attention, py::arg("in_channels") = 1)
      .def_readwrite("width", &ModelConfig::width)
      .def_readwrite("scales", &ModelConfig::scales)
      .def_readwrite("fusion", &ModelConfig::fusion)
      .def_readwrite("in_channels", &ModelConfig::in_channels)
      .def_property_readonly("feature_dim", &ModelConfig::feature_dim);

  py::class_<ModelParams<float>>(m, "Model")
      .def(py::init([](const ModelConfig& c, std::uint64_t seed) { return ModelParams<float>::init(c, seed); }),
           py::arg("config"), py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return load_checkpoint(path).model; })
      .def("save", [](const ModelParams<float>& model, const std::string& path) { save_checkpoint(path, model); })
      .def_readonly("config", &ModelParams<float>::config)
      .def("features",
           [](const ModelParams<float>& model, const FloatArray& image) {
             return to_array(autoscale_features(to_tensor(image), model));
           })
      .def("single_scale_features",
           [](const ModelParams<float>& model, const FloatArray& image) {
             return to_array(feature_forward(to_tensor(image), model));
           })
      .def("attention", [](const ModelParams<float>& model, const FloatArray& image) {
        return to_array(attention_forward(to_tensor(image), model));
      });

  m.def(
      "dense_match",
      [](const FloatArray& fs, const FloatArray& ft, int radius_y, int radius_x) {
        return flow_to_dict(dense_match(to_tensor(fs), to_tensor(ft), radius_y, radius_x));
      },
      py::arg("source_features"), py::arg("target_features"), py::arg("radius_y"), py::arg("radius_x"));

  m.def(
      "estimate_flow",
      [](const FloatArray& fs, const FloatArray& ft, int radius, double threshold) {
        const FlowEstimate est =
            estimate_flow(to_tensor(fs), to_tensor(ft), SearchWindow::symmetric(radius, radius), threshold);
        py::dict d;
        d["forward"] = flow_to_dict(est.forward);
        d["backward"] = flow_to_dict(est.backward);
        d["filtered"] = flow_to_dict(est.filtered);
        d["filled"] = flow_to_dict(est.filled);
        return d;
      },
      py::arg("source_features"), py::arg("target_features"), py::arg("radius") = 8, py::arg("threshold") = 3.0);

  m.def(
      "match_loss", [](const std::vector<double>& scores, int gt_index) { return match_loss<double>(scores, gt_index); },
      py::arg("scores"), py::arg("gt_index"));

  m.def(
      "epe",
      [](const FloatArray& pu, const FloatArray& pv, const FloatArray& gu, const FloatArray& gv,
         const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask) {
        const FlowField pred = flow_from_arrays(pu, pv, mask);
        const FlowField gt = flow_from_arrays(gu, gv, mask);
        return epe(pred, gt, std::vector<std::uint8_t>(gt.valid.begin(), gt.valid.end()));
      },
      py::arg("pred_u"), py::arg("pred_v"), py::arg("gt_u"), py::arg("gt_v"), py::arg("mask"));

  m.def("pck_length", &pck_length, py::arg("source_width"), py::arg("source_height"), py::arg("target_width"),
        py::arg("target_height"));
  m.def("lr_schedule", &lr_schedule, py::arg("iteration"), py::arg("base") = 0.002, py::arg("step") = 50000,
        py::arg("factor") = 5.0);

  m.def("read_flo", [](const std::string& path) { return flow_to_dict(read_flo(path)); });
  m.def(
      "write_flo",
      [](const std::string& path, const FloatArray& u, const FloatArray& v,
         const py::array_t<bool, py::array::c_style | py::array::forcecast>& valid) {
        write_flo(path, flow_from_arrays(u, v, valid));
      },
      py::arg("path"), py::arg("u"), py::arg("v"), py::arg("valid"));
  m.def("read_pnm", [](const std::string& path) { return image_to_array(read_pnm(path)); });
  m.def("write_pnm", [](const std::string& path, const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    write_pnm(path, image_from_array(a));
  });

  m.def(
      "synth_pair",
      [](std::uint64_t seed, int height, int width, int regions, int max_flow) {
        SynthConfig c;
        c.height = height;
        c.width = width;
        c.regions = regions;
        c.max_flow = max_flow;
        const SyntheticPair p = synth_pair(c, seed);
        py::dict d;
        d["source"] = image_to_array(p.source);
        d["target"] = image_to_array(p.target);
        d["flow"] = flow_to_dict(p.flow);
        return d;
      },
      py::arg("seed"), py::arg("height") = 48, py::arg("width") = 48, py::arg("regions") = 3, py::arg("max_flow") = 6);

  m.def("set_num_threads", &set_num_threads, py::arg("n"));
  m.def("num_threads", &num_threads);
}
