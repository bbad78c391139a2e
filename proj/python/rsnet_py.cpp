#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "rsnet/check.hpp"
#include "rsnet/checkpoint.hpp"
#include "rsnet/cli.hpp"
#include "rsnet/data.hpp"
#include "rsnet/eval.hpp"
#include "rsnet/model.hpp"
#include "rsnet/wavelet.hpp"
#include "rsnet/workflow.hpp"

namespace py = pybind11;
using namespace rsnet;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  if (a.ndim() != 4) throw ShapeError("expected an N x C x H x W array, got " + std::to_string(a.ndim()) + " dims");
  Tensor<T> t(Shape{a.shape(0), a.shape(1), a.shape(2), a.shape(3)});
  std::copy(a.data(), a.data() + a.size(), t.ptr());
  return t;
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  const Shape s = t.shape();
  Array<T> a({s.n, s.c, s.h, s.w});
  std::copy(t.ptr(), t.ptr() + t.numel(), a.mutable_data());
  return a;
}

GrayImage to_image(const Array<std::uint8_t>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D uint8 image");
  GrayImage img{a.shape(0), a.shape(1), std::vector<std::uint8_t>(a.data(), a.data() + a.size())};
  return img;
}

py::tuple det_tuple(const Detection& d) { return py::make_tuple(d.cls, d.conf, d.box.cx, d.box.cy, d.box.w, d.box.h); }

Detection det_from(const py::sequence& s) {
  if (s.size() != 6) throw UsageError("a detection is (cls, conf, cx, cy, w, h)");
  return Detection{s[0].cast<int>(), s[1].cast<double>(),
                   Box{s[2].cast<double>(), s[3].cast<double>(), s[4].cast<double>(), s[5].cast<double>()}};
}

GroundTruth gt_from(const py::sequence& s) {
  if (s.size() != 5) throw UsageError("a ground truth box is (cls, cx, cy, w, h)");
  return GroundTruth{s[0].cast<int>(), Box{s[1].cast<double>(), s[2].cast<double>(), s[3].cast<double>(), s[4].cast<double>()}};
}

Box box_from(const py::sequence& s) {
  return Box{s[0].cast<double>(), s[1].cast<double>(), s[2].cast<double>(), s[3].cast<double>()};
}

// Model plus the defaults the CLI uses for detection.
struct PyModel {
  Model<float> model;

  py::list count(std::int64_t h, std::int64_t w) const {
    py::list rows;
    for (const auto& r : model.count(h, w).rows) {
      py::dict d;
      d["name"] = r.name;
      d["kind"] = r.kind;
      d["params"] = r.params;
      d["macs"] = r.macs;
      rows.append(d);
    }
    return rows;
  }

  py::list predict(const Array<float>& images) const {
    py::list out;
    for (const auto& m : model.predict(to_tensor(images))) out.append(py::make_tuple(to_array(m.box), to_array(m.cls)));
    return out;
  }

  py::list detect(const Array<std::uint8_t>& image, double conf, double nms_iou) const {
    const GrayImage img = to_image(image);
    DetectOptions o;
    o.conf = conf;
    o.nms_iou = nms_iou;
    const auto all = rsnet::predict(model, {&img}, o);
    py::list out;
    for (const auto& d : all[0]) out.append(det_tuple(d));
    return out;
  }

  Array<std::uint8_t> heat(const Array<std::uint8_t>& image, const std::string& tap) const {
    const GrayImage img = to_image(image);
    const auto act = model.activation(image_tensor(img, model.config().input_channels), tap);
    const auto v = heatmap(act, img.h, img.w);
    Array<std::uint8_t> a({img.h, img.w});
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Wavelet/context-guided SAR ship detector: library bindings";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "haar_analysis",
      [](const Array<double>& x) {
        Tape<double> t(false);
        return to_array(haar_analysis(t.constant(to_tensor(x))).bands.value());
      },
      py::arg("x"), "Single-level 2-D Haar analysis; returns N x 4C x H/2 x W/2 bands [LL|LH|HL|HH].");
  m.def(
      "haar_synthesis",
      [](const Array<double>& bands) {
        Tape<double> t(false);
        return to_array(haar_synthesis(t.constant(to_tensor(bands))).value());
      },
      py::arg("bands"));

  m.def("presets", &ArchConfig::preset_names);
  m.def(
      "config_text", [](const std::string& name) { return ArchConfig::resolve(name).to_text(); }, py::arg("name"));

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& config, std::uint64_t seed) {
             return PyModel{Model<float>(ArchConfig::resolve(config), seed)};
           }),
           py::arg("config") = "rsnet-desk", py::arg("seed") = 1)
      .def_static(
          "load", [](const std::string& path) { return PyModel{load_checkpoint<float>(path)}; }, py::arg("path"))
      .def(
          "save", [](const PyModel& self, const std::string& path) { save_checkpoint(self.model, path); },
          py::arg("path"))
      .def_property_readonly("config", [](const PyModel& self) { return self.model.config().to_text(); })
      .def_property_readonly("num_params", [](const PyModel& self) { return self.model.params().trainable_count(); })
      .def_property_readonly("taps", [](const PyModel& self) { return self.model.graph().taps; })
      .def("count", &PyModel::count, py::arg("height") = 640, py::arg("width") = 640)
      .def(
          "flops", [](const PyModel& self, std::int64_t h, std::int64_t w) { return self.model.count(h, w).total_flops(); },
          py::arg("height") = 640, py::arg("width") = 640)
      .def("predict", &PyModel::predict, py::arg("images"),
           "Raw (box, cls) maps per level for an N x C x H x W float32 batch.")
      .def("detect", &PyModel::detect, py::arg("image"), py::arg("conf") = 0.25, py::arg("nms_iou") = 0.6,
           "Detections (cls, conf, cx, cy, w, h) for one uint8 H x W image.")
      .def("heatmap", &PyModel::heat, py::arg("image"), py::arg("tap"));

  m.def(
      "iou", [](const py::sequence& a, const py::sequence& b) { return iou(box_from(a), box_from(b)); }, py::arg("a"),
      py::arg("b"), "IoU of two (cx, cy, w, h) boxes.");
  m.def(
      "nms",
      [](const py::list& dets, double thr) {
        std::vector<Detection> d;
        for (const auto& x : dets) d.push_back(det_from(x.cast<py::sequence>()));
        py::list out;
        for (const auto& k : nms(d, thr)) out.append(det_tuple(k));
        return out;
      },
      py::arg("detections"), py::arg("iou_threshold"));
  m.def(
      "evaluate",
      [](const py::list& images) {
        std::vector<EvalImage> ims;
        for (const auto& item : images) {
          const auto t = item.cast<py::tuple>();
          EvalImage im;
          im.id = t[0].cast<std::string>();
          for (const auto& d : t[1].cast<py::list>()) im.detections.push_back(det_from(d.cast<py::sequence>()));
          for (const auto& g : t[2].cast<py::list>()) im.gt.push_back(gt_from(g.cast<py::sequence>()));
          ims.push_back(std::move(im));
        }
        const auto r = evaluate(ims);
        py::dict d;
        d["map50"] = r.map50;
        d["map50_95"] = r.map50_95;
        d["num_images"] = r.num_images;
        d["num_detections"] = r.num_detections;
        return d;
      },
      py::arg("images"), "images: list of (id, [(cls, conf, cx, cy, w, h)], [(cls, cx, cy, w, h)]).");

  m.def(
      "render_scene",
      [](const std::string& spec_path, std::int64_t index) {
        const auto spec = SyntheticSceneSpec::load(spec_path);
        const auto sc = render_scene(spec, index);
        Array<std::uint8_t> img({sc.image.h, sc.image.w});
        std::copy(sc.image.pixels.begin(), sc.image.pixels.end(), img.mutable_data());
        py::list gt;
        for (const auto& g : sc.gt) gt.append(py::make_tuple(g.cls, g.box.cx, g.box.cy, g.box.w, g.box.h));
        return py::make_tuple(img, gt);
      },
      py::arg("spec_path"), py::arg("index"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line front end in-process; returns (exit_code, stdout, stderr).");

  m.def(
      "run_checks",
      [](int shapes) {
        CheckOptions o;
        o.gradient_shapes = shapes;
        py::list out;
        for (const auto& r : run_checks(o)) out.append(py::make_tuple(r.name, r.ok, r.detail));
        return out;
      },
      py::arg("shapes") = 1);

  m.attr("source_digest") = source_digest();
}
