#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lrr/checkpoint.hpp"
#include "lrr/evaluation.hpp"
#include "lrr/losses.hpp"
#include "lrr/refinement.hpp"
#include "lrr/train.hpp"
#include "lrr_verify/suites.hpp"

namespace py = pybind11;
using namespace lrr;

namespace {

using ArrayD = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ArrayF = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ArrayU8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
Tensor<T> to_tensor(const A& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

LabelMap to_labels(const ArrayU8& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D uint8 label map");
  LabelMap m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

py::array_t<std::uint8_t> from_labels(const LabelMap& m) {
  py::array_t<std::uint8_t> out({py::ssize_t(m.height), py::ssize_t(m.width)});
  std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
  return out;
}

BasisBank<double> to_bank(const ArrayD& basis, std::size_t stride) {
  if (basis.ndim() != 4) throw std::invalid_argument("basis must have shape (2s, 2s, K, C)");
  BasisBank<double> b;
  b.stride = stride;
  b.K = basis.shape(2);
  b.C = basis.shape(3);
  b.basis = to_tensor<double>(basis);
  b.validate();
  return b;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["pixel_acc"] = m.pixel_acc;
  d["mean_class_acc"] = m.mean_class_acc;
  d["mean_iou"] = m.mean_iou;
  d["class_iou"] = m.class_iou;
  d["class_acc"] = m.class_acc;
  return d;
}

py::list results_list(const std::vector<verify::CheckResult>& rs) {
  py::list out;
  for (const auto& r : rs) {
    py::dict d;
    d["name"] = r.name;
    d["passed"] = r.pass;
    d["max_error"] = r.max_error;
    d["tolerance"] = r.tolerance;
    d["probes"] = r.probes;
    out.append(d);
  }
  return out;
}

class Model {
 public:
  explicit Model(const std::string& checkpoint) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    config_ = model_config_from_checkpoint(ck);
    params_ = params_from_checkpoint<float>(ck, config_);
  }

  std::size_t classes() const { return config_.classes(); }

  py::array_t<float> scores(const ArrayF& image, const std::vector<double>& scales) const {
    const TensorF img = to_tensor<float>(image);
    const ScoreFn<float> fn = [&](const TensorF& im) { return predict_scores(params_, config_, im); };
    return to_array(multiscale_predict(fn, img, scales));
  }

  py::array_t<std::uint8_t> predict(const ArrayF& image, const std::vector<double>& scales) const {
    const TensorF img = to_tensor<float>(image);
    const ScoreFn<float> fn = [&](const TensorF& im) { return predict_scores(params_, config_, im); };
    return from_labels(labels_from_scores(multiscale_predict(fn, img, scales)));
  }

  py::list level_labels(const ArrayF& image) const {
    py::list out;
    for (const auto& l : predict_level_labels(params_, config_, to_tensor<float>(image))) out.append(from_labels(l));
    return out;
  }

 private:
  ModelConfig config_;
  ModelParams<float> params_;
};

}  // namespace

PYBIND11_MODULE(_lrr, m) {
  m.doc() = "Multi-resolution semantic segmentation with basis reconstruction and boundary-masked refinement";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "conv2d",
      [](const ArrayD& input, const ArrayD& weight, const ArrayD& bias, std::size_t stride, std::size_t pad) {
        if (weight.ndim() != 4) throw std::invalid_argument("weight must be (out, in, kh, kw)");
        ConvSpec spec;
        spec.out_channels = weight.shape(0);
        spec.in_channels = weight.shape(1);
        spec.kernel_h = weight.shape(2);
        spec.kernel_w = weight.shape(3);
        spec.stride = stride;
        spec.pad = pad;
        return to_array(conv2d(to_tensor<double>(input), to_tensor<double>(weight), to_tensor<double>(bias), spec));
      },
      py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1, py::arg("pad") = 0);
  m.def(
      "maxpool2d",
      [](const ArrayD& input, std::size_t window, std::size_t stride, std::size_t pad) {
        return to_array(maxpool2d(to_tensor<double>(input), window, stride, pad).output);
      },
      py::arg("input"), py::arg("window"), py::arg("stride"), py::arg("pad") = 0);
  m.def(
      "bilinear_resize",
      [](const ArrayD& input, std::size_t h, std::size_t w) {
        return to_array(bilinear_resize(to_tensor<double>(input), h, w));
      },
      py::arg("input"), py::arg("height"), py::arg("width"));
  m.def("softmax_channels", [](const ArrayD& x) { return to_array(softmax_channels(to_tensor<double>(x))); });

  m.def(
      "reconstruct",
      [](const ArrayD& coeffs, const ArrayD& basis, std::size_t stride) {
        return to_array(reconstruct(to_tensor<double>(coeffs), to_bank(basis, stride)));
      },
      py::arg("coeffs"), py::arg("basis"), py::arg("stride"),
      "Synthesise C x sH x sW scores from (K*C) x H x W coefficients and a (2s, 2s, K, C) basis bank.");
  m.def(
      "reconstruct_backward",
      [](const ArrayD& coeffs, const ArrayD& basis, std::size_t stride, const ArrayD& grad) {
        const auto g = reconstruct_backward(to_tensor<double>(coeffs), to_bank(basis, stride), to_tensor<double>(grad));
        return py::make_tuple(to_array(g.coeffs), to_array(g.basis));
      },
      py::arg("coeffs"), py::arg("basis"), py::arg("stride"), py::arg("grad"));
  m.def(
      "tent_basis", [](std::size_t stride, std::size_t classes) { return to_array(tent_bank<double>(stride, classes).basis); },
      py::arg("stride"), py::arg("classes"));
  m.def(
      "fit_basis_pca",
      [](const ArrayF& patches, std::size_t K) {
        if (patches.ndim() != 3 || patches.shape(1) != patches.shape(2))
          throw std::invalid_argument("patches must have shape (N, p, p)");
        PatchSet ps;
        ps.patch = patches.shape(1);
        const std::size_t n = ps.patch * ps.patch;
        for (py::ssize_t i = 0; i < patches.shape(0); ++i)
          ps.patches.emplace_back(Shape{ps.patch, ps.patch},
                                  std::vector<float>(patches.data() + i * n, patches.data() + (i + 1) * n));
        const PcaBasis b = fit_basis_pca(ps, K);
        py::list comps;
        for (const auto& c : b.components) comps.append(to_array(c));
        return py::make_tuple(comps, b.singular_values);
      },
      py::arg("patches"), py::arg("K"), "Returns (components, singular_values).");

  m.def(
      "boundary_mask",
      [](const ArrayD& scores, std::size_t pool, double tau) {
        return to_array(boundary_mask(to_tensor<double>(scores), pool, tau));
      },
      py::arg("scores"), py::arg("pool") = 9, py::arg("tau") = 0.0);
  m.def(
      "disk_dilate", [](const ArrayU8& mask, int r) { return from_labels(disk_dilate(to_labels(mask), r)); },
      py::arg("mask"), py::arg("radius"));
  m.def(
      "disk_erode", [](const ArrayU8& mask, int r) { return from_labels(disk_erode(to_labels(mask), r)); },
      py::arg("mask"), py::arg("radius"));

  m.def(
      "generate_shapes",
      [](std::size_t n, std::size_t size, std::size_t classes, std::uint64_t seed) {
        py::list out;
        for (const Sample& s : generate_shapes(n, size, classes, seed))
          out.append(py::make_tuple(to_array(s.image), from_labels(s.truth)));
        return out;
      },
      py::arg("n"), py::arg("size") = 128, py::arg("classes") = 5, py::arg("seed") = 0,
      "List of (image 3 x H x W float32, labels H x W uint8) pairs.");
  m.def(
      "write_shapes",
      [](const std::string& dir, std::size_t n, std::size_t size, std::size_t classes, std::uint64_t seed) {
        return write_dataset(dir, generate_shapes(n, size, classes, seed));
      },
      py::arg("dir"), py::arg("n"), py::arg("size") = 128, py::arg("classes") = 5, py::arg("seed") = 0,
      "Writes a synthetic dataset as PPM/PGM files and returns the manifest path.");

  m.def(
      "metrics",
      [](const ArrayU8& pred, const ArrayU8& truth, std::size_t classes) {
        ConfusionMatrix cm(classes);
        accumulate(cm, to_labels(pred), to_labels(truth));
        return metrics_dict(metrics(cm));
      },
      py::arg("pred"), py::arg("truth"), py::arg("classes"));
  m.def(
      "trimap_band", [](const ArrayU8& truth, int r) { return from_labels(trimap_band(to_labels(truth), r)); },
      py::arg("truth"), py::arg("radius"));
  m.def(
      "trimap_curve",
      [](const std::vector<ArrayU8>& preds, const std::vector<ArrayU8>& truths, const std::vector<int>& radii,
         std::size_t classes) {
        std::vector<LabelMap> p, t;
        for (const auto& a : preds) p.push_back(to_labels(a));
        for (const auto& a : truths) t.push_back(to_labels(a));
        py::list out;
        for (const auto& pt : trimap_curve(p, t, radii, classes)) {
          py::dict d;
          d["radius"] = pt.radius;
          d["mean_iou"] = pt.mean_iou;
          d["pixel_acc"] = pt.pixel_acc;
          d["pixels"] = pt.pixels;
          out.append(d);
        }
        return out;
      },
      py::arg("preds"), py::arg("truths"), py::arg("radii"), py::arg("classes"));

  m.def(
      "train",
      [](const std::string& config_text) {
        const TrainResult r = train(parse_config_text(config_text));
        py::list losses;
        for (const auto& l : r.log) losses.append(l.report.total);
        return py::make_tuple(r.iterations, losses);
      },
      py::arg("config_text"), "Run a full training from config text; returns (iterations, total losses).");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def_property_readonly("classes", &Model::classes)
      .def("scores", &Model::scores, py::arg("image"), py::arg("scales") = std::vector<double>{1.0})
      .def("predict", &Model::predict, py::arg("image"), py::arg("scales") = std::vector<double>{1.0})
      .def("level_labels", &Model::level_labels, py::arg("image"));

  m.def("gradcheck", [] { return results_list(verify::gradcheck_suite()); });
  m.def("oracle_check", [](std::uint64_t seed) { return results_list(verify::oracle_suite(seed)); },
        py::arg("seed") = 11);
}
