#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "periscope/cli.hpp"
#include "periscope/errors.hpp"
#include "periscope/eval.hpp"
#include "periscope/fusion.hpp"
#include "periscope/handcrafted.hpp"
#include "periscope/inference.hpp"
#include "periscope/normalize.hpp"
#include "periscope/preprocess.hpp"
#include "periscope/protocol.hpp"
#include "periscope/synthetic.hpp"

namespace py = pybind11;
namespace ps = periscope;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// (S, S, C) -> CNN volume, (P, E) -> ViT tokens.
ps::ActivationTensor to_tensor(const FloatArray& a) {
  const std::vector<float> data(a.data(), a.data() + a.size());
  if (a.ndim() == 3) {
    if (a.shape(0) != a.shape(1)) throw ps::DataError("CNN volume must be S x S x C");
    return ps::ActivationTensor::cnn(static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(2)),
                                     data);
  }
  if (a.ndim() == 2) {
    return ps::ActivationTensor::vit(static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(1)),
                                     data);
  }
  throw ps::DataError("activation must have 2 or 3 dimensions");
}

FloatArray from_tensor(const ps::ActivationTensor& t) {
  std::vector<py::ssize_t> shape;
  for (auto d : t.dims()) shape.push_back(static_cast<py::ssize_t>(d));
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// 2-D grayscale or (H, W, 3) BGR, copied.
cv::Mat to_mat(const ByteArray& a) {
  if (a.ndim() == 2) {
    cv::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_8UC1,
              const_cast<std::uint8_t*>(a.data()));
    return m.clone();
  }
  if (a.ndim() == 3 && a.shape(2) == 3) {
    cv::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_8UC3,
              const_cast<std::uint8_t*>(a.data()));
    return m.clone();
  }
  throw ps::DataError("image must be H x W or H x W x 3 uint8");
}

FloatArray vector_array(const std::vector<float>& v) {
  FloatArray out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

ps::RegionLayout layout(int rows, int cols, std::optional<int> cell) { return {rows, cols, cell}; }

ps::onnx::Tensor to_onnx(const py::array& a) {
  std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
  if (py::isinstance<py::array_t<std::int64_t>>(a)) {
    const auto ints = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>::ensure(a);
    return ps::onnx::Tensor::ints(shape, std::vector<std::int64_t>(ints.data(), ints.data() + ints.size()));
  }
  const auto floats = FloatArray::ensure(a);
  if (!floats) throw ps::DataError("feed must be a numeric array");
  return ps::onnx::Tensor::floats(shape, std::vector<float>(floats.data(), floats.data() + floats.size()));
}

py::array from_onnx(const ps::onnx::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  if (t.dtype == ps::onnx::Tensor::DType::Int64) {
    py::array_t<std::int64_t> out(shape);
    std::copy(t.i.begin(), t.i.end(), out.mutable_data());
    return out;
  }
  FloatArray out(shape);
  std::copy(t.f.begin(), t.f.end(), out.mutable_data());
  return out;
}

ps::ScoreSet score_set(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  return ps::ScoreSet{genuine, impostor};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Periocular verification: descriptors, normalization, scoring, fusion and evaluation";

  auto base = py::register_exception<ps::Error>(m, "PeriscopeError", PyExc_RuntimeError);
  py::register_exception<ps::FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ps::DataError>(m, "DataError", base.ptr());
  py::register_exception<ps::LookupError>(m, "LookupError", base.ptr());
  py::register_exception<ps::ComparatorError>(m, "ComparatorError", base.ptr());
  py::register_exception<ps::SizeError>(m, "SizeError", base.ptr());
  py::register_exception<ps::CatalogError>(m, "CatalogError", base.ptr());
  py::register_exception<ps::TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<ps::MetricError>(m, "MetricError", base.ptr());
  py::register_exception<ps::ExtractionError>(m, "ExtractionError", base.ptr());
  py::register_exception<ps::IoError>(m, "IoError", base.ptr());

  // metrics
  m.def(
      "compute_eer",
      [](const std::vector<double>& genuine, const std::vector<double>& impostor) {
        return ps::compute_eer(score_set(genuine, impostor));
      },
      py::arg("genuine"), py::arg("impostor"), "Equal error rate in percent; higher scores mean more similar.");
  m.def(
      "det_curve",
      [](const std::vector<double>& genuine, const std::vector<double>& impostor) {
        const auto pts = ps::det_curve(score_set(genuine, impostor));
        py::array_t<double> out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
        auto v = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < pts.size(); ++i) {
          v(i, 0) = pts[i].threshold;
          v(i, 1) = pts[i].far;
          v(i, 2) = pts[i].frr;
        }
        return out;
      },
      py::arg("genuine"), py::arg("impostor"), "Rows of (threshold, far, frr).");
  m.def("heatmap_value", &ps::heatmap_value, py::arg("eer_percent"));

  // activations
  m.def(
      "normalize",
      [](const FloatArray& a, const std::string& strategy) {
        const auto f = ps::normalize(to_tensor(a), ps::parse_strategy(strategy));
        FloatArray out({static_cast<py::ssize_t>(f.slices()), static_cast<py::ssize_t>(f.slice_len())});
        std::copy(f.data().begin(), f.data().end(), out.mutable_data());
        return out;
      },
      py::arg("activation"), py::arg("strategy"), "Normalized slices, one row per slice.");
  m.def(
      "score",
      [](const FloatArray& a, const FloatArray& b, const std::string& strategy) {
        const auto s = ps::parse_strategy(strategy);
        return ps::score(ps::normalize(to_tensor(a), s), ps::normalize(to_tensor(b), s));
      },
      py::arg("a"), py::arg("b"), py::arg("strategy"));
  m.def(
      "encode_activation",
      [](const FloatArray& a) {
        const auto bytes = ps::encode_activation_dump(to_tensor(a));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("activation"));
  m.def(
      "decode_activation",
      [](const py::bytes& b) {
        const std::string s = b;
        return from_tensor(ps::decode_activation_dump(
            std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
      },
      py::arg("data"));
  m.def(
      "write_activation", [](const std::filesystem::path& p, const FloatArray& a) { ps::write_activation_dump(p, to_tensor(a)); },
      py::arg("path"), py::arg("activation"));
  m.def(
      "read_activation", [](const std::filesystem::path& p) { return from_tensor(ps::read_activation_dump(p)); },
      py::arg("path"));

  // handcrafted descriptors
  m.def(
      "lbp_descriptor",
      [](const ByteArray& img, int grid_rows, int grid_cols, std::optional<int> cell_pixels, bool normalize) {
        const ps::LbpOptions o{layout(grid_rows, grid_cols, cell_pixels), normalize};
        return vector_array(ps::lbp_descriptor(to_mat(img), o).data);
      },
      py::arg("image"), py::arg("grid_rows") = 8, py::arg("grid_cols") = 8, py::arg("cell_pixels") = py::none(),
      py::arg("normalize") = true);
  m.def(
      "hog_descriptor",
      [](const ByteArray& img, int grid_rows, int grid_cols, std::optional<int> cell_pixels, int bins, bool normalize) {
        const ps::HogOptions o{layout(grid_rows, grid_cols, cell_pixels), bins, normalize};
        return vector_array(ps::hog_descriptor(to_mat(img), o).data);
      },
      py::arg("image"), py::arg("grid_rows") = 8, py::arg("grid_cols") = 8, py::arg("cell_pixels") = py::none(),
      py::arg("bins") = 9, py::arg("normalize") = true);
  m.def(
      "chi2_distance",
      [](const FloatArray& a, const FloatArray& b) {
        auto desc = [](const FloatArray& x) {
          return ps::BlockHistogramDescriptor{ps::HistogramKind::Lbp, 1, 1, static_cast<int>(x.size()),
                                              std::vector<float>(x.data(), x.data() + x.size())};
        };
        return ps::chi2_distance(desc(a), desc(b));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "sift_score",
      [](const ByteArray& a, const ByteArray& b) {
        return ps::sift_match_score(ps::detect_sift(to_mat(a)), ps::detect_sift(to_mat(b)));
      },
      py::arg("a"), py::arg("b"), "Keypoint match score of two grayscale images.");

  // fusion
  m.def(
      "train_fusion",
      [](const std::vector<std::vector<double>>& scores, const std::vector<bool>& genuine,
         std::vector<std::string> names, double l2) {
        ps::FusionOptions o;
        o.l2 = l2;
        if (names.empty()) {
          for (std::size_t i = 0; i < scores.size(); ++i) names.push_back("s" + std::to_string(i));
        }
        const auto model = ps::train_fusion(scores, genuine, std::move(names), o);
        py::dict d;
        d["comparators"] = model.comparators;
        d["weights"] = model.weights;
        d["iterations"] = model.iterations;
        d["final_loss"] = model.final_loss;
        d["converged"] = model.converged;
        return d;
      },
      py::arg("scores"), py::arg("genuine"), py::arg("names") = std::vector<std::string>{}, py::arg("l2") = 1e-6,
      "Trains affine weights (bias first) from one score row per comparator.");
  m.def(
      "apply_fusion",
      [](const std::vector<double>& weights, const std::vector<std::vector<double>>& scores) {
        ps::FusionModel model;
        model.weights = weights;
        for (std::size_t i = 0; i < scores.size(); ++i) model.comparators.push_back("s" + std::to_string(i));
        const std::size_t n = scores.empty() ? 0 : scores[0].size();
        std::vector<double> out(n), row(scores.size());
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t i = 0; i < scores.size(); ++i) row[i] = scores.at(i).at(j);
          out[j] = ps::apply_fusion(model, std::span<const double>(row));
        }
        return out;
      },
      py::arg("weights"), py::arg("scores"));

  // protocol and data
  m.def(
      "build_trials",
      [](const std::filesystem::path& manifest) {
        const auto plan = ps::build_trials(ps::read_manifest(manifest));
        std::vector<std::tuple<std::string, std::string, std::string>> out;
        for (const auto& t : plan.trials) out.emplace_back(t.enrol, t.probe, std::string(ps::to_string(t.label)));
        return out;
      },
      py::arg("manifest"), "(enrol, probe, label) for every trial of a manifest.");
  m.def(
      "write_synthetic_dataset",
      [](const std::filesystem::path& out, int subjects, int images_per_eye, int width, int height,
         std::uint64_t seed) {
        return ps::write_synthetic_dataset(out, {subjects, images_per_eye, width, height, seed}).size();
      },
      py::arg("out_dir"), py::arg("subjects") = 10, py::arg("images_per_eye") = 4, py::arg("width") = 400,
      py::arg("height") = 320, py::arg("seed") = 42, "Returns the number of images written.");
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = ps::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a periscope command in process; returns (exit_code, stdout, stderr).");

  // graphs
  py::class_<ps::onnx::Graph>(m, "OnnxGraph")
      .def_static("load", &ps::onnx::Graph::load, py::arg("path"))
      .def_static(
          "from_bytes", [](const py::bytes& b) { return ps::onnx::Graph::from_bytes(std::string(b)); }, py::arg("data"))
      .def_property_readonly("input_names", &ps::onnx::Graph::input_names)
      .def_property_readonly("output_names", &ps::onnx::Graph::output_names)
      .def_property_readonly("opset", &ps::onnx::Graph::opset)
      .def(
          "run",
          [](const ps::onnx::Graph& g, const std::map<std::string, py::array>& feeds,
             const std::vector<std::string>& outputs) {
            std::map<std::string, ps::onnx::Tensor> in;
            for (const auto& [k, v] : feeds) in.emplace(k, to_onnx(v));
            std::map<std::string, ps::onnx::Tensor> res;
            {
              py::gil_scoped_release release;
              res = g.run(in, outputs);
            }
            py::dict d;
            for (const auto& [k, v] : res) d[py::str(k)] = from_onnx(v);
            return d;
          },
          py::arg("feeds"), py::arg("outputs"));

  py::class_<ps::ModelGraph>(m, "ModelGraph")
      .def_static(
          "load", [](const std::filesystem::path& p) { return ps::ModelGraph::load(p); }, py::arg("spec_path"))
      .def_property_readonly("name", &ps::ModelGraph::name)
      .def_property_readonly("taps", [](const ps::ModelGraph& g) { return g.spec().taps; })
      .def_property_readonly("input_side", [](const ps::ModelGraph& g) { return g.spec().input.side; })
      .def(
          "extract",
          [](const ps::ModelGraph& g, const ByteArray& image, const std::vector<std::string>& taps) {
            const cv::Mat img = to_mat(image);
            std::map<std::string, ps::ActivationTensor> res;
            {
              py::gil_scoped_release release;
              res = g.extract(img, taps);
            }
            py::dict d;
            for (const auto& [k, v] : res) d[py::str(k)] = from_tensor(v);
            return d;
          },
          py::arg("image"), py::arg("taps") = std::vector<std::string>{});
}
