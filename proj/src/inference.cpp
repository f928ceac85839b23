#include "periscope/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "periscope/errors.hpp"

namespace periscope {

namespace fs = std::filesystem;

ModelGraphSpec parse_model_spec(const std::string& json_text, const fs::path& base_dir) {
  ModelGraphSpec spec;
  try {
    const auto j = nlohmann::json::parse(json_text);
    spec.graph = base_dir / j.at("graph").get<std::string>();
    if (j.contains("catalog")) spec.catalog = base_dir / j.at("catalog").get<std::string>();
    spec.taps = j.at("taps").get<std::vector<std::string>>();
    const auto& input = j.at("input");
    spec.input.side = input.at("side").get<int>();
    spec.input.channels = input.value("channels", 3);
    if (input.contains("mean")) spec.input.mean = input.at("mean").get<std::vector<float>>();
    if (input.contains("std")) spec.input.std = input.at("std").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model spec JSON: ") + e.what());
  }
  const auto c = static_cast<std::size_t>(spec.input.channels);
  if (spec.input.side <= 0 || (c != 1 && c != 3)) throw FormatError("model spec input needs side > 0 and 1 or 3 channels");
  if (spec.input.mean.size() != c || spec.input.std.size() != c) {
    throw FormatError("model spec mean/std need one value per input channel");
  }
  for (float s : spec.input.std) {
    if (!(s > 0.0f)) throw FormatError("model spec std values must be positive");
  }
  if (spec.taps.empty()) throw FormatError("model spec lists no taps");
  return spec;
}

ModelGraphSpec load_model_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model spec: " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    ModelGraphSpec spec = parse_model_spec(text, path.parent_path());
    if (spec.catalog.empty()) spec.catalog = path.parent_path() / (path.stem().string() + ".catalog.json");
    return spec;
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ModelGraph::ModelGraph(ModelGraphSpec spec, NetworkCatalogEntry catalog, onnx::Graph graph)
    : spec_(std::move(spec)), catalog_(std::move(catalog)), graph_(std::move(graph)) {
  const auto inputs = graph_.input_names();
  if (inputs.size() != 1) {
    throw ExtractionError(fmt::format("graph for {} must have exactly one image input, has {}", catalog_.name, inputs.size()));
  }
  input_name_ = inputs[0];
  for (const auto& tap : spec_.taps) {
    if (!graph_.has_value(tap)) throw ExtractionError(fmt::format("tap '{}' is not a value of the {} graph", tap, catalog_.name));
    catalog_.index_of(tap);  // throws LookupError
  }
}

ModelGraph ModelGraph::load(const ModelGraphSpec& spec) {
  NetworkCatalogEntry catalog = load_catalog(spec.catalog);
  try {
    return ModelGraph(spec, std::move(catalog), onnx::Graph::load(spec.graph));
  } catch (const LookupError& e) {
    throw CatalogError(e.what());
  }
}

ModelGraph ModelGraph::load(const fs::path& spec_path) { return load(load_model_spec(spec_path)); }

onnx::Tensor ModelGraph::input_tensor(const cv::Mat& image) const {
  const int side = spec_.input.side;
  if (image.empty() || image.depth() != CV_8U || image.rows != side || image.cols != side) {
    throw SizeError(fmt::format("{} expects an 8-bit {}x{} image, got {}x{}", catalog_.name, side, side, image.cols, image.rows));
  }
  cv::Mat rgb;
  const int want = spec_.input.channels;
  if (image.channels() == 1) {
    rgb = want == 3 ? cv::Mat() : image;
    if (want == 3) cv::cvtColor(image, rgb, cv::COLOR_GRAY2RGB);
  } else if (image.channels() == 3) {
    cv::cvtColor(image, rgb, want == 3 ? cv::COLOR_BGR2RGB : cv::COLOR_BGR2GRAY);
  } else {
    throw SizeError("images must have 1 or 3 channels");
  }
  const auto plane = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
  std::vector<float> data(plane * static_cast<std::size_t>(want));
  for (int y = 0; y < side; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < want; ++c) {
        const float v = static_cast<float>(row[x * want + c]) / 255.0f;
        const auto k = static_cast<std::size_t>(c);
        data[k * plane + static_cast<std::size_t>(y) * static_cast<std::size_t>(side) + static_cast<std::size_t>(x)] =
            (v - spec_.input.mean[k]) / spec_.input.std[k];
      }
    }
  }
  return onnx::Tensor::floats({1, want, side, side}, std::move(data));
}

ActivationTensor to_activation(const onnx::Tensor& t, const std::string& tap) {
  if (t.dtype != onnx::Tensor::DType::Float) throw ExtractionError("tap '" + tap + "' is not a float tensor");
  const auto& s = t.shape;
  auto u32 = [](std::int64_t v) { return static_cast<std::uint32_t>(v); };
  try {
    if (s.size() == 4 && s[0] == 1 && s[2] == s[3]) {
      const auto c = static_cast<std::size_t>(s[1]);
      const auto area = static_cast<std::size_t>(s[2] * s[3]);
      std::vector<float> data(t.f.size());
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < area; ++p) data[p * c + ch] = t.f[ch * area + p];
      }
      return ActivationTensor::cnn(u32(s[2]), u32(s[1]), std::move(data));
    }
    if (s.size() == 2 && s[0] == 1) return ActivationTensor::cnn(1, u32(s[1]), t.f);
    if (s.size() == 3 && s[0] == 1) return ActivationTensor::vit(u32(s[1]), u32(s[2]), t.f);
  } catch (const DataError& e) {
    throw ExtractionError(fmt::format("tap '{}': {}", tap, e.what()));
  }
  throw ExtractionError(fmt::format("tap '{}' has unsupported output shape [{}]", tap, fmt::join(s, ",")));
}

std::map<std::string, ActivationTensor> ModelGraph::extract(const cv::Mat& image,
                                                            const std::vector<std::string>& taps) const {
  const std::vector<std::string>& wanted = taps.empty() ? spec_.taps : taps;
  for (const auto& tap : wanted) {
    if (std::find(spec_.taps.begin(), spec_.taps.end(), tap) == spec_.taps.end()) {
      throw ExtractionError(fmt::format("'{}' is not a tap of {}", tap, catalog_.name));
    }
  }
  const auto outputs = graph_.run({{input_name_, input_tensor(image)}}, wanted);
  std::map<std::string, ActivationTensor> result;
  for (const auto& tap : wanted) {
    ActivationTensor a = to_activation(outputs.at(tap), tap);
    const auto& expected = catalog_.layers[catalog_.index_of(tap)].shape;
    if (!expected.empty() && expected != a.dims()) {
      throw ExtractionError(fmt::format("tap '{}' of {} has shape ({}), catalog says ({})", tap, catalog_.name,
                                        fmt::join(a.dims(), ", "), fmt::join(expected, ", ")));
    }
    result.emplace(tap, std::move(a));
  }
  return result;
}

bool ParityReport::pass() const {
  if (taps.empty()) return false;
  return std::all_of(taps.begin(), taps.end(), [](const TapParity& t) { return t.pass; });
}

ParityReport verify_parity(const std::map<std::string, ActivationTensor>& adapter,
                           const std::map<std::string, ActivationTensor>& dumped, double threshold) {
  ParityReport report;
  for (const auto& [tap, a] : adapter) {
    TapParity r{tap, std::nullopt, false, {}};
    const auto it = dumped.find(tap);
    if (it == dumped.end()) {
      r.message = "no dumped tensor";
    } else if (a.dims() != it->second.dims()) {
      r.message = fmt::format("shape ({}) vs ({})", fmt::join(a.dims(), ", "), fmt::join(it->second.dims(), ", "));
    } else {
      const auto x = a.data();
      const auto y = it->second.data();
      double dot = 0.0, nx = 0.0, ny = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        dot += static_cast<double>(x[k]) * y[k];
        nx += static_cast<double>(x[k]) * x[k];
        ny += static_cast<double>(y[k]) * y[k];
      }
      if (nx == 0.0 && ny == 0.0) {
        r.cosine = 1.0;
      } else if (nx == 0.0 || ny == 0.0) {
        r.cosine = 0.0;
      } else {
        r.cosine = std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
      }
      r.pass = *r.cosine >= threshold;
      if (!r.pass) r.message = fmt::format("cosine {:.6f} below {}", *r.cosine, threshold);
    }
    report.taps.push_back(std::move(r));
  }
  return report;
}

std::string dump_parity_report(const ParityReport& report) {
  nlohmann::ordered_json j;
  j["pass"] = report.pass();
  j["taps"] = nlohmann::ordered_json::array();
  for (const auto& t : report.taps) {
    nlohmann::ordered_json e;
    e["tap"] = t.tap;
    e["cosine"] = t.cosine ? nlohmann::ordered_json(*t.cosine) : nlohmann::ordered_json(nullptr);
    e["pass"] = t.pass;
    if (!t.message.empty()) e["message"] = t.message;
    j["taps"].push_back(std::move(e));
  }
  return j.dump(2);
}

}  // namespace periscope
