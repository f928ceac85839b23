#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "periscope/onnx_runtime.hpp"
#include "periscope/tensors.hpp"

namespace periscope {

struct ModelInputSpec {
  int side = 224;
  int channels = 3;
  std::vector<float> mean{0.485f, 0.456f, 0.406f};
  std::vector<float> std{0.229f, 0.224f, 0.225f};
};

// JSON sidecar describing one exported graph:
//   {"graph": "r18.onnx", "catalog": "r18.catalog.json", "taps": [...],
//    "input": {"side": 224, "channels": 3, "mean": [...], "std": [...]}}
// Relative paths resolve against the model spec file. Without "catalog" the file
// <stem>.catalog.json next to the model spec is used.
struct ModelGraphSpec {
  std::filesystem::path graph;
  std::filesystem::path catalog;
  std::vector<std::string> taps;
  ModelInputSpec input;
};

ModelGraphSpec parse_model_spec(const std::string& json_text, const std::filesystem::path& base_dir);
ModelGraphSpec load_model_spec(const std::filesystem::path& path);

class ModelGraph {
 public:
  /// Loads the graph and catalog and checks every tap exists in both.
  /// Throws ExtractionError or CatalogError.
  static ModelGraph load(const ModelGraphSpec& spec);
  static ModelGraph load(const std::filesystem::path& spec_path);

  ModelGraph(ModelGraphSpec spec, NetworkCatalogEntry catalog, onnx::Graph graph);

  const ModelGraphSpec& spec() const { return spec_; }
  const NetworkCatalogEntry& catalog() const { return catalog_; }
  const std::string& name() const { return catalog_.name; }
  const onnx::Graph& graph() const { return graph_; }

  /// Normalized NCHW input for an 8-bit grayscale or BGR image whose side
  /// matches the input spec. Throws SizeError otherwise.
  onnx::Tensor input_tensor(const cv::Mat& image) const;

  /// One tensor per tap: CNN outputs [1,C,S,S] become S x S x C patch-major
  /// volumes, [1,C] and [1,C,1,1] become 1 x 1 x C, ViT outputs [1,P,E]
  /// keep every token. Throws ExtractionError on a shape that disagrees with
  /// the catalog. An empty tap list means every spec tap.
  std::map<std::string, ActivationTensor> extract(const cv::Mat& image,
                                                  const std::vector<std::string>& taps = {}) const;

 private:
  ModelGraphSpec spec_;
  NetworkCatalogEntry catalog_;
  onnx::Graph graph_;
  std::string input_name_;
};

/// Converts one graph output to an activation tensor.
ActivationTensor to_activation(const onnx::Tensor& t, const std::string& tap);

// ---------------------------------------------------------------------------
// Cross-implementation parity

inline constexpr double kParityThreshold = 0.999;

struct TapParity {
  std::string tap;
  std::optional<double> cosine;  // unset when the tensors could not be compared
  bool pass = false;
  std::string message;
};

struct ParityReport {
  std::vector<TapParity> taps;
  bool pass() const;
};

/// Cosine similarity of the flattened tensors for every tap of `adapter`.
ParityReport verify_parity(const std::map<std::string, ActivationTensor>& adapter,
                           const std::map<std::string, ActivationTensor>& dumped,
                           double threshold = kParityThreshold);

std::string dump_parity_report(const ParityReport& report);

}  // namespace periscope
