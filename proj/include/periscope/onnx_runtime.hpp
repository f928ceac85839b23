#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace periscope::onnx {

// Dense tensor used by the interpreter. Integer and boolean ONNX types are
// widened to int64, double to float.
struct Tensor {
  enum class DType { Float, Int64 };

  DType dtype = DType::Float;
  std::vector<std::int64_t> shape;
  std::vector<float> f;
  std::vector<std::int64_t> i;

  static Tensor floats(std::vector<std::int64_t> shape, std::vector<float> data);
  static Tensor ints(std::vector<std::int64_t> shape, std::vector<std::int64_t> data);

  std::size_t size() const;
  std::size_t rank() const { return shape.size(); }
};

// Minimal CPU interpreter for inference graphs. Covers the operator set of
// exported ResNet and ViT classifiers. `run` is const and keeps no state, so
// one loaded graph may be shared between threads.
class Graph {
 public:
  Graph();
  Graph(Graph&&) noexcept;
  Graph& operator=(Graph&&) noexcept;
  ~Graph();

  /// Parses a model file; external tensor data is resolved next to it.
  static Graph load(const std::filesystem::path& path);
  static Graph from_bytes(const std::string& bytes, const std::filesystem::path& base_dir = {});

  /// Graph inputs that are not initializers.
  std::vector<std::string> input_names() const;
  std::vector<std::string> output_names() const;
  /// True for graph inputs, initializers and node outputs.
  bool has_value(const std::string& name) const;
  std::int64_t opset() const;

  /// Evaluates only the nodes needed for `outputs`. Throws ExtractionError
  /// naming the failing node.
  std::map<std::string, Tensor> run(const std::map<std::string, Tensor>& feeds,
                                    const std::vector<std::string>& outputs) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace periscope::onnx
