#include <doctest.h>

#include <cmath>
#include <random>

#include "onnx_fixtures.hpp"
#include "oracles.hpp"
#include "periscope/errors.hpp"
#include "periscope/onnx_runtime.hpp"

using namespace periscope;
namespace rt = periscope::onnx;
using fixtures::Attr;
using fixtures::ModelBuilder;
using Ints = std::vector<std::int64_t>;

namespace {

rt::Tensor run1(const ModelBuilder& b, const std::map<std::string, rt::Tensor>& feeds, const std::string& out) {
  return rt::Graph::from_bytes(b.bytes()).run(feeds, {out}).at(out);
}

// Direct 7-loop convolution with zero padding.
std::vector<float> conv_oracle(const std::vector<float>& x, int c, int h, int w, const std::vector<float>& k, int m,
                               int kh, int kw, const std::vector<float>& bias, int stride, int pad, int groups,
                               int& oh, int& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  const int cg = c / groups, mg = m / groups;
  std::vector<float> y(static_cast<std::size_t>(m * oh * ow));
  for (int o = 0; o < m; ++o) {
    const int g = o / mg;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
        for (int ci = 0; ci < cg; ++ci)
          for (int a = 0; a < kh; ++a)
            for (int b = 0; b < kw; ++b) {
              const int yy = i * stride - pad + a, xx = j * stride - pad + b;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              acc += static_cast<double>(x[static_cast<std::size_t>(((g * cg + ci) * h + yy) * w + xx)]) *
                     k[static_cast<std::size_t>(((o * cg + ci) * kh + a) * kw + b)];
            }
        y[static_cast<std::size_t>((o * oh + i) * ow + j)] = static_cast<float>(acc);
      }
  }
  return y;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
  CHECK(worst <= tol);
}

}  // namespace

TEST_CASE("Conv matches the direct oracle across strides, padding and groups") {
  struct Case {
    int c, h, w, m, k, stride, pad, groups;
  };
  for (const Case cs : {Case{3, 11, 9, 4, 3, 1, 1, 1}, Case{3, 15, 15, 5, 7, 2, 3, 1}, Case{4, 8, 8, 6, 3, 2, 0, 2},
                        Case{6, 7, 7, 6, 3, 1, 1, 6}, Case{5, 6, 6, 3, 1, 1, 0, 1}, Case{3, 32, 32, 8, 16, 16, 0, 1}}) {
    const auto x = fixtures::normal(1, static_cast<std::size_t>(cs.c * cs.h * cs.w), 1.0f);
    const auto k = fixtures::normal(2, static_cast<std::size_t>(cs.m * (cs.c / cs.groups) * cs.k * cs.k), 0.3f);
    const auto bias = fixtures::normal(3, static_cast<std::size_t>(cs.m), 0.1f);
    ModelBuilder b;
    b.input("x", {1, cs.c, cs.h, cs.w});
    b.init("k", {cs.m, cs.c / cs.groups, cs.k, cs.k}, k);
    b.init("b", {cs.m}, bias);
    b.node("Conv", {"x", "k", "b"}, {"y"},
           {{"strides", Ints{cs.stride, cs.stride}},
            {"pads", Ints{cs.pad, cs.pad, cs.pad, cs.pad}},
            {"group", std::int64_t{cs.groups}}});
    b.output("y");
    const auto y = run1(b, {{"x", rt::Tensor::floats({1, cs.c, cs.h, cs.w}, x)}}, "y");
    int oh = 0, ow = 0;
    const auto ref = conv_oracle(x, cs.c, cs.h, cs.w, k, cs.m, cs.k, cs.k, bias, cs.stride, cs.pad, cs.groups, oh, ow);
    CHECK(y.shape == Ints{1, cs.m, oh, ow});
    check_close(y.f, ref, 1e-4);
  }
}

TEST_CASE("LayerNormalization and Softmax over the last axis") {
  const auto x = fixtures::normal(4, 5 * 7, 2.0f);
  const auto g = fixtures::normal(5, 7, 1.0f), be = fixtures::normal(6, 7, 1.0f);
  ModelBuilder b;
  b.input("x", {5, 7});
  b.init("g", {7}, g);
  b.init("b", {7}, be);
  b.node("LayerNormalization", {"x", "g", "b"}, {"ln"}, {{"axis", std::int64_t{-1}}, {"epsilon", 1e-5f}});
  b.node("Softmax", {"x"}, {"sm"}, {{"axis", std::int64_t{-1}}});
  b.output("ln");
  const auto graph = rt::Graph::from_bytes(b.bytes());
  const auto out = graph.run({{"x", rt::Tensor::floats({5, 7}, x)}}, {"ln", "sm"});
  std::vector<float> ln(35), sm(35);
  for (int r = 0; r < 5; ++r) {
    double mean = 0, var = 0, mx = -1e30, z = 0;
    for (int c = 0; c < 7; ++c) mean += x[static_cast<std::size_t>(r * 7 + c)] / 7.0;
    for (int c = 0; c < 7; ++c) var += std::pow(x[static_cast<std::size_t>(r * 7 + c)] - mean, 2) / 7.0;
    for (int c = 0; c < 7; ++c) mx = std::max(mx, static_cast<double>(x[static_cast<std::size_t>(r * 7 + c)]));
    for (int c = 0; c < 7; ++c) z += std::exp(x[static_cast<std::size_t>(r * 7 + c)] - mx);
    for (int c = 0; c < 7; ++c) {
      const auto i = static_cast<std::size_t>(r * 7 + c);
      ln[i] = static_cast<float>((x[i] - mean) / std::sqrt(var + 1e-5) * g[static_cast<std::size_t>(c)] +
                                 be[static_cast<std::size_t>(c)]);
      sm[i] = static_cast<float>(std::exp(x[i] - mx) / z);
    }
  }
  check_close(out.at("ln").f, ln, 1e-5);
  check_close(out.at("sm").f, sm, 1e-6);
}

TEST_CASE("batched MatMul with broadcasting and Gemm") {
  const auto a = fixtures::normal(7, 2 * 3 * 4, 1.0f), w = fixtures::normal(8, 4 * 5, 1.0f);
  ModelBuilder b;
  b.input("a", {2, 3, 4});
  b.init("w", {4, 5}, w);
  b.node("MatMul", {"a", "w"}, {"y"});
  b.output("y");
  const auto y = run1(b, {{"a", rt::Tensor::floats({2, 3, 4}, a)}}, "y");
  CHECK(y.shape == Ints{2, 3, 5});
  std::vector<float> ref(30);
  for (int n = 0; n < 6; ++n)
    for (int j = 0; j < 5; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += static_cast<double>(a[static_cast<std::size_t>(n * 4 + k)]) * w[static_cast<std::size_t>(k * 5 + j)];
      ref[static_cast<std::size_t>(n * 5 + j)] = static_cast<float>(acc);
    }
  check_close(y.f, ref, 1e-5);

  ModelBuilder g;
  g.input("x", {2, 3});
  g.init("w", {4, 3}, fixtures::normal(9, 12, 1.0f));
  g.init("c", {4}, {1, 2, 3, 4});
  g.node("Gemm", {"x", "w", "c"}, {"y"}, {{"transB", std::int64_t{1}}, {"alpha", 2.0f}, {"beta", 0.5f}});
  g.output("y");
  const std::vector<float> x{1, 0, 0, 0, 1, 0};
  const auto gy = run1(g, {{"x", rt::Tensor::floats({2, 3}, x)}}, "y");
  const auto wv = fixtures::normal(9, 12, 1.0f);
  CHECK(gy.shape == Ints{2, 4});
  CHECK(gy.f[1] == doctest::Approx(2 * wv[3] + 1.0));
  CHECK(gy.f[4 + 2] == doctest::Approx(2 * wv[7] + 1.5));
}

TEST_CASE("pooling") {
  std::vector<float> x(16);
  for (int i = 0; i < 16; ++i) x[static_cast<std::size_t>(i)] = static_cast<float>(i);
  ModelBuilder b;
  b.input("x", {1, 1, 4, 4});
  b.node("MaxPool", {"x"}, {"mp"}, {{"kernel_shape", Ints{3, 3}}, {"strides", Ints{2, 2}}, {"pads", Ints{1, 1, 1, 1}}});
  b.node("AveragePool", {"x"}, {"ap"}, {{"kernel_shape", Ints{2, 2}}, {"strides", Ints{2, 2}}});
  b.node("GlobalAveragePool", {"x"}, {"gap"});
  b.output("mp");
  const auto out = rt::Graph::from_bytes(b.bytes()).run({{"x", rt::Tensor::floats({1, 1, 4, 4}, x)}},
                                                          {"mp", "ap", "gap"});
  CHECK(out.at("mp").f == std::vector<float>{5, 7, 13, 15});
  CHECK(out.at("ap").f == std::vector<float>{2.5f, 4.5f, 10.5f, 12.5f});
  CHECK(out.at("gap").f == std::vector<float>{7.5f});
  CHECK(out.at("gap").shape == Ints{1, 1, 1, 1});
}

TEST_CASE("shape manipulation ops") {
  std::vector<float> x(24);
  for (int i = 0; i < 24; ++i) x[static_cast<std::size_t>(i)] = static_cast<float>(i);
  ModelBuilder b;
  b.input("x", {2, 3, 4});
  b.init_ints("shape", {2}, {6, -1});
  b.init_ints("idx", {2}, {2, 0});
  b.init_ints("starts", {1}, {1});
  b.init_ints("ends", {1}, {3});
  b.init_ints("axes", {1}, {2});
  b.node("Reshape", {"x", "shape"}, {"r"});
  b.node("Transpose", {"x"}, {"t"}, {{"perm", Ints{2, 0, 1}}});
  b.node("Gather", {"x", "idx"}, {"g"}, {{"axis", std::int64_t{1}}});
  b.node("Slice", {"x", "starts", "ends", "axes"}, {"s"});
  b.node("Concat", {"x", "x"}, {"c"}, {{"axis", std::int64_t{0}}});
  b.node("Shape", {"x"}, {"sh"});
  b.node("Flatten", {"x"}, {"f"}, {{"axis", std::int64_t{2}}});
  b.output("r");
  const auto out = rt::Graph::from_bytes(b.bytes()).run({{"x", rt::Tensor::floats({2, 3, 4}, x)}},
                                                          {"r", "t", "g", "s", "c", "sh", "f"});
  CHECK(out.at("r").shape == Ints{6, 4});
  CHECK(out.at("t").shape == Ints{4, 2, 3});
  CHECK(out.at("t").f[1] == 4.0f);   // t[0,0,1] = x[0,1,0]
  CHECK(out.at("t").f[6] == 1.0f);   // t[1,0,0] = x[0,0,1]
  CHECK(out.at("g").shape == Ints{2, 2, 4});
  CHECK(out.at("g").f[0] == 8.0f);
  CHECK(out.at("g").f[4] == 0.0f);
  CHECK(out.at("s").shape == Ints{2, 3, 2});
  CHECK(out.at("s").f[0] == 1.0f);
  CHECK(out.at("s").f[1] == 2.0f);
  CHECK(out.at("c").shape == Ints{4, 3, 4});
  CHECK(out.at("sh").i == Ints{2, 3, 4});
  CHECK(out.at("f").shape == Ints{6, 4});
}

TEST_CASE("elementwise broadcasting and activations") {
  ModelBuilder b;
  b.input("x", {2, 3});
  b.init("row", {3}, {1, 2, 3});
  b.init("col", {2, 1}, {10, 20});
  b.node("Add", {"x", "row"}, {"a"});
  b.node("Mul", {"a", "col"}, {"m"});
  b.node("Relu", {"x"}, {"relu"});
  b.node("Sigmoid", {"x"}, {"sig"});
  b.node("Erf", {"x"}, {"erf"});
  b.output("m");
  const std::vector<float> x{-1, 0, 1, 2, -2, 0.5f};
  const auto out = rt::Graph::from_bytes(b.bytes()).run({{"x", rt::Tensor::floats({2, 3}, x)}},
                                                          {"m", "relu", "sig", "erf"});
  CHECK(out.at("m").f == std::vector<float>{0, 20, 40, 60, 0, 70});
  CHECK(out.at("relu").f == std::vector<float>{0, 0, 1, 2, 0, 0.5f});
  CHECK(out.at("sig").f[2] == doctest::Approx(1 / (1 + std::exp(-1.0))));
  CHECK(out.at("erf").f[3] == doctest::Approx(std::erf(2.0)));
}

TEST_CASE("graph introspection and error reporting") {
  ModelBuilder b(13);
  b.input("x", {1, 2});
  b.init("w", {2}, {1, 2});
  b.node("Add", {"x", "w"}, {"y"});
  b.node("Frobnicate", {"y"}, {"z"});
  b.output("z");
  const auto g = rt::Graph::from_bytes(b.bytes());
  CHECK(g.input_names() == std::vector<std::string>{"x"});
  CHECK(g.output_names() == std::vector<std::string>{"z"});
  CHECK(g.opset() == 13);
  CHECK(g.has_value("w"));
  CHECK(g.has_value("y"));
  CHECK_FALSE(g.has_value("q"));
  const std::map<std::string, rt::Tensor> feeds{{"x", rt::Tensor::floats({1, 2}, {1, 1})}};
  // only the nodes needed for y run, so the unknown op is never reached
  CHECK(g.run(feeds, {"y"}).at("y").f == std::vector<float>{2, 3});
  try {
    g.run(feeds, {"z"});
    FAIL("expected ExtractionError");
  } catch (const ExtractionError& e) {
    CHECK(std::string(e.what()).find("Frobnicate") != std::string::npos);
  }
  CHECK_THROWS_AS(g.run({}, {"y"}), ExtractionError);
  CHECK_THROWS_AS(g.run(feeds, {"nope"}), ExtractionError);
  CHECK_THROWS(rt::Graph::from_bytes("definitely not a model"));
  CHECK_THROWS(rt::Graph::load("/nonexistent/model.onnx"));
}

TEST_CASE("fixture graphs produce the documented shapes") {
  const auto dir = oracle::temp_dir("onnx");
  std::filesystem::create_directories(dir);
  {
    const auto g = rt::Graph::from_bytes(fixtures::r18_stem_model(1));
    const auto x = fixtures::normal(3, 3 * 224 * 224, 1.0f);
    const auto out = g.run({{"image", rt::Tensor::floats({1, 3, 224, 224}, x)}}, {"conv1", "maxpool", "fc"});
    CHECK(out.at("conv1").shape == Ints{1, 64, 112, 112});
    CHECK(out.at("maxpool").shape == Ints{1, 64, 56, 56});
    CHECK(out.at("fc").shape == Ints{1, 10});
  }
  {
    const auto g = rt::Graph::from_bytes(fixtures::vit_embed_model(2));
    const auto x = fixtures::normal(4, 3 * 384 * 384, 1.0f);
    const auto out = g.run({{"pixel_values", rt::Tensor::floats({1, 3, 384, 384}, x)}}, {"embed", "block0"});
    CHECK(out.at("embed").shape == Ints{1, 577, 384});
    CHECK(out.at("block0").shape == Ints{1, 577, 384});
    for (float v : out.at("block0").f) REQUIRE(std::isfinite(v));
  }
  std::filesystem::remove_all(dir);
}
