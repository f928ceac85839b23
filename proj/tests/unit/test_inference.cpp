#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "onnx_fixtures.hpp"
#include "oracles.hpp"
#include "periscope/errors.hpp"
#include "periscope/inference.hpp"

using namespace periscope;
namespace rt = periscope::onnx;

namespace {

struct Dirs {
  std::filesystem::path root = oracle::temp_dir("inference");
  std::filesystem::path r18 = fixtures::write_r18_stem(root);
  std::filesystem::path vit = fixtures::write_vit_embed(root);
  ~Dirs() { std::filesystem::remove_all(root); }
};

Dirs& dirs() {
  static Dirs d;
  return d;
}

ActivationTensor vit_tensor(std::uint64_t seed, std::uint32_t p, std::uint32_t e) {
  return ActivationTensor::vit(p, e, fixtures::normal(seed, static_cast<std::size_t>(p) * e, 1.0f));
}

}  // namespace

TEST_CASE("model spec parsing resolves paths and validates the input block") {
  const auto spec = parse_model_spec(R"({"graph":"g.onnx","taps":["a"],"input":{"side":32}})", "/models");
  CHECK(spec.graph == std::filesystem::path("/models/g.onnx"));
  CHECK(spec.catalog.empty());
  CHECK(spec.input.channels == 3);
  CHECK(spec.input.mean.size() == 3);
  CHECK_THROWS_AS(parse_model_spec(R"({"graph":"g","taps":[],"input":{"side":32}})", "."), FormatError);
  CHECK_THROWS_AS(parse_model_spec(R"({"graph":"g","taps":["a"],"input":{"side":0}})", "."), FormatError);
  CHECK_THROWS_AS(parse_model_spec(R"({"graph":"g","taps":["a"],"input":{"side":8,"mean":[0]}})", "."), FormatError);
  CHECK_THROWS_AS(parse_model_spec(R"({"graph":"g","taps":["a"],"input":{"side":8,"std":[1,0,1]}})", "."),
                  FormatError);
  CHECK_THROWS_AS(parse_model_spec("[", "."), FormatError);

  const auto loaded = load_model_spec(dirs().r18);
  CHECK(loaded.catalog == dirs().root / "r18-stem.catalog.json");
  CHECK(loaded.graph == dirs().root / "r18-stem.onnx");
}

TEST_CASE("input tensor layout and normalization") {
  const auto m = ModelGraph::load(dirs().vit);
  cv::Mat img(384, 384, CV_8UC3, cv::Scalar(0, 0, 0));
  img.at<cv::Vec3b>(2, 5) = cv::Vec3b(255, 0, 51);  // BGR
  const auto t = m.input_tensor(img);
  CHECK(t.shape == std::vector<std::int64_t>{1, 3, 384, 384});
  const std::size_t plane = 384 * 384, at = 2 * 384 + 5;
  CHECK(t.f[at] == doctest::Approx((0.2 - 0.5) / 0.5));          // R
  CHECK(t.f[plane + at] == doctest::Approx(-1.0));               // G
  CHECK(t.f[2 * plane + at] == doctest::Approx(1.0));            // B
  CHECK(t.f[0] == doctest::Approx(-1.0));

  cv::Mat gray(384, 384, CV_8UC1, cv::Scalar(255));
  const auto g = m.input_tensor(gray);
  CHECK(g.f[0] == doctest::Approx(1.0));
  CHECK(g.f[2 * plane] == doctest::Approx(1.0));

  CHECK_THROWS_AS(m.input_tensor(cv::Mat(100, 100, CV_8UC1)), SizeError);
  CHECK_THROWS_AS(m.input_tensor(cv::Mat(384, 384, CV_32FC1)), SizeError);
}

TEST_CASE("extraction shapes follow the catalog") {
  const auto r18 = ModelGraph::load(dirs().r18);
  CHECK(r18.name() == "r18-stem");
  cv::Mat zero(224, 224, CV_8UC3, cv::Scalar(0, 0, 0));
  const auto acts = r18.extract(zero);
  CHECK(acts.at("conv1").dims() == std::vector<std::uint32_t>{112, 112, 64});
  CHECK(acts.at("maxpool").dims() == std::vector<std::uint32_t>{56, 56, 64});
  CHECK(acts.at("fc").dims() == std::vector<std::uint32_t>{1, 1, 10});
  for (const auto& [name, t] : acts)
    for (float v : t.data()) REQUIRE(std::isfinite(v));

  const auto vit = ModelGraph::load(dirs().vit);
  std::mt19937_64 rng(1);
  cv::Mat img(384, 384, CV_8UC3);
  cv::randu(img, 0, 255);
  const auto va = vit.extract(img, {"embed"});
  CHECK(va.size() == 1);
  CHECK(va.at("embed").dims() == std::vector<std::uint32_t>{577, 384});
  CHECK(va.at("embed").kind() == TensorKind::VitTokens);
  CHECK_THROWS_AS(vit.extract(img, {"ln"}), ExtractionError);
}

TEST_CASE("CNN outputs are converted to patch-major volumes") {
  // channel-major [1, 2, 2, 2]: channel 0 = 0..3, channel 1 = 10..13
  const auto t = rt::Tensor::floats({1, 2, 2, 2}, {0, 1, 2, 3, 10, 11, 12, 13});
  const auto a = to_activation(t, "x");
  CHECK(a.dims() == std::vector<std::uint32_t>{2, 2, 2});
  CHECK(a.at(1, 0) == 1.0f);
  CHECK(a.at(1, 1) == 11.0f);
  CHECK(to_activation(rt::Tensor::floats({1, 4}, {1, 2, 3, 4}), "x").dims() == std::vector<std::uint32_t>{1, 1, 4});
  CHECK(to_activation(rt::Tensor::floats({1, 3, 2}, {1, 2, 3, 4, 5, 6}), "x").kind() == TensorKind::VitTokens);
  CHECK_THROWS_AS(to_activation(rt::Tensor::floats({2, 2}, {1, 2, 3, 4}), "x"), ExtractionError);
  CHECK_THROWS_AS(to_activation(rt::Tensor::ints({1, 2}, {1, 2}), "x"), ExtractionError);
  CHECK_THROWS_AS(to_activation(rt::Tensor::floats({1, 2}, {1, NAN}), "x"), ExtractionError);
}

TEST_CASE("loading fails on taps or catalogs that do not fit the graph") {
  const auto dir = dirs().root / "broken";
  std::filesystem::create_directories(dir);
  std::filesystem::copy_file(dirs().root / "r18-stem.onnx", dir / "r18-stem.onnx");
  std::filesystem::copy_file(dirs().root / "r18-stem.catalog.json", dir / "r18-stem.catalog.json");
  {
    std::ofstream(dir / "r18-stem.json") << R"({"graph":"r18-stem.onnx","taps":["layer9"],"input":{"side":224}})";
  }
  CHECK_THROWS_AS(ModelGraph::load(dir / "r18-stem.json"), ExtractionError);
  {
    std::ofstream(dir / "r18-stem.json") << R"({"graph":"r18-stem.onnx","taps":["relu"],"input":{"side":224}})";
  }
  CHECK_THROWS_AS(ModelGraph::load(dir / "r18-stem.json"), CatalogError);

  // catalog shape disagreeing with the graph is caught at extraction time
  auto cat = nlohmann::json::parse(std::ifstream(dir / "r18-stem.catalog.json"));
  cat["layers"][0]["shape"] = {56, 56, 64};
  std::ofstream(dir / "r18-stem.catalog.json") << cat.dump();
  {
    std::ofstream(dir / "r18-stem.json") << R"({"graph":"r18-stem.onnx","taps":["conv1"],"input":{"side":224}})";
  }
  const auto m = ModelGraph::load(dir / "r18-stem.json");
  CHECK_THROWS_AS(m.extract(cv::Mat(224, 224, CV_8UC1, cv::Scalar(0))), ExtractionError);
}

TEST_CASE("parity accepts matching dumps and rejects a negative control") {
  const auto a = vit_tensor(1, 10, 8);
  auto data = std::vector<float>(a.data().begin(), a.data().end());
  for (auto& v : data) v *= 1.0001f;
  const auto scaled = ActivationTensor::vit(10, 8, data);
  const auto other = vit_tensor(2, 10, 8);

  const auto ok = verify_parity({{"t", a}}, {{"t", scaled}});
  CHECK(ok.pass());
  CHECK(*ok.taps[0].cosine == doctest::Approx(1.0));

  const auto bad = verify_parity({{"t", a}}, {{"t", other}});
  CHECK_FALSE(bad.pass());
  CHECK(*bad.taps[0].cosine < 0.5);

  const auto shape = verify_parity({{"t", a}}, {{"t", vit_tensor(3, 8, 10)}});
  CHECK_FALSE(shape.pass());
  CHECK_FALSE(shape.taps[0].cosine.has_value());

  const auto missing = verify_parity({{"t", a}}, {});
  CHECK_FALSE(missing.pass());
  CHECK(missing.taps[0].message == "no dumped tensor");
  CHECK_FALSE(verify_parity({}, {}).pass());

  const auto j = nlohmann::json::parse(dump_parity_report(bad));
  CHECK(j["pass"] == false);
  CHECK(j["taps"][0]["tap"] == "t");
}

TEST_CASE("extraction parity between the graph run and its own dumps") {
  const auto m = ModelGraph::load(dirs().r18);
  cv::Mat img(224, 224, CV_8UC1);
  cv::randu(img, 0, 255);
  const auto a = m.extract(img);
  const auto dir = dirs().root / "dumps";
  std::map<std::string, ActivationTensor> dumped;
  for (const auto& [tap, t] : a) {
    write_activation_dump(dir / (tap + ".atd"), t);
    dumped.emplace(tap, read_activation_dump(dir / (tap + ".atd")));
  }
  CHECK(verify_parity(a, dumped).pass());
}
