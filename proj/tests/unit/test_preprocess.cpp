#include <doctest.h>

#include <cmath>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "oracles.hpp"
#include "periscope/errors.hpp"
#include "periscope/preprocess.hpp"

using namespace periscope;

namespace {

ImageRecord record(const std::string& id, Eye eye, int distance, Circle sclera) {
  ImageRecord r;
  r.id = id;
  r.path = id + ".png";
  r.subject_id = "s1";
  r.eye = eye;
  r.distance_m = distance;
  r.sclera = sclera;
  r.pupil = {sclera.cx, sclera.cy, sclera.r * 0.4};
  return r;
}

}  // namespace

TEST_CASE("manifest record parse and format round trip") {
  const std::string line =
      R"({"path":"img/a7.png","subject_id":12,"eye":"R","session":2,"distance_m":6,)"
      R"("pupil_circle":{"cx":10.5,"cy":11,"r":3},"sclera_circle":{"cx":10,"cy":11,"r":8}})";
  const auto r = parse_record(line);
  CHECK(r.id == "a7");
  CHECK(r.subject_id == "12");
  CHECK(r.eye == Eye::Right);
  CHECK(r.session == 2);
  CHECK(r.sclera.r == 8);
  const auto again = parse_record(format_record(r));
  CHECK(again.id == r.id);
  CHECK(again.pupil.cx == 10.5);
  CHECK(format_record(again) == format_record(r));
}

TEST_CASE("manifest validation errors") {
  CHECK_THROWS_AS(parse_record("{"), FormatError);
  CHECK_THROWS_AS(parse_record(R"({"path":"a","subject_id":"1","eye":"X","distance_m":4,)"
                               R"("pupil_circle":{"cx":1,"cy":1,"r":1},"sclera_circle":{"cx":1,"cy":1,"r":2}})"),
                  FormatError);
  CHECK_THROWS_AS(parse_record(R"({"path":"a","subject_id":"1","eye":"L","distance_m":9,)"
                               R"("pupil_circle":{"cx":1,"cy":1,"r":1},"sclera_circle":{"cx":1,"cy":1,"r":2}})"),
                  AnnotationError);
  CHECK_THROWS_AS(parse_record(R"({"path":"a","subject_id":"1","eye":"L","distance_m":4,)"
                               R"("pupil_circle":{"cx":1,"cy":1,"r":0},"sclera_circle":{"cx":1,"cy":1,"r":2}})"),
                  AnnotationError);
  const auto r = record("a", Eye::Left, 4, {50, 50, 10});
  CHECK_NOTHROW(r.validate_bounds(100, 100));
  CHECK_THROWS_AS(r.validate_bounds(40, 100), AnnotationError);
}

TEST_CASE("manifest file round trip and line numbers in errors") {
  const auto dir = oracle::temp_dir("manifest");
  const std::vector<ImageRecord> recs{record("a", Eye::Left, 4, {5, 5, 2}), record("b", Eye::Right, 8, {6, 6, 3})};
  write_manifest(dir / "m.jsonl", recs);
  const auto back = read_manifest(dir / "m.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].eye == Eye::Right);
  {
    std::ofstream out(dir / "bad.jsonl");
    out << format_record(recs[0]) << "\n\nnot json\n";
  }
  try {
    read_manifest(dir / "bad.jsonl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("group mean sclera radius per distance") {
  const std::vector<ImageRecord> recs{record("a", Eye::Left, 4, {0, 0, 30}), record("b", Eye::Left, 4, {0, 0, 34}),
                                      record("c", Eye::Left, 6, {0, 0, 20})};
  const auto m = group_mean_sclera_radius(recs);
  CHECK(m.at(4) == doctest::Approx(32));
  CHECK(m.at(6) == doctest::Approx(20));
  CHECK(m.count(5) == 0);
}

TEST_CASE("scaling brings the sclera radius to the group mean") {
  cv::Mat img(100, 80, CV_8UC1, cv::Scalar(7));
  const auto r = record("a", Eye::Left, 4, {40, 50, 10});
  const auto s = scale_to_group_radius(img, r, 15);
  CHECK(s.image.cols == 120);
  CHECK(s.image.rows == 150);
  CHECK(s.record.sclera.r == doctest::Approx(15));
  CHECK(s.record.sclera.cx == doctest::Approx(60.25));
  CHECK_THROWS_AS(scale_to_group_radius(img, r, 0), AnnotationError);
}

TEST_CASE("crop window is 7.6 rs centred on the sclera, padded with zeros") {
  const auto w = crop_window({50, 40}, 10);
  CHECK(w.side == 76);
  CHECK(w.x0 == 12);
  CHECK(w.y0 == 2);

  cv::Mat img(20, 20, CV_8UC1, cv::Scalar(200));
  const cv::Mat crop = crop_periocular(img, {0, 0}, 5);  // side 38, mostly outside
  CHECK(crop.rows == 38);
  CHECK(crop.cols == 38);
  CHECK(crop.at<std::uint8_t>(0, 0) == 0);
  CHECK(crop.at<std::uint8_t>(37, 37) == 200);
}

TEST_CASE("right eyes are mirrored, left eyes untouched") {
  cv::Mat img(4, 6, CV_8UC1, cv::Scalar(0));
  img.at<std::uint8_t>(1, 0) = 255;
  CHECK(canonicalize_orientation(img, Eye::Left).at<std::uint8_t>(1, 0) == 255);
  CHECK(canonicalize_orientation(img, Eye::Right).at<std::uint8_t>(1, 5) == 255);
}

TEST_CASE("prepare_image produces a square crop with remapped annotations") {
  cv::Mat img(200, 300, CV_8UC1, cv::Scalar(0));
  img.at<std::uint8_t>(100, 140) = 255;  // ten pixels left of the centre
  auto r = record("a", Eye::Right, 4, {150, 100, 10});
  const auto out = prepare_image(img, r, 10, std::nullopt);
  CHECK(out.image.rows == 76);
  CHECK(out.image.cols == 76);
  // centre lands at 38 in crop coordinates, mirrored to 75 - 38
  CHECK(out.record.sclera.cx == doctest::Approx(37));
  CHECK(out.record.sclera.cy == doctest::Approx(38));
  CHECK(out.image.at<std::uint8_t>(38, 75 - 28) == 255);

  const auto small = prepare_image(img, r, 10, 38);
  CHECK(small.image.cols == 38);
  CHECK(small.record.sclera.r == doctest::Approx(5));

  r.sclera.cx = 400;
  CHECK_THROWS_AS(prepare_image(img, r, 10, std::nullopt), AnnotationError);
}

TEST_CASE("resize_to_network needs an input side") {
  NetworkCatalogEntry n;
  n.name = "x";
  cv::Mat img(10, 10, CV_8UC1, cv::Scalar(1));
  CHECK_THROWS_AS(resize_to_network(img, n), CatalogError);
  n.input_side = 32;
  CHECK(resize_to_network(img, n).cols == 32);
}

TEST_CASE("prepare_dataset writes images and rewritten records") {
  const auto dir = oracle::temp_dir("prep");
  cv::Mat img(120, 160, CV_8UC3, cv::Scalar(10, 20, 30));
  write_png(dir / "in" / "a.png", img);
  write_png(dir / "in" / "b.png", img);
  std::vector<ImageRecord> recs{record("a", Eye::Left, 4, {80, 60, 10}), record("b", Eye::Right, 4, {80, 60, 12})};
  PrepOptions o;
  o.output_dir = dir / "out";
  o.side = 64;
  const auto out = prepare_dataset(recs, dir / "in", o);
  REQUIRE(out.size() == 2);
  CHECK(out[0].path == "a.png");
  const cv::Mat a = cv::imread((dir / "out" / "a.png").string(), cv::IMREAD_UNCHANGED);
  CHECK(a.channels() == 3);  // colour is kept by default
  CHECK(a.cols == 64);
  o.keep_color = false;
  o.output_dir = dir / "gray";
  prepare_dataset(recs, dir / "in", o);
  CHECK(cv::imread((dir / "gray" / "a.png").string(), cv::IMREAD_UNCHANGED).channels() == 1);
  CHECK_THROWS_AS(read_image(dir / "nope.png", false), IoError);
  std::filesystem::remove_all(dir);
}
