#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "periscope/errors.hpp"
#include "periscope/synthetic.hpp"

using namespace periscope;

namespace {

SyntheticOptions small(std::uint64_t seed = 42) {
  SyntheticOptions o;
  o.subjects = 2;
  o.images_per_eye = 3;
  o.width = 160;
  o.height = 128;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("dataset layout and annotations") {
  const auto images = render_synthetic_dataset(small());
  REQUIRE(images.size() == 12);
  std::set<std::string> ids;
  for (const auto& im : images) {
    CHECK(im.image.type() == CV_8UC3);
    CHECK(im.image.cols == 160);
    CHECK(im.image.rows == 128);
    const auto& r = im.record;
    CHECK(ids.insert(r.id).second);
    CHECK(r.path == "images/" + r.id + ".png");
    CHECK_NOTHROW(r.validate());
    CHECK_NOTHROW(r.validate_bounds(160, 128));
    CHECK(r.pupil.r < r.sclera.r);
    CHECK(r.sclera.r == doctest::Approx(120.0 / r.distance_m).epsilon(0.031));
  }
  CHECK(images[0].record.id == "s01L1");
  CHECK(images[3].record.id == "s01R1");
  CHECK(images[0].record.session == 1);
  CHECK(images[2].record.session == 2);
  CHECK(images[3].record.eye == Eye::Right);
}

TEST_CASE("rendering is deterministic per seed") {
  const auto a = render_synthetic_dataset(small(7));
  const auto b = render_synthetic_dataset(small(7));
  const auto c = render_synthetic_dataset(small(8));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(cv::norm(a[i].image, b[i].image, cv::NORM_INF) == 0.0);
    CHECK(format_record(a[i].record) == format_record(b[i].record));
  }
  CHECK(cv::norm(a[0].image, c[0].image, cv::NORM_INF) > 0.0);
}

TEST_CASE("captures of one eye differ") {
  const auto images = render_synthetic_dataset(small());
  CHECK(cv::norm(images[0].image, images[1].image, cv::NORM_INF) > 0.0);
}

TEST_CASE("written dataset round trips through the manifest") {
  const auto dir = oracle::temp_dir("synthetic");
  const auto recs = write_synthetic_dataset(dir, small());
  const auto back = read_manifest(dir / "manifest.jsonl");
  REQUIRE(back.size() == recs.size());
  for (const auto& r : back) CHECK(std::filesystem::exists(dir / r.path));
  const auto img = read_image(dir / back[0].path, true);
  CHECK(img.cols == 160);
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid options") {
  auto o = small();
  o.subjects = 0;
  CHECK_THROWS_AS(render_synthetic_dataset(o), DataError);
  o = small();
  o.width = 10;
  CHECK_THROWS_AS(render_synthetic_dataset(o), DataError);
}
