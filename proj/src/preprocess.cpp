#include "periscope/preprocess.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "periscope/errors.hpp"
#include "periscope/parallel.hpp"

namespace periscope {

namespace {

using nlohmann::json;

Circle parse_circle(const json& j) {
  return {j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("r").get<double>()};
}

nlohmann::ordered_json circle_json(const Circle& c) {
  nlohmann::ordered_json j;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["r"] = c.r;
  return j;
}

bool circle_inside(const Circle& c, int w, int h) {
  return c.cx >= 0 && c.cy >= 0 && c.cx <= w - 1 && c.cy <= h - 1;
}

// Maps a coordinate through a resize from `from` to `to` pixels (pixel-centre convention).
double map_resize(double v, int from, int to) {
  return (v + 0.5) * static_cast<double>(to) / from - 0.5;
}

}  // namespace

void ImageRecord::validate() const {
  if (!(pupil.r > 0) || !(sclera.r > 0)) {
    throw AnnotationError(fmt::format("{}: circle radii must be positive", id));
  }
  if (distance_m < 4 || distance_m > 8) {
    throw AnnotationError(fmt::format("{}: distance {} m outside 4..8", id, distance_m));
  }
}

void ImageRecord::validate_bounds(int width, int height) const {
  if (!circle_inside(pupil, width, height) || !circle_inside(sclera, width, height)) {
    throw AnnotationError(fmt::format("{}: circle centre outside {}x{} image", id, width, height));
  }
}

ImageRecord parse_record(const std::string& line) {
  ImageRecord rec;
  try {
    const auto j = json::parse(line);
    rec.path = j.at("path").get<std::string>();
    rec.id = j.contains("id") ? j.at("id").get<std::string>()
                              : std::filesystem::path(rec.path).stem().string();
    rec.subject_id = j.at("subject_id").is_string() ? j.at("subject_id").get<std::string>()
                                                    : j.at("subject_id").dump();
    const auto eye = j.at("eye").get<std::string>();
    if (eye == "L") {
      rec.eye = Eye::Left;
    } else if (eye == "R") {
      rec.eye = Eye::Right;
    } else {
      throw FormatError("eye must be 'L' or 'R'");
    }
    rec.session = j.value("session", 1);
    rec.distance_m = j.at("distance_m").get<int>();
    rec.pupil = parse_circle(j.at("pupil_circle"));
    rec.sclera = parse_circle(j.at("sclera_circle"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest line: ") + e.what());
  }
  rec.validate();
  return rec;
}

std::string format_record(const ImageRecord& rec) {
  nlohmann::ordered_json j;
  j["id"] = rec.id;
  j["path"] = rec.path;
  j["subject_id"] = rec.subject_id;
  j["eye"] = rec.eye == Eye::Left ? "L" : "R";
  j["session"] = rec.session;
  j["distance_m"] = rec.distance_m;
  j["pupil_circle"] = circle_json(rec.pupil);
  j["sclera_circle"] = circle_json(rec.sclera);
  return j.dump();
}

std::vector<ImageRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::vector<ImageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const Error& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  for (const auto& r : records) out << format_record(r) << '\n';
}

ScaledImage scale_to_group_radius(const cv::Mat& image, const ImageRecord& rec, double group_mean_rs) {
  if (!(group_mean_rs > 0)) throw AnnotationError("group mean sclera radius must be positive");
  if (!(rec.sclera.r > 0)) throw AnnotationError(rec.id + ": degenerate sclera radius");
  const double f = group_mean_rs / rec.sclera.r;
  ScaledImage out{cv::Mat(), rec};
  if (f == 1.0) {
    out.image = image.clone();
    return out;
  }
  const int w = std::max(1, static_cast<int>(std::lround(image.cols * f)));
  const int h = std::max(1, static_cast<int>(std::lround(image.rows * f)));
  cv::resize(image, out.image, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
  for (Circle* c : {&out.record.pupil, &out.record.sclera}) {
    c->cx = map_resize(c->cx, image.cols, w);
    c->cy = map_resize(c->cy, image.rows, h);
    c->r *= f;
  }
  return out;
}

CropWindow crop_window(cv::Point2d center, double rs) {
  const int side = static_cast<int>(std::lround(kCropScale * rs));
  return {static_cast<int>(std::floor(center.x - side / 2.0 + 0.5)),
          static_cast<int>(std::floor(center.y - side / 2.0 + 0.5)), side};
}

cv::Mat crop_periocular(const cv::Mat& image, cv::Point2d center, double rs) {
  const CropWindow win = crop_window(center, rs);
  if (win.side < 1) throw AnnotationError("crop side must be at least one pixel");
  cv::Mat out = cv::Mat::zeros(win.side, win.side, image.type());
  const cv::Rect src_rect = cv::Rect(win.x0, win.y0, win.side, win.side) & cv::Rect(0, 0, image.cols, image.rows);
  if (src_rect.area() > 0) {
    image(src_rect).copyTo(out(cv::Rect(src_rect.x - win.x0, src_rect.y - win.y0, src_rect.width, src_rect.height)));
  }
  return out;
}

cv::Mat canonicalize_orientation(const cv::Mat& image, Eye eye) {
  if (eye == Eye::Left) return image.clone();
  cv::Mat out;
  cv::flip(image, out, 1);
  return out;
}

cv::Mat resize_square(const cv::Mat& image, int side) {
  if (side < 1) throw SizeError("resize side must be positive");
  if (image.cols == side && image.rows == side) return image.clone();
  cv::Mat out;
  cv::resize(image, out, cv::Size(side, side), 0, 0, cv::INTER_LINEAR);
  return out;
}

cv::Mat resize_to_network(const cv::Mat& image, const NetworkCatalogEntry& network) {
  if (!network.input_side) throw CatalogError(network.name + ": catalog declares no input side");
  return resize_square(image, static_cast<int>(*network.input_side));
}

std::map<int, double> group_mean_sclera_radius(const std::vector<ImageRecord>& records) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& r : records) {
    auto& [sum, n] = acc[r.distance_m];
    sum += r.sclera.r;
    ++n;
  }
  std::map<int, double> out;
  for (const auto& [d, v] : acc) out[d] = v.first / v.second;
  return out;
}

ScaledImage prepare_image(const cv::Mat& image, const ImageRecord& rec, double group_mean_rs,
                          std::optional<int> side) {
  rec.validate_bounds(image.cols, image.rows);
  ScaledImage scaled = scale_to_group_radius(image, rec, group_mean_rs);
  ImageRecord out = scaled.record;

  const cv::Point2d center(out.sclera.cx, out.sclera.cy);
  const CropWindow win = crop_window(center, out.sclera.r);
  cv::Mat img = crop_periocular(scaled.image, center, out.sclera.r);
  for (Circle* c : {&out.pupil, &out.sclera}) {
    c->cx -= win.x0;
    c->cy -= win.y0;
  }

  img = canonicalize_orientation(img, rec.eye);
  if (rec.eye == Eye::Right) {
    for (Circle* c : {&out.pupil, &out.sclera}) c->cx = img.cols - 1 - c->cx;
  }

  if (side && *side != img.cols) {
    const int from = img.cols;
    img = resize_square(img, *side);
    for (Circle* c : {&out.pupil, &out.sclera}) {
      c->cx = map_resize(c->cx, from, *side);
      c->cy = map_resize(c->cy, from, *side);
      c->r *= static_cast<double>(*side) / from;
    }
  }
  return {img, out};
}

cv::Mat read_image(const std::filesystem::path& path, bool color) {
  cv::Mat img = cv::imread(path.string(), color ? cv::IMREAD_COLOR : cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw IoError("cannot read image: " + path.string());
  return img;
}

void write_png(const std::filesystem::path& path, const cv::Mat& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params = {cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), image, params)) throw IoError("cannot write image: " + path.string());
}

std::vector<ImageRecord> prepare_dataset(const std::vector<ImageRecord>& records,
                                         const std::filesystem::path& image_root,
                                         const PrepOptions& options) {
  const auto means = group_mean_sclera_radius(records);
  std::vector<ImageRecord> out(records.size());
  std::filesystem::create_directories(options.output_dir);
  parallel_for(records.size(), options.jobs, [&](std::size_t i) {
    const auto& rec = records[i];
    std::filesystem::path src = rec.path;
    if (src.is_relative()) src = image_root / src;
    const cv::Mat image = read_image(src, options.keep_color);
    ScaledImage prepared = prepare_image(image, rec, means.at(rec.distance_m), options.side);
    const std::string name = rec.id + ".png";
    write_png(options.output_dir / name, prepared.image);
    prepared.record.path = name;
    out[i] = std::move(prepared.record);
  });
  return out;
}

}  // namespace periscope
