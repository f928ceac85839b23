#include "periscope/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "periscope/errors.hpp"

namespace periscope {

namespace {

// All geometry is in units of the iris (sclera-boundary) radius, centred on
// the iris, x towards the temple for a left eye, y downwards.

struct Wave {
  double fx, fy, phase, amplitude;
};

struct Mark {
  double u, v, radius, depth;
};

struct EyeTraits {
  double skin = 150;
  std::array<Wave, 4> waves{};
  std::array<Mark, 8> marks{};
  double brow_v = -2.4, brow_curve = 0.2, brow_tilt = 0.0, brow_thickness = 0.35, brow_depth = 70;
  double brow_left = -2.2, brow_right = 2.4;
  double half_width = 1.7, upper = 0.8, lower = 0.6;
  double iris = 90;
  std::array<double, 6> iris_amp{};
  std::array<double, 6> iris_phase{};
  double iris_rings = 3.0;
  double pupil = 0.42;
};

struct Capture {
  int distance = 4;
  double rs = 30;
  double cx = 200, cy = 160;
  double rotation = 0;  // radians
  double gain = 1, offset = 0;
  double shade_x = 0, shade_y = 0;
  double gaze_u = 0, gaze_v = 0;
};

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double soft(double x, double width) { return std::clamp(0.5 + x / width, 0.0, 1.0); }

EyeTraits make_traits(std::mt19937_64& rng) {
  EyeTraits t;
  t.skin = uniform(rng, 120, 190);
  for (auto& w : t.waves) {
    const double f = uniform(rng, 0.3, 1.2), a = uniform(rng, 0, 2 * std::numbers::pi);
    w = {f * std::cos(a), f * std::sin(a), uniform(rng, 0, 2 * std::numbers::pi), uniform(rng, 6, 16)};
  }
  for (auto& m : t.marks) {
    do {
      m.u = uniform(rng, -3.5, 3.5);
      m.v = uniform(rng, -3.5, 3.5);
    } while (std::abs(m.u) < 2.0 && std::abs(m.v) < 1.1);
    m.radius = uniform(rng, 0.08, 0.25);
    m.depth = uniform(rng, 30, 70);
  }
  t.brow_v = uniform(rng, -2.7, -2.1);
  t.brow_curve = uniform(rng, 0.08, 0.3);
  t.brow_tilt = uniform(rng, -0.12, 0.12);
  t.brow_thickness = uniform(rng, 0.25, 0.5);
  t.brow_depth = uniform(rng, 50, 100);
  t.brow_left = uniform(rng, -2.6, -1.8);
  t.brow_right = uniform(rng, 2.0, 2.8);
  t.half_width = uniform(rng, 1.6, 1.9);
  t.upper = uniform(rng, 0.7, 0.95);
  t.lower = uniform(rng, 0.5, 0.7);
  t.iris = uniform(rng, 50, 120);
  for (std::size_t k = 0; k < t.iris_amp.size(); ++k) {
    t.iris_amp[k] = uniform(rng, 5, 20);
    t.iris_phase[k] = uniform(rng, 0, 2 * std::numbers::pi);
  }
  t.iris_rings = uniform(rng, 2, 5);
  t.pupil = uniform(rng, 0.35, 0.5);
  return t;
}

Capture make_capture(std::mt19937_64& rng, int width, int height) {
  Capture c;
  c.distance = std::uniform_int_distribution<int>(4, 8)(rng);
  c.rs = 120.0 / c.distance * uniform(rng, 0.97, 1.03);
  c.cx = width / 2.0 + uniform(rng, -20, 20);
  c.cy = height / 2.0 + uniform(rng, -15, 15);
  c.rotation = uniform(rng, -4, 4) * std::numbers::pi / 180.0;
  c.gain = uniform(rng, 0.85, 1.15);
  c.offset = uniform(rng, -15, 15);
  c.shade_x = uniform(rng, -15, 15);
  c.shade_y = uniform(rng, -15, 15);
  c.gaze_u = uniform(rng, -0.15, 0.15);
  c.gaze_v = uniform(rng, -0.1, 0.1);
  return c;
}

double shade(const EyeTraits& t, const Capture& c, double u, double v) {
  double s = t.skin;
  for (const auto& w : t.waves) s += w.amplitude * std::sin(2 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
  for (const auto& m : t.marks) {
    const double d2 = ((u - m.u) * (u - m.u) + (v - m.v) * (v - m.v)) / (m.radius * m.radius);
    if (d2 < 9.0) s -= m.depth * std::exp(-d2);
  }

  // brow
  if (u > t.brow_left - 0.3 && u < t.brow_right + 0.3) {
    const double curve = t.brow_v + t.brow_curve * u * u / 4.0 + t.brow_tilt * u;
    const double across = t.brow_thickness / 2 - std::abs(v - curve);
    const double along = std::min(u - t.brow_left, t.brow_right - u);
    const double k = soft(across, 0.08) * soft(along, 0.3);
    s -= k * t.brow_depth * (0.8 + 0.2 * std::sin(40.0 * u + 7.0 * v));
  }

  // eye opening, shifted by gaze relative to the iris
  const double eu = u + c.gaze_u, ev = v + c.gaze_v;
  const double profile = 1.0 - (eu / t.half_width) * (eu / t.half_width);
  if (profile > 0.0) {
    const double lid = ev < 0 ? t.upper * profile + ev : t.lower * profile - ev;
    const double inside = soft(lid, 0.06);
    if (inside > 0.0) {
      const double r = std::hypot(u, v);
      double eye = 215.0 - 20.0 * std::abs(eu) / t.half_width;
      if (r < 1.02) {
        const double theta = std::atan2(v, u);
        double iris = t.iris;
        for (std::size_t k = 0; k < t.iris_amp.size(); ++k) {
          iris += t.iris_amp[k] * std::cos(static_cast<double>(k + 3) * theta + t.iris_phase[k]);
        }
        iris += 10.0 * std::cos(2 * std::numbers::pi * t.iris_rings * r);
        const double edge = soft(1.0 - r, 0.04);
        eye = eye * (1 - edge) + iris * edge;
        if (r < t.pupil + 0.03) eye = eye * (1 - soft(t.pupil - r, 0.04)) + 25.0 * soft(t.pupil - r, 0.04);
      }
      const double hl = std::hypot(u - 0.3, v + 0.3);
      if (hl < 0.15) eye = std::max(eye, 245.0 * soft(0.12 - hl, 0.04) + eye * (1 - soft(0.12 - hl, 0.04)));
      s = s * (1 - inside) + eye * inside;
    }
    // lash line along the upper lid
    if (ev < 0) {
      const double lash = std::abs(t.upper * profile + ev);
      s -= 60.0 * soft(0.08 - lash, 0.05);
    }
  }
  return s;
}

cv::Mat render(const EyeTraits& t, const Capture& c, Eye eye, int width, int height, std::mt19937_64& rng) {
  cv::Mat img(height, width, CV_8UC3);
  std::normal_distribution<double> noise(0.0, 5.0);
  const double cr = std::cos(c.rotation), sr = std::sin(c.rotation);
  for (int y = 0; y < height; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < width; ++x) {
      const double dx = (x - c.cx) / c.rs, dy = (y - c.cy) / c.rs;
      double u = cr * dx + sr * dy;
      const double v = -sr * dx + cr * dy;
      if (eye == Eye::Right) u = -u;
      double g = shade(t, c, u, v);
      g = g * c.gain + c.offset + c.shade_x * (x / static_cast<double>(width) - 0.5) +
          c.shade_y * (y / static_cast<double>(height) - 0.5) + noise(rng);
      row[x] = cv::Vec3b(cv::saturate_cast<std::uint8_t>(g * 0.9), cv::saturate_cast<std::uint8_t>(g * 0.97),
                         cv::saturate_cast<std::uint8_t>(g * 1.05));
    }
  }
  return img;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

std::vector<SyntheticImage> render_synthetic_dataset(const SyntheticOptions& options) {
  if (options.subjects < 1 || options.images_per_eye < 1 || options.width < 64 || options.height < 64) {
    throw DataError("synthetic dataset needs at least one subject and image, and 64x64 frames");
  }
  std::vector<SyntheticImage> out;
  for (int s = 0; s < options.subjects; ++s) {
    for (Eye eye : {Eye::Left, Eye::Right}) {
      const std::uint64_t stream = options.seed * 7919ULL + static_cast<std::uint64_t>(s) * 2 + (eye == Eye::Right);
      std::mt19937_64 rng(stream);
      const EyeTraits traits = make_traits(rng);
      for (int k = 0; k < options.images_per_eye; ++k) {
        const Capture cap = make_capture(rng, options.width, options.height);
        SyntheticImage si;
        si.image = render(traits, cap, eye, options.width, options.height, rng);
        auto& r = si.record;
        r.subject_id = fmt::format("s{:02}", s + 1);
        r.eye = eye;
        r.id = fmt::format("{}{}{}", r.subject_id, eye == Eye::Left ? 'L' : 'R', k + 1);
        r.path = "images/" + r.id + ".png";
        r.session = k < (options.images_per_eye + 1) / 2 ? 1 : 2;
        r.distance_m = cap.distance;
        r.sclera = {round2(cap.cx), round2(cap.cy), round2(cap.rs)};
        r.pupil = {round2(cap.cx), round2(cap.cy), round2(cap.rs * traits.pupil)};
        out.push_back(std::move(si));
      }
    }
  }
  return out;
}

std::vector<ImageRecord> write_synthetic_dataset(const std::filesystem::path& out_dir, const SyntheticOptions& options) {
  const auto images = render_synthetic_dataset(options);
  std::vector<ImageRecord> records;
  for (const auto& si : images) {
    write_png(out_dir / si.record.path, si.image);
    records.push_back(si.record);
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

}  // namespace periscope
