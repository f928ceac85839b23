// Block LBP / HOG histograms and the chi-square comparator.

#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "periscope/errors.hpp"
#include "periscope/handcrafted.hpp"

namespace periscope {

namespace {

struct Grid {
  int rows, cols, cell_h, cell_w;
};

Grid resolve_grid(const cv::Mat& gray, const RegionLayout& layout) {
  if (gray.type() != CV_8UC1) throw SizeError("descriptor input must be 8-bit single channel");
  Grid g{};
  if (layout.cell_pixels) {
    const int cell = *layout.cell_pixels;
    if (cell < 1) throw SizeError("cell size must be positive");
    g = {gray.rows / cell, gray.cols / cell, cell, cell};
  } else {
    if (layout.grid_rows < 1 || layout.grid_cols < 1) throw SizeError("grid must be at least 1x1");
    g = {layout.grid_rows, layout.grid_cols, gray.rows / layout.grid_rows,
         gray.cols / layout.grid_cols};
  }
  if (g.rows < 1 || g.cols < 1 || g.cell_h < 1 || g.cell_w < 1) {
    throw SizeError(fmt::format("image {}x{} is smaller than the region grid", gray.cols, gray.rows));
  }
  return g;
}

void l2_blocks(std::vector<double>& hist, int bins) {
  for (std::size_t off = 0; off < hist.size(); off += static_cast<std::size_t>(bins)) {
    double ss = 0.0;
    for (int i = 0; i < bins; ++i) ss += hist[off + i] * hist[off + i];
    if (ss == 0.0) continue;
    const double inv = 1.0 / std::sqrt(ss);
    for (int i = 0; i < bins; ++i) hist[off + i] *= inv;
  }
}

std::vector<float> to_float(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

constexpr std::array<int, 256> make_uniform_table() {
  std::array<int, 256> table{};
  int next = 0;
  for (unsigned code = 0; code < 256; ++code) {
    int transitions = 0;
    for (int k = 0; k < 8; ++k) {
      const unsigned b0 = (code >> k) & 1u;
      const unsigned b1 = (code >> ((k + 1) % 8)) & 1u;
      transitions += b0 != b1;
    }
    table[code] = transitions <= 2 ? next++ : kLbpUniformBins - 1;
  }
  return table;
}

constexpr auto kUniformTable = make_uniform_table();

// Neighbour k sits at angle 2*pi*k/8 on the unit circle (x right, y up).
struct Sample {
  int x0, y0;        // top-left integer corner
  double w00, w01, w10, w11;
};

std::array<Sample, 8> lbp_samples() {
  std::array<Sample, 8> s{};
  for (int k = 0; k < 8; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / 8.0;
    double dx = std::cos(angle);
    double dy = -std::sin(angle);
    if (std::abs(dx - std::round(dx)) < 1e-6) dx = std::round(dx);
    if (std::abs(dy - std::round(dy)) < 1e-6) dy = std::round(dy);
    const double fx = std::floor(dx), fy = std::floor(dy);
    const double tx = dx - fx, ty = dy - fy;
    s[k] = {static_cast<int>(fx), static_cast<int>(fy), (1 - tx) * (1 - ty), tx * (1 - ty),
            (1 - tx) * ty, tx * ty};
  }
  return s;
}

}  // namespace

std::string_view to_string(HistogramKind k) { return k == HistogramKind::Lbp ? "lbp" : "hog"; }

int lbp_uniform_bin(unsigned code) { return kUniformTable[code & 0xffu]; }

BlockHistogramDescriptor lbp_descriptor(const cv::Mat& gray, const LbpOptions& options) {
  const Grid g = resolve_grid(gray, options.layout);
  const auto samples = lbp_samples();
  std::vector<double> hist(static_cast<std::size_t>(g.rows * g.cols * kLbpUniformBins), 0.0);

  const int ymax = std::min(gray.rows - 1, g.rows * g.cell_h);
  const int xmax = std::min(gray.cols - 1, g.cols * g.cell_w);
  for (int y = 1; y < ymax; ++y) {
    const int br = y / g.cell_h;
    for (int x = 1; x < xmax; ++x) {
      const double center = gray.at<std::uint8_t>(y, x);
      unsigned code = 0;
      for (int k = 0; k < 8; ++k) {
        const Sample& s = samples[k];
        const int sx = x + s.x0, sy = y + s.y0;
        double v = s.w00 * gray.at<std::uint8_t>(sy, sx);
        if (s.w01 != 0) v += s.w01 * gray.at<std::uint8_t>(sy, sx + 1);
        if (s.w10 != 0) v += s.w10 * gray.at<std::uint8_t>(sy + 1, sx);
        if (s.w11 != 0) v += s.w11 * gray.at<std::uint8_t>(sy + 1, sx + 1);
        // bilinear weights may not sum to exactly one
        if (v >= center - 1e-6) code |= 1u << k;
      }
      const int bc = x / g.cell_w;
      hist[static_cast<std::size_t>((br * g.cols + bc) * kLbpUniformBins + kUniformTable[code])] += 1.0;
    }
  }
  if (options.normalize) l2_blocks(hist, kLbpUniformBins);
  return {HistogramKind::Lbp, g.rows, g.cols, kLbpUniformBins, to_float(hist)};
}

BlockHistogramDescriptor hog_descriptor(const cv::Mat& gray, const HogOptions& options) {
  const Grid g = resolve_grid(gray, options.layout);
  if (options.bins < 2) throw SizeError("HOG needs at least two orientation bins");
  const int bins = options.bins;
  const double bin_width = 360.0 / bins;
  std::vector<double> hist(static_cast<std::size_t>(g.rows * g.cols * bins), 0.0);

  const int W = gray.cols, H = gray.rows;
  auto px = [&](int y, int x) -> double {
    return gray.at<std::uint8_t>(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1));
  };
  for (int y = 0; y < g.rows * g.cell_h; ++y) {
    const int br = y / g.cell_h;
    for (int x = 0; x < g.cols * g.cell_w; ++x) {
      const double gx = px(y, x + 1) - px(y, x - 1);
      const double gy = px(y + 1, x) - px(y - 1, x);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (deg < 0) deg += 360.0;
      const double pos = deg / bin_width;
      const double fl = std::floor(pos);
      const double frac = pos - fl;
      const int lo = static_cast<int>(fl) % bins;
      const int hi = (lo + 1) % bins;
      const std::size_t off = static_cast<std::size_t>((br * g.cols + x / g.cell_w) * bins);
      hist[off + lo] += mag * (1.0 - frac);
      hist[off + hi] += mag * frac;
    }
  }
  if (options.normalize) l2_blocks(hist, bins);
  return {HistogramKind::Hog, g.rows, g.cols, bins, to_float(hist)};
}

double chi2_distance(const BlockHistogramDescriptor& a, const BlockHistogramDescriptor& b) {
  if (a.kind != b.kind) {
    throw ComparatorError(fmt::format("descriptor kind mismatch: {} vs {}", to_string(a.kind),
                                      to_string(b.kind)));
  }
  if (a.rows != b.rows || a.cols != b.cols || a.bins_per_block != b.bins_per_block ||
      a.data.size() != b.data.size()) {
    throw ComparatorError("descriptor shape mismatch");
  }
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double s = static_cast<double>(a.data[i]) + b.data[i];
    if (s == 0.0) continue;
    const double diff = static_cast<double>(a.data[i]) - b.data[i];
    d += diff * diff / s;
  }
  return d;
}

}  // namespace periscope
