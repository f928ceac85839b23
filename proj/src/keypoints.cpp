// SIFT keypoint detection (OpenCV) and geometrically filtered matching.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <tuple>

#include <opencv2/features2d.hpp>

#include "periscope/errors.hpp"
#include "periscope/handcrafted.hpp"

namespace periscope {

namespace {

double descriptor_distance(const Keypoint& p, const Keypoint& q) {
  double ss = 0.0;
  for (int i = 0; i < kSiftDescriptorSize; ++i) {
    const double d = static_cast<double>(p.descriptor[i]) - q.descriptor[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

// wraps to [-180, 180)
double wrap_degrees(double d) {
  d = std::fmod(d + 180.0, 360.0);
  if (d < 0) d += 360.0;
  return d - 180.0;
}

}  // namespace

KeypointSet detect_sift(const cv::Mat& gray, const SiftOptions& options) {
  if (gray.empty()) return {};
  auto sift = cv::SIFT::create(0, options.octave_layers, options.contrast_threshold,
                               options.edge_threshold, options.sigma);
  std::vector<cv::KeyPoint> kps;
  cv::Mat desc;
  sift->detectAndCompute(gray, cv::noArray(), kps, desc);

  std::vector<std::size_t> order(kps.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const auto& a = kps[i];
    const auto& b = kps[j];
    return std::tie(a.pt.y, a.pt.x, a.size, a.angle, a.response, a.octave) <
           std::tie(b.pt.y, b.pt.x, b.size, b.angle, b.response, b.octave);
  });

  KeypointSet out;
  out.points.reserve(kps.size());
  for (std::size_t idx : order) {
    const auto& k = kps[idx];
    Keypoint p;
    p.x = k.pt.x;
    p.y = k.pt.y;
    p.scale = k.size;
    p.orientation = static_cast<float>(k.angle * std::numbers::pi / 180.0);
    const float* row = desc.ptr<float>(static_cast<int>(idx));
    std::copy(row, row + kSiftDescriptorSize, p.descriptor.begin());
    out.points.push_back(p);
  }
  return out;
}

std::vector<KeypointMatch> match_keypoints(const KeypointSet& a, const KeypointSet& b,
                                           const MatchOptions& options) {
  const bool a_is_query = a.size() <= b.size();
  const auto& query = a_is_query ? a : b;
  const auto& train = a_is_query ? b : a;

  // best candidate per train point, so the result is one-to-one
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> owner(train.size(), kNone);
  std::vector<double> owner_dist(train.size(), std::numeric_limits<double>::infinity());

  for (std::size_t q = 0; q < query.size(); ++q) {
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    std::size_t best = kNone;
    for (std::size_t t = 0; t < train.size(); ++t) {
      const double d = descriptor_distance(query.points[q], train.points[t]);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = t;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (best == kNone) continue;
    const bool passes = std::isinf(d2) || d1 < options.ratio * d2;
    if (!passes) continue;
    if (d1 < owner_dist[best]) {
      owner[best] = q;
      owner_dist[best] = d1;
    }
  }

  std::vector<KeypointMatch> out;
  for (std::size_t t = 0; t < train.size(); ++t) {
    if (owner[t] == kNone) continue;
    if (a_is_query) {
      out.push_back({owner[t], t, owner_dist[t]});
    } else {
      out.push_back({t, owner[t], owner_dist[t]});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const KeypointMatch& x, const KeypointMatch& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  return out;
}

std::vector<KeypointMatch> geometric_filter(const KeypointSet& a, const KeypointSet& b,
                                            const std::vector<KeypointMatch>& candidates,
                                            const MatchOptions& options) {
  if (candidates.empty()) return {};
  const std::size_t n = candidates.size();
  std::vector<double> dtheta(n), length(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = a.points.at(candidates[i].a);
    const auto& q = b.points.at(candidates[i].b);
    dtheta[i] = wrap_degrees((q.orientation - p.orientation) * 180.0 / std::numbers::pi);
    length[i] = std::hypot(q.x - p.x, q.y - p.y);
  }

  // orientation mode: histogram over [-180, 180)
  const int nbins = std::max(1, static_cast<int>(std::lround(360.0 / options.angle_bin_deg)));
  std::vector<int> counts(static_cast<std::size_t>(nbins), 0);
  for (double d : dtheta) {
    int k = static_cast<int>(std::floor((d + 180.0) / options.angle_bin_deg));
    counts[static_cast<std::size_t>(std::clamp(k, 0, nbins - 1))]++;
  }
  const auto mode_bin = std::distance(counts.begin(), std::max_element(counts.begin(), counts.end()));
  const double mode_angle = -180.0 + options.angle_bin_deg * (static_cast<double>(mode_bin) + 0.5);

  // length mode: the candidate length supported by the most others within tolerance
  auto within = [&](double l, double centre) {
    return std::abs(l - centre) <= std::max(options.length_tolerance * centre, options.length_floor_px);
  };
  double mode_length = 0.0;
  int best_support = -1;
  for (std::size_t i = 0; i < n; ++i) {
    int support = 0;
    for (std::size_t j = 0; j < n; ++j) support += within(length[j], length[i]);
    if (support > best_support || (support == best_support && length[i] < mode_length)) {
      best_support = support;
      mode_length = length[i];
    }
  }

  std::vector<KeypointMatch> kept;
  for (std::size_t i = 0; i < n; ++i) {
    const bool angle_ok = std::abs(wrap_degrees(dtheta[i] - mode_angle)) <= options.angle_tolerance_deg;
    if (angle_ok && within(length[i], mode_length)) kept.push_back(candidates[i]);
  }
  return kept;
}

double sift_match_score(const KeypointSet& a, const KeypointSet& b, const MatchOptions& options) {
  if (a.empty() || b.empty()) throw UndefinedScoreError("empty keypoint set");
  const auto kept = geometric_filter(a, b, match_keypoints(a, b, options), options);
  return static_cast<double>(kept.size()) / static_cast<double>(std::min(a.size(), b.size()));
}

}  // namespace periscope
