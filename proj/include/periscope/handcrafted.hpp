#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

namespace periscope {

enum class HistogramKind { Lbp, Hog };

std::string_view to_string(HistogramKind k);

// Concatenated per-region histograms, region-major (row by row), each
// region contributing `bins_per_block` values.
struct BlockHistogramDescriptor {
  HistogramKind kind = HistogramKind::Lbp;
  int rows = 0;
  int cols = 0;
  int bins_per_block = 0;
  std::vector<float> data;

  std::size_t block_offset(int r, int c) const {
    return static_cast<std::size_t>((r * cols + c) * bins_per_block);
  }
};

// Region layout. By default the image is split into a grid of `grid_rows` x
// `grid_cols` equal regions; remainder pixels at the right/bottom are dropped.
// Setting `cell_pixels` switches to fixed square cells of that side instead.
struct RegionLayout {
  int grid_rows = 8;
  int grid_cols = 8;
  std::optional<int> cell_pixels;
};

struct LbpOptions {
  RegionLayout layout;
  bool normalize = true;  // L2 per region
};

struct HogOptions {
  RegionLayout layout;
  int bins = 9;  // over [0, 360); bin b is centred at b * 360 / bins
  bool normalize = true;
};

inline constexpr int kLbpUniformBins = 59;

/// Maps an 8-bit LBP code to its uniform bin: 58 uniform patterns in ascending
/// code order, then one shared bin (58) for every non-uniform code.
int lbp_uniform_bin(unsigned code);

/// Uniform LBP (8 neighbours, radius 1, bilinear diagonals) per region.
/// `gray` must be CV_8UC1. Throws SizeError if smaller than the grid.
BlockHistogramDescriptor lbp_descriptor(const cv::Mat& gray, const LbpOptions& options = {});

/// Signed-orientation HOG per region with central-difference gradients.
BlockHistogramDescriptor hog_descriptor(const cv::Mat& gray, const HogOptions& options = {});

/// sum (a-b)^2 / (a+b), skipping empty bins. Throws ComparatorError on mismatch.
double chi2_distance(const BlockHistogramDescriptor& a, const BlockHistogramDescriptor& b);

// ---------------------------------------------------------------------------
// Keypoints

inline constexpr int kSiftDescriptorSize = 128;

struct Keypoint {
  float x = 0;
  float y = 0;
  float scale = 0;
  float orientation = 0;  // radians
  std::array<float, kSiftDescriptorSize> descriptor{};
};

struct KeypointSet {
  std::vector<Keypoint> points;
  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

struct SiftOptions {
  int octave_layers = 3;
  double contrast_threshold = 0.04;
  double edge_threshold = 10.0;
  double sigma = 1.6;
};

/// Difference-of-Gaussians keypoints with 128-d descriptors, sorted by
/// position so the output order is deterministic.
KeypointSet detect_sift(const cv::Mat& gray, const SiftOptions& options = {});

struct MatchOptions {
  double ratio = 0.8;               // Lowe ratio test
  double angle_bin_deg = 10.0;      // orientation-difference histogram bin
  double angle_tolerance_deg = 20.0;
  double length_tolerance = 0.15;   // relative to the modal displacement length
  double length_floor_px = 1.0;     // absolute slack for near-zero displacements
};

struct KeypointMatch {
  std::size_t a = 0;  // index into the first set
  std::size_t b = 0;  // index into the second set
  double distance = 0;
};

/// Nearest-descriptor candidates with the ratio test, one-to-one. The smaller
/// set is the query side so at most min(|a|, |b|) pairs are returned.
std::vector<KeypointMatch> match_keypoints(const KeypointSet& a, const KeypointSet& b,
                                           const MatchOptions& options = {});

/// Keeps pairs whose orientation change lies near the modal orientation change
/// and whose displacement length lies near the modal displacement length.
std::vector<KeypointMatch> geometric_filter(const KeypointSet& a, const KeypointSet& b,
                                            const std::vector<KeypointMatch>& candidates,
                                            const MatchOptions& options = {});

/// Surviving pairs / min(|a|, |b|). Throws UndefinedScoreError on an empty set.
double sift_match_score(const KeypointSet& a, const KeypointSet& b, const MatchOptions& options = {});

}  // namespace periscope
