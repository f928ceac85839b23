#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "periscope/preprocess.hpp"

namespace periscope {

// Procedural periocular images for desk-scale runs and tests. Each subject
// has a left and a right eye with its own skin, brow and iris pattern; every
// capture varies distance, position, rotation, lighting and sensor noise.
struct SyntheticOptions {
  int subjects = 10;
  int images_per_eye = 4;
  int width = 400;
  int height = 320;
  std::uint64_t seed = 42;
};

struct SyntheticImage {
  cv::Mat image;  // 8-bit BGR
  ImageRecord record;
};

/// Renders every capture in memory. Record paths are images/<id>.png.
std::vector<SyntheticImage> render_synthetic_dataset(const SyntheticOptions& options);

/// Writes images/<id>.png and manifest.jsonl under `out_dir`.
std::vector<ImageRecord> write_synthetic_dataset(const std::filesystem::path& out_dir, const SyntheticOptions& options);

}  // namespace periscope
