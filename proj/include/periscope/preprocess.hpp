#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "periscope/tensors.hpp"

namespace periscope {

enum class Eye { Left, Right };

struct Circle {
  double cx = 0;
  double cy = 0;
  double r = 0;
};

// One manifest line. `id` defaults to the file stem of `path`.
struct ImageRecord {
  std::string id;
  std::string path;
  std::string subject_id;
  Eye eye = Eye::Left;
  int session = 1;
  int distance_m = 4;
  Circle pupil;
  Circle sclera;

  /// Radii positive and distance in 4..8 m. Throws AnnotationError.
  void validate() const;
  /// Both circles inside a width x height image. Throws AnnotationError.
  void validate_bounds(int width, int height) const;
};

/// JSON-lines manifest. Relative image paths are kept as written.
std::vector<ImageRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records);
ImageRecord parse_record(const std::string& json_line);
std::string format_record(const ImageRecord& rec);

struct ScaledImage {
  cv::Mat image;
  ImageRecord record;
};

/// Isotropic bilinear rescale so the sclera radius becomes `group_mean_rs`.
ScaledImage scale_to_group_radius(const cv::Mat& image, const ImageRecord& rec, double group_mean_rs);

// Square crop window of side round(7.6 * rs) centred on the sclera centre.
struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
};

inline constexpr double kCropScale = 7.6;

CropWindow crop_window(cv::Point2d center, double rs);
/// Pixels outside the source image are zero.
cv::Mat crop_periocular(const cv::Mat& image, cv::Point2d center, double rs);

/// Right-eye images are mirrored about the vertical axis.
cv::Mat canonicalize_orientation(const cv::Mat& image, Eye eye);

/// Bilinear resize to the catalog input side. Throws CatalogError if unset.
cv::Mat resize_to_network(const cv::Mat& image, const NetworkCatalogEntry& network);
cv::Mat resize_square(const cv::Mat& image, int side);

/// Mean sclera radius per distance group.
std::map<int, double> group_mean_sclera_radius(const std::vector<ImageRecord>& records);

struct PrepOptions {
  std::filesystem::path output_dir;
  std::optional<int> side;   // final square side; crop size if unset
  bool keep_color = true;    // false writes 8-bit grayscale
  int jobs = 1;
};

/// Scale, crop, flip and resize every record; writes <id>.png and returns the
/// records rewritten to point at the new images with crop-frame annotations.
/// `image_root` resolves relative record paths.
std::vector<ImageRecord> prepare_dataset(const std::vector<ImageRecord>& records,
                                         const std::filesystem::path& image_root,
                                         const PrepOptions& options);

/// Single-record version of the pipeline above, without I/O.
ScaledImage prepare_image(const cv::Mat& image, const ImageRecord& rec, double group_mean_rs,
                          std::optional<int> side);

cv::Mat read_image(const std::filesystem::path& path, bool color);
void write_png(const std::filesystem::path& path, const cv::Mat& image);

}  // namespace periscope
