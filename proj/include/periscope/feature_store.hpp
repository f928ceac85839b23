#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "periscope/handcrafted.hpp"
#include "periscope/normalize.hpp"
#include "periscope/protocol.hpp"
#include "periscope/tensors.hpp"

namespace periscope {

// On-disk feature cache. Layout under the root:
//   activations/<network>/<layer>/<image>.atd
//   handcrafted/lbp/<image>.atd, handcrafted/hog/<image>.atd   (1 x N)
//   handcrafted/sift/<image>.json (+ <image>.atd, K x 128, when K > 0)
class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path root);

  /// PERISCOPE_CACHE if set, otherwise `fallback`.
  static FeatureStore from_environment(const std::filesystem::path& fallback);

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path activation_path(const std::string& network, const std::string& layer,
                                        const std::string& image) const;
  std::filesystem::path descriptor_path(HistogramKind kind, const std::string& image) const;
  std::filesystem::path keypoint_sidecar_path(const std::string& image) const;
  std::filesystem::path keypoint_descriptor_path(const std::string& image) const;

  void write_activation(const std::string& network, const std::string& layer, const std::string& image,
                        const ActivationTensor& t) const;
  /// nullopt when the dump does not exist; malformed dumps throw.
  std::optional<ActivationTensor> read_activation(const std::string& network, const std::string& layer,
                                                  const std::string& image) const;

  void write_descriptor(const std::string& image, const BlockHistogramDescriptor& d) const;
  /// Read back as a flat descriptor (rows = cols = 1, bins_per_block = N).
  std::optional<BlockHistogramDescriptor> read_descriptor(HistogramKind kind, const std::string& image) const;

  void write_keypoints(const std::string& image, const KeypointSet& k) const;
  std::optional<KeypointSet> read_keypoints(const std::string& image) const;

 private:
  std::filesystem::path root_;
};

/// Layer names may contain characters that are not path-safe.
std::string sanitize_component(const std::string& name);

// Cosine similarity of normalized activations of one layer.
class DeepComparator : public TrialComparator {
 public:
  DeepComparator(const FeatureStore& store, std::string network, std::string layer, NormStrategy strategy);
  std::string name() const override;
  void prepare(const std::vector<std::string>& ids, int jobs) override;
  std::optional<double> compare(const std::string& enrol, const std::string& probe) const override;

 private:
  const FeatureStore& store_;
  std::string network_, layer_;
  NormStrategy strategy_;
  std::map<std::string, std::optional<FeatureVector>> cache_;
};

// Negated chi-square distance of LBP or HOG block histograms.
class HistogramComparator : public TrialComparator {
 public:
  HistogramComparator(const FeatureStore& store, HistogramKind kind);
  std::string name() const override;
  void prepare(const std::vector<std::string>& ids, int jobs) override;
  std::optional<double> compare(const std::string& enrol, const std::string& probe) const override;

 private:
  const FeatureStore& store_;
  HistogramKind kind_;
  std::map<std::string, std::optional<BlockHistogramDescriptor>> cache_;
};

class KeypointComparator : public TrialComparator {
 public:
  explicit KeypointComparator(const FeatureStore& store, MatchOptions options = {});
  std::string name() const override { return "sift"; }
  void prepare(const std::vector<std::string>& ids, int jobs) override;
  std::optional<double> compare(const std::string& enrol, const std::string& probe) const override;

 private:
  const FeatureStore& store_;
  MatchOptions options_;
  std::map<std::string, std::optional<KeypointSet>> cache_;
};

}  // namespace periscope
