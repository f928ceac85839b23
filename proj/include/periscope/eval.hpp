#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "periscope/fusion.hpp"
#include "periscope/normalize.hpp"
#include "periscope/protocol.hpp"
#include "periscope/tensors.hpp"

namespace periscope {

class FeatureStore;

// Genuine and impostor score populations behind one EER.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

/// Drops missing entries.
ScoreSet to_score_set(const TrialScores& scores);

/// Equal error rate in percent. FAR(t) counts impostors >= t, FRR(t) counts
/// genuines < t; the crossing is linearly interpolated between adjacent
/// operating points. Values above 50 mean the comparator polarity is inverted.
/// Throws MetricError on an empty class or a non-finite score.
double compute_eer(const ScoreSet& s);

struct DetPoint {
  double threshold;
  double far;  // fraction
  double frr;  // fraction
};

/// One operating point per distinct score, from the lowest threshold upwards.
std::vector<DetPoint> det_curve(const ScoreSet& s);

// ---------------------------------------------------------------------------
// Per-layer sweeps

struct LayerResult {
  std::string layer;
  std::uint64_t learnables = 0;
  std::optional<double> eer;  // unset when the layer could not be scored
  std::size_t missing = 0;    // trials without a score
};

struct SweepResult {
  std::string network;
  NormStrategy strategy = NormStrategy::PerChannel;
  std::vector<LayerResult> layers;

  /// Index of the lowest-EER layer; nullopt if no layer has an EER.
  std::optional<std::size_t> best_layer() const;
};

struct LayerSweep {
  SweepResult result;
  std::vector<std::optional<TrialScores>> scores;  // per layer, unset for gaps
};

/// Scores every catalog layer with cosine similarity under `strategy`. A layer
/// with no dumps at all becomes a gap instead of aborting the sweep.
LayerSweep layer_sweep(const NetworkCatalogEntry& network, const FeatureStore& store, const TrialPlan& plan,
                       NormStrategy strategy, int jobs = 1);

// ---------------------------------------------------------------------------
// CNN x ViT fusion grid

struct GridAxis {
  std::string network;
  std::vector<std::string> layers;
  std::vector<std::uint64_t> learnables;
  std::vector<std::optional<TrialScores>> scores;
  std::vector<std::optional<double>> solo_eer;

  static GridAxis from_sweep(const LayerSweep& sweep);
};

struct GridResult {
  std::string cnn;
  std::string vit;
  std::vector<std::string> cnn_layers;
  std::vector<std::string> vit_layers;
  std::vector<std::uint64_t> cnn_learnables;
  std::vector<std::uint64_t> vit_learnables;
  std::vector<std::optional<double>> cnn_solo_eer;
  std::vector<std::optional<double>> vit_solo_eer;
  std::vector<std::optional<double>> eer;  // row-major: CNN layer rows, ViT layer columns

  std::size_t rows() const { return cnn_layers.size(); }
  std::size_t cols() const { return vit_layers.size(); }
  const std::optional<double>& at(std::size_t r, std::size_t c) const { return eer[r * cols() + c]; }
};

/// Trains a two-input fusion for every (CNN layer, ViT layer) pair and records
/// the fused EER. Cells whose inputs are missing or whose training fails stay unset.
GridResult fusion_grid(const GridAxis& cnn, const GridAxis& vit, int jobs = 1,
                       const FusionOptions& options = {});

inline constexpr double kHeatmapMaxEer = 25.0;

/// EER clamped to [0, 25] % and mapped linearly to [0, 255].
std::uint8_t heatmap_value(double eer_percent);
/// Binary PGM (P5), one pixel per cell; failed cells are white.
std::string heatmap_pgm(const GridResult& grid);

struct OperatingPoint {
  std::string cnn;
  std::string vit;
  std::size_t cnn_index = 0;
  std::size_t vit_index = 0;
  std::string cnn_layer;
  std::string vit_layer;
  std::uint64_t cnn_learnables = 0;
  std::uint64_t vit_learnables = 0;
  std::optional<double> cnn_eer;
  std::optional<double> vit_eer;
  double fused_eer = 0.0;
  std::optional<double> with_traditional_eer;

  std::uint64_t combined_learnables() const { return cnn_learnables + vit_learnables; }
};

struct OperatingPointSelection {
  OperatingPoint best;                      // global minimum EER
  std::optional<OperatingPoint> low_depth;  // minimum EER within the learnables budget
};

inline constexpr std::uint64_t kDefaultLearnablesBudget = 2'000'000;

/// Throws SelectionError if the grid has no completed cell.
OperatingPointSelection select_operating_points(const GridResult& grid,
                                                std::uint64_t budget = kDefaultLearnablesBudget);

/// EER of the fusion of the given aligned score sets.
double fused_eer(const std::vector<TrialScores>& sets, const FusionOptions& options = {});

}  // namespace periscope
