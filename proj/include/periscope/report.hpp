#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "periscope/eval.hpp"
#include "periscope/fusion.hpp"

namespace periscope {

// Result files written by the sweep, grid and eval subcommands and the
// report bundle assembled from them. Every writer is deterministic, so equal
// inputs produce byte-identical files.

/// Fixed six-decimal percent, or NA.
std::string format_eer(std::optional<double> eer);

std::string sweep_csv(const SweepResult& sweep);
std::string sweep_json(const SweepResult& sweep);
SweepResult parse_sweep_json(const std::string& text);

struct GridRecord {
  GridResult grid;
  std::string strategy;
  std::uint64_t budget = kDefaultLearnablesBudget;
  std::optional<OperatingPointSelection> selection;
};

std::string grid_csv(const GridResult& grid);
std::string grid_json(const GridRecord& record);
GridRecord parse_grid_json(const std::string& text);

struct ComparatorSummary {
  std::string name;
  std::optional<double> eer;
  std::size_t genuine = 0;
  std::size_t impostor = 0;
  std::size_t missing = 0;
};

ComparatorSummary summarize(const TrialScores& scores);

struct EvalSummary {
  std::string name;
  std::vector<ComparatorSummary> comparators;
  std::optional<ComparatorSummary> fused;
  std::string fusion_training;  // "same-set", "cv-<k>" or empty without fusion
  std::optional<FusionModel> model;
};

std::string eval_json(const EvalSummary& summary);
EvalSummary parse_eval_json(const std::string& text);

/// `threshold,far,frr` rows with FAR and FRR as fractions.
std::string det_csv(const std::vector<DetPoint>& points);

/// Creates parent directories; throws IoError naming the path.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Aggregates sweep_*.json, grid_*.json, eval_*.json and det_*.csv under
/// `results` into `out`: summary.json, curves/*.csv, grids/*.csv,
/// heatmaps/*.pgm and *.png, det/*.csv. Returns the written paths in order.
/// Throws DataError when `results` holds no result files.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& results,
                                                const std::filesystem::path& out);

}  // namespace periscope
