#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "periscope/protocol.hpp"

namespace periscope {

// Affine fusion f = a0 + a1*s1 + ... + aN*sN.
struct FusionModel {
  std::vector<std::string> comparators;  // N names
  std::vector<double> weights;           // N + 1 values, bias first
  int iterations = 0;
  double final_loss = 0.0;
  bool converged = false;

  std::size_t inputs() const { return comparators.size(); }
};

struct FusionOptions {
  double l2 = 1e-6;          // penalty on a_i * sd_i, i >= 1 (the bias is not penalized)
  double gradient_tol = 1e-8;
  int max_iterations = 1000;
  bool balance_classes = true;  // each class carries half of the total weight
};

/// Prior-balanced, L2-penalized logistic loss of `weights` on the data.
/// `scores` holds one row per comparator, `genuine` one flag per trial.
/// The penalty is 0.5 * l2 * sum (a_i * sd_i)^2 with sd_i the population
/// standard deviation of row i (1 if the row is constant), which makes the
/// minimizer's ranking invariant to a positive affine map of any input.
double fusion_objective(std::span<const double> weights, const std::vector<std::vector<double>>& scores,
                        const std::vector<bool>& genuine, const FusionOptions& options = {});

/// Newton iterations (iteratively reweighted least squares) from all-zero
/// weights. Throws TrainingError if a class is absent.
FusionModel train_fusion(const std::vector<std::vector<double>>& scores, const std::vector<bool>& genuine,
                         std::vector<std::string> names, const FusionOptions& options = {});

/// Trains on aligned score sets, skipping trials with any missing score.
/// Throws TrainingError if the sets do not cover identical trials.
FusionModel train_fusion(const std::vector<TrialScores>& sets, const FusionOptions& options = {});

double apply_fusion(const FusionModel& model, std::span<const double> scores);
std::optional<double> apply_fusion(const FusionModel& model, std::span<const std::optional<double>> scores);
TrialScores apply_fusion(const FusionModel& model, const std::vector<TrialScores>& sets);

/// K-fold variant: every trial is fused by a model that did not see it
/// (trial i belongs to fold i mod K).
TrialScores cross_validated_fusion(const std::vector<TrialScores>& sets, int folds,
                                   const FusionOptions& options = {});

std::string dump_fusion_model(const FusionModel& model);
FusionModel parse_fusion_model(const std::string& json_text);
void save_fusion_model(const std::filesystem::path& path, const FusionModel& model);
FusionModel load_fusion_model(const std::filesystem::path& path);

/// Throws TrainingError unless every set has the same trials in the same order.
void check_aligned(const std::vector<TrialScores>& sets);

}  // namespace periscope
