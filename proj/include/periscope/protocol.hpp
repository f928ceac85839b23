#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "periscope/preprocess.hpp"

namespace periscope {

enum class TrialLabel { Genuine, Impostor };

std::string_view to_string(TrialLabel l);
TrialLabel parse_label(std::string_view token);

struct Trial {
  std::string enrol;
  std::string probe;
  TrialLabel label = TrialLabel::Genuine;
  friend bool operator==(const Trial&, const Trial&) = default;
};

// Genuine and impostor trials over users keyed by (subject, eye).
struct TrialPlan {
  std::vector<Trial> trials;
  std::vector<std::string> warnings;

  std::size_t count(TrialLabel label) const;
};

/// Genuine: every unordered same-user pair in manifest order. Impostor: the
/// first image of each user against the second image of every other user.
/// Users with fewer than two images are left out of the impostor set with a
/// warning. Throws FormatError on duplicate image ids.
TrialPlan build_trials(const std::vector<ImageRecord>& manifest);

void write_plan(const std::filesystem::path& path, const TrialPlan& plan);
TrialPlan read_plan(const std::filesystem::path& path);

// One score per trial; nullopt marks a missing comparison.
struct TrialScores {
  std::string comparator;
  std::vector<Trial> trials;
  std::vector<std::optional<double>> scores;

  std::size_t missing() const;
};

// Pairwise comparator over image ids, polarity "higher = more genuine".
class TrialComparator {
 public:
  virtual ~TrialComparator() = default;
  virtual std::string name() const = 0;
  /// Loads and caches features for these ids; absent features are remembered as missing.
  virtual void prepare(const std::vector<std::string>& ids, int jobs) = 0;
  /// nullopt if either feature is missing or the score is undefined.
  virtual std::optional<double> compare(const std::string& enrol, const std::string& probe) const = 0;
};

/// Scores every trial. Missing features produce missing entries; any other
/// comparator failure aborts with the trial index and ids in the message.
TrialScores score_trials(const TrialPlan& plan, TrialComparator& comparator, int jobs = 1);

/// CSV with header `enrol,probe,label,score`; missing scores are written as NA.
void write_scores_csv(const std::filesystem::path& path, const TrialScores& scores);
TrialScores read_scores_csv(const std::filesystem::path& path);
std::string format_score(double v);

}  // namespace periscope
