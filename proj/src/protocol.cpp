#include "periscope/protocol.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "periscope/errors.hpp"
#include "periscope/parallel.hpp"

namespace periscope {

std::string_view to_string(TrialLabel l) { return l == TrialLabel::Genuine ? "genuine" : "impostor"; }

TrialLabel parse_label(std::string_view token) {
  if (token == "genuine") return TrialLabel::Genuine;
  if (token == "impostor") return TrialLabel::Impostor;
  throw FormatError(fmt::format("unknown trial label '{}'", token));
}

std::size_t TrialPlan::count(TrialLabel label) const {
  std::size_t n = 0;
  for (const auto& t : trials) n += t.label == label;
  return n;
}

std::size_t TrialScores::missing() const {
  std::size_t n = 0;
  for (const auto& s : scores) n += !s.has_value();
  return n;
}

TrialPlan build_trials(const std::vector<ImageRecord>& manifest) {
  std::unordered_set<std::string> seen;
  for (const auto& r : manifest) {
    if (!seen.insert(r.id).second) throw FormatError("duplicate image id in manifest: " + r.id);
  }

  // users in order of first appearance
  std::vector<std::pair<std::string, Eye>> order;
  std::map<std::pair<std::string, Eye>, std::vector<std::string>> images;
  for (const auto& r : manifest) {
    const auto key = std::make_pair(r.subject_id, r.eye);
    auto& list = images[key];
    if (list.empty()) order.push_back(key);
    list.push_back(r.id);
  }

  TrialPlan plan;
  for (const auto& key : order) {
    const auto& ids = images[key];
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = i + 1; j < ids.size(); ++j)
        plan.trials.push_back({ids[i], ids[j], TrialLabel::Genuine});
  }

  std::vector<const std::vector<std::string>*> eligible;
  for (const auto& key : order) {
    const auto& ids = images[key];
    if (ids.size() < 2) {
      plan.warnings.push_back(fmt::format("user {}/{} has {} image(s); excluded from impostor trials",
                                          key.first, key.second == Eye::Left ? "L" : "R", ids.size()));
      continue;
    }
    eligible.push_back(&ids);
  }
  for (std::size_t u = 0; u < eligible.size(); ++u)
    for (std::size_t v = 0; v < eligible.size(); ++v)
      if (u != v) plan.trials.push_back({(*eligible[u])[0], (*eligible[v])[1], TrialLabel::Impostor});
  return plan;
}

void write_plan(const std::filesystem::path& path, const TrialPlan& plan) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write plan: " + path.string());
  for (const auto& t : plan.trials) {
    nlohmann::ordered_json j;
    j["enrol"] = t.enrol;
    j["probe"] = t.probe;
    j["label"] = to_string(t.label);
    out << j.dump() << '\n';
  }
}

TrialPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plan: " + path.string());
  TrialPlan plan;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      plan.trials.push_back({j.at("enrol").get<std::string>(), j.at("probe").get<std::string>(),
                             parse_label(j.at("label").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return plan;
}

TrialScores score_trials(const TrialPlan& plan, TrialComparator& comparator, int jobs) {
  std::vector<std::string> ids;
  std::set<std::string> unique;
  for (const auto& t : plan.trials) {
    if (unique.insert(t.enrol).second) ids.push_back(t.enrol);
    if (unique.insert(t.probe).second) ids.push_back(t.probe);
  }
  comparator.prepare(ids, jobs);

  TrialScores out{comparator.name(), plan.trials, std::vector<std::optional<double>>(plan.trials.size())};
  parallel_for(plan.trials.size(), jobs, [&](std::size_t i) {
    const auto& t = plan.trials[i];
    try {
      out.scores[i] = comparator.compare(t.enrol, t.probe);
    } catch (const UndefinedScoreError&) {
      out.scores[i] = std::nullopt;
    } catch (const std::exception& e) {
      throw ComparatorError(fmt::format("trial {} ({} vs {}): {}", i, t.enrol, t.probe, e.what()));
    }
  });
  return out;
}

std::string format_score(double v) { return fmt::format("{:.10g}", v); }

void write_scores_csv(const std::filesystem::path& path, const TrialScores& scores) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write scores: " + path.string());
  out << "enrol,probe,label,score\n";
  for (std::size_t i = 0; i < scores.trials.size(); ++i) {
    const auto& t = scores.trials[i];
    out << t.enrol << ',' << t.probe << ',' << to_string(t.label) << ','
        << (scores.scores[i] ? format_score(*scores.scores[i]) : "NA") << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TrialScores read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scores: " + path.string());
  TrialScores out;
  out.comparator = path.stem().string();
  std::string line;
  if (!std::getline(in, line) || line.rfind("enrol,probe,label,score", 0) != 0) {
    throw FormatError(path.string() + ": missing header enrol,probe,label,score");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw FormatError(fmt::format("{}:{}: expected 4 fields", path.string(), lineno));
    out.trials.push_back({f[0], f[1], parse_label(f[2])});
    if (f[3] == "NA") {
      out.scores.emplace_back(std::nullopt);
    } else {
      try {
        std::size_t used = 0;
        const double v = std::stod(f[3], &used);
        if (used != f[3].size()) throw std::invalid_argument(f[3]);
        out.scores.emplace_back(v);
      } catch (const std::exception&) {
        throw FormatError(fmt::format("{}:{}: bad score '{}'", path.string(), lineno, f[3]));
      }
    }
  }
  return out;
}

}  // namespace periscope
