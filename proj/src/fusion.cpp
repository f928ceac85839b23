#include "periscope/fusion.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "periscope/errors.hpp"

namespace periscope {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Scores are standardized per comparator, so the penalty acts on weights that
// do not depend on the units of any input.
struct Problem {
  Eigen::MatrixXd x;  // trials x (N + 1), first column ones, then standardized scores
  Eigen::VectorXd y;  // 1 genuine, 0 impostor
  Eigen::VectorXd c;  // per-trial weight
  Eigen::VectorXd mean, sd;  // per comparator; sd is 1 for a constant input
  double l2;

  Eigen::VectorXd to_standard(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd v(raw.size());
    v(0) = raw(0) + raw.tail(raw.size() - 1).dot(mean);
    v.tail(raw.size() - 1) = raw.tail(raw.size() - 1).cwiseProduct(sd);
    return v;
  }
  Eigen::VectorXd to_raw(const Eigen::VectorXd& v) const {
    Eigen::VectorXd raw(v.size());
    raw.tail(v.size() - 1) = v.tail(v.size() - 1).cwiseQuotient(sd);
    raw(0) = v(0) - raw.tail(v.size() - 1).dot(mean);
    return raw;
  }
};

Problem make_problem(const std::vector<std::vector<double>>& scores, const std::vector<bool>& genuine,
                     const FusionOptions& options) {
  const auto n = static_cast<Eigen::Index>(genuine.size());
  const auto k = static_cast<Eigen::Index>(scores.size());
  for (const auto& row : scores) {
    if (row.size() != genuine.size()) throw TrainingError("score rows and labels differ in length");
  }
  std::size_t ng = 0;
  for (bool g : genuine) ng += g;
  const std::size_t ni = genuine.size() - ng;
  if (ng == 0 || ni == 0) throw TrainingError("fusion training needs both genuine and impostor trials");

  Problem p{Eigen::MatrixXd(n, k + 1), Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(k),
            Eigen::VectorXd(k), options.l2};
  for (Eigen::Index m = 0; m < k; ++m) {
    const auto& row = scores[static_cast<std::size_t>(m)];
    double mu = 0.0;
    for (double v : row) {
      if (!std::isfinite(v)) throw TrainingError("non-finite score in fusion input");
      mu += v;
    }
    mu /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : row) ss += (v - mu) * (v - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    p.mean(m) = mu;
    p.sd(m) = sd > 0.0 ? sd : 1.0;
  }
  const double cg = options.balance_classes ? 0.5 / static_cast<double>(ng) : 1.0 / static_cast<double>(n);
  const double ci = options.balance_classes ? 0.5 / static_cast<double>(ni) : 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    p.x(j, 0) = 1.0;
    for (Eigen::Index m = 0; m < k; ++m) {
      const double v = scores[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)];
      p.x(j, m + 1) = (v - p.mean(m)) / p.sd(m);
    }
    const bool g = genuine[static_cast<std::size_t>(j)];
    p.y(j) = g ? 1.0 : 0.0;
    p.c(j) = g ? cg : ci;
  }
  return p;
}

// `w` in standardized coordinates.
double objective(const Problem& p, const Eigen::VectorXd& w) {
  const Eigen::VectorXd f = p.x * w;
  double loss = 0.0;
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    loss += p.c(j) * (p.y(j) > 0.5 ? softplus(-f(j)) : softplus(f(j)));
  }
  return loss + 0.5 * p.l2 * w.tail(w.size() - 1).squaredNorm();
}

}  // namespace

double fusion_objective(std::span<const double> weights, const std::vector<std::vector<double>>& scores,
                        const std::vector<bool>& genuine, const FusionOptions& options) {
  const Problem p = make_problem(scores, genuine, options);
  if (weights.size() != static_cast<std::size_t>(p.x.cols())) throw TrainingError("weight count mismatch");
  Eigen::VectorXd w(p.x.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = weights[static_cast<std::size_t>(i)];
  return objective(p, p.to_standard(w));
}

FusionModel train_fusion(const std::vector<std::vector<double>>& scores, const std::vector<bool>& genuine,
                         std::vector<std::string> names, const FusionOptions& options) {
  if (scores.empty()) throw TrainingError("fusion needs at least one comparator");
  if (names.size() != scores.size()) throw TrainingError("comparator names and score rows differ");
  const Problem p = make_problem(scores, genuine, options);
  const Eigen::Index dim = p.x.cols();

  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
  double loss = objective(p, w);
  int it = 0;
  bool converged = false;
  for (; it < options.max_iterations; ++it) {
    const Eigen::VectorXd f = p.x * w;
    Eigen::VectorXd r(f.size()), h(f.size());
    for (Eigen::Index j = 0; j < f.size(); ++j) {
      const double s = sigmoid(f(j));
      r(j) = p.c(j) * (s - p.y(j));
      h(j) = p.c(j) * s * (1.0 - s);
    }
    Eigen::VectorXd grad = p.x.transpose() * r;
    grad.tail(dim - 1) += p.l2 * w.tail(dim - 1);
    if (grad.norm() < options.gradient_tol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd hess = p.x.transpose() * h.asDiagonal() * p.x;
    hess.diagonal().tail(dim - 1).array() += p.l2;
    // keeps the bias row solvable when every trial is saturated
    hess(0, 0) += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    double t = 1.0;
    Eigen::VectorXd candidate = w - step;
    double cand_loss = objective(p, candidate);
    while (cand_loss > loss && t > 1e-10) {
      t *= 0.5;
      candidate = w - t * step;
      cand_loss = objective(p, candidate);
    }
    if (cand_loss > loss) {
      // no descent along the Newton direction; fall back to a gradient step
      t = 1.0;
      do {
        candidate = w - t * grad;
        cand_loss = objective(p, candidate);
        t *= 0.5;
      } while (cand_loss > loss && t > 1e-12);
      if (cand_loss > loss) break;
    }
    w = candidate;
    loss = cand_loss;
  }

  FusionModel model;
  model.comparators = std::move(names);
  const Eigen::VectorXd raw = p.to_raw(w);
  model.weights.assign(raw.data(), raw.data() + raw.size());
  model.iterations = it;
  model.final_loss = loss;
  model.converged = converged;
  for (double v : model.weights) {
    if (!std::isfinite(v)) throw TrainingError("fusion weights diverged");
  }
  return model;
}

void check_aligned(const std::vector<TrialScores>& sets) {
  if (sets.empty()) throw TrainingError("no score sets given");
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].scores.size() != sets[s].trials.size()) {
      throw TrainingError(fmt::format("score set '{}' is malformed", sets[s].comparator));
    }
    if (sets[s].trials != sets[0].trials) {
      throw TrainingError(fmt::format("score sets '{}' and '{}' cover different trials", sets[0].comparator,
                                      sets[s].comparator));
    }
  }
}

namespace {

// Gathers complete rows restricted to `include(i)`.
template <typename Pred>
void gather(const std::vector<TrialScores>& sets, Pred include, std::vector<std::vector<double>>& rows,
            std::vector<bool>& genuine) {
  rows.assign(sets.size(), {});
  genuine.clear();
  const auto& trials = sets[0].trials;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (!include(i)) continue;
    bool complete = true;
    for (const auto& s : sets) complete = complete && s.scores[i].has_value();
    if (!complete) continue;
    for (std::size_t m = 0; m < sets.size(); ++m) rows[m].push_back(*sets[m].scores[i]);
    genuine.push_back(trials[i].label == TrialLabel::Genuine);
  }
}

}  // namespace

FusionModel train_fusion(const std::vector<TrialScores>& sets, const FusionOptions& options) {
  check_aligned(sets);
  std::vector<std::vector<double>> rows;
  std::vector<bool> genuine;
  gather(sets, [](std::size_t) { return true; }, rows, genuine);
  std::vector<std::string> names;
  for (const auto& s : sets) names.push_back(s.comparator);
  return train_fusion(rows, genuine, std::move(names), options);
}

double apply_fusion(const FusionModel& model, std::span<const double> scores) {
  if (scores.size() != model.inputs() || model.weights.size() != model.inputs() + 1) {
    throw ComparatorError(fmt::format("fusion expects {} scores, got {}", model.inputs(), scores.size()));
  }
  double f = model.weights[0];
  for (std::size_t i = 0; i < scores.size(); ++i) f += model.weights[i + 1] * scores[i];
  return f;
}

std::optional<double> apply_fusion(const FusionModel& model, std::span<const std::optional<double>> scores) {
  std::vector<double> s;
  s.reserve(scores.size());
  for (const auto& v : scores) {
    if (!v) return std::nullopt;
    s.push_back(*v);
  }
  return apply_fusion(model, s);
}

TrialScores apply_fusion(const FusionModel& model, const std::vector<TrialScores>& sets) {
  check_aligned(sets);
  if (sets.size() != model.inputs()) {
    throw ComparatorError(fmt::format("fusion model has {} inputs, got {} score sets", model.inputs(), sets.size()));
  }
  TrialScores out{"fused", sets[0].trials, {}};
  out.scores.reserve(out.trials.size());
  std::vector<std::optional<double>> row(sets.size());
  for (std::size_t i = 0; i < out.trials.size(); ++i) {
    for (std::size_t m = 0; m < sets.size(); ++m) row[m] = sets[m].scores[i];
    out.scores.push_back(apply_fusion(model, row));
  }
  return out;
}

TrialScores cross_validated_fusion(const std::vector<TrialScores>& sets, int folds, const FusionOptions& options) {
  check_aligned(sets);
  if (folds < 2) throw TrainingError("cross-validation needs at least two folds");
  const auto k = static_cast<std::size_t>(folds);
  TrialScores out{"fused-cv", sets[0].trials, std::vector<std::optional<double>>(sets[0].trials.size())};
  std::vector<std::string> names;
  for (const auto& s : sets) names.push_back(s.comparator);
  for (std::size_t fold = 0; fold < k; ++fold) {
    std::vector<std::vector<double>> rows;
    std::vector<bool> genuine;
    gather(sets, [&](std::size_t i) { return i % k != fold; }, rows, genuine);
    const FusionModel model = train_fusion(rows, genuine, names, options);
    std::vector<std::optional<double>> row(sets.size());
    for (std::size_t i = fold; i < out.trials.size(); i += k) {
      for (std::size_t m = 0; m < sets.size(); ++m) row[m] = sets[m].scores[i];
      out.scores[i] = apply_fusion(model, row);
    }
  }
  return out;
}

std::string dump_fusion_model(const FusionModel& model) {
  nlohmann::ordered_json j;
  j["comparators"] = model.comparators;
  j["weights"] = model.weights;
  j["iterations"] = model.iterations;
  j["final_loss"] = model.final_loss;
  j["converged"] = model.converged;
  return j.dump(2);
}

FusionModel parse_fusion_model(const std::string& text) {
  FusionModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.comparators = j.at("comparators").get<std::vector<std::string>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.iterations = j.value("iterations", 0);
    m.final_loss = j.value("final_loss", 0.0);
    m.converged = j.value("converged", false);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("fusion model JSON: ") + e.what());
  }
  if (m.comparators.empty() || m.weights.size() != m.comparators.size() + 1) {
    throw FormatError("fusion model needs N >= 1 comparators and N + 1 weights");
  }
  for (double v : m.weights) {
    if (!std::isfinite(v)) throw FormatError("fusion model has non-finite weights");
  }
  return m;
}

void save_fusion_model(const std::filesystem::path& path, const FusionModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write fusion model: " + path.string());
  out << dump_fusion_model(model) << '\n';
}

FusionModel load_fusion_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fusion model: " + path.string());
  return parse_fusion_model(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

}  // namespace periscope
