#include "periscope/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include <fmt/format.h>

#include "periscope/errors.hpp"
#include "periscope/feature_store.hpp"
#include "periscope/parallel.hpp"

namespace periscope {

ScoreSet to_score_set(const TrialScores& scores) {
  ScoreSet out;
  for (std::size_t i = 0; i < scores.trials.size(); ++i) {
    if (!scores.scores[i]) continue;
    (scores.trials[i].label == TrialLabel::Genuine ? out.genuine : out.impostor).push_back(*scores.scores[i]);
  }
  return out;
}

namespace {

struct Labeled {
  double score;
  bool genuine;
};

std::vector<Labeled> sorted_scores(const ScoreSet& s) {
  if (s.genuine.empty() || s.impostor.empty()) {
    throw MetricError("EER needs non-empty genuine and impostor score sets");
  }
  std::vector<Labeled> all;
  all.reserve(s.genuine.size() + s.impostor.size());
  for (double v : s.genuine) all.push_back({v, true});
  for (double v : s.impostor) all.push_back({v, false});
  for (const auto& l : all) {
    if (!std::isfinite(l.score)) throw MetricError("non-finite score");
  }
  std::sort(all.begin(), all.end(), [](const Labeled& a, const Labeled& b) { return a.score < b.score; });
  return all;
}

}  // namespace

std::vector<DetPoint> det_curve(const ScoreSet& s) {
  const auto all = sorted_scores(s);
  const double ng = static_cast<double>(s.genuine.size());
  const double ni = static_cast<double>(s.impostor.size());
  std::vector<DetPoint> out;
  std::size_t gen_below = 0, imp_below = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    const double t = all[i].score;
    out.push_back({t, (ni - static_cast<double>(imp_below)) / ni, static_cast<double>(gen_below) / ng});
    for (; i < all.size() && all[i].score == t; ++i) (all[i].genuine ? gen_below : imp_below)++;
  }
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return out;
}

double compute_eer(const ScoreSet& s) {
  const auto det = det_curve(s);
  double prev_diff = det[0].far - det[0].frr;
  if (prev_diff <= 0) return 100.0 * det[0].far;
  for (std::size_t k = 1; k < det.size(); ++k) {
    const double diff = det[k].far - det[k].frr;
    if (diff <= 0) {
      const double alpha = prev_diff / (prev_diff - diff);
      return 100.0 * (det[k - 1].far + alpha * (det[k].far - det[k - 1].far));
    }
    prev_diff = diff;
  }
  return 50.0;  // unreachable: the last point always has FAR 0 and FRR 1
}

std::optional<std::size_t> SweepResult::best_layer() const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].eer) continue;
    if (!best || *layers[i].eer < *layers[*best].eer) best = i;
  }
  return best;
}

LayerSweep layer_sweep(const NetworkCatalogEntry& network, const FeatureStore& store, const TrialPlan& plan,
                       NormStrategy strategy, int jobs) {
  LayerSweep sweep;
  sweep.result.network = network.name;
  sweep.result.strategy = strategy;
  for (const auto& layer : network.layers) {
    DeepComparator comparator(store, network.name, layer.name, strategy);
    TrialScores scores = score_trials(plan, comparator, jobs);
    LayerResult r{layer.name, layer.cum_learnables, std::nullopt, scores.missing()};
    const ScoreSet set = to_score_set(scores);
    if (!set.genuine.empty() && !set.impostor.empty()) {
      r.eer = compute_eer(set);
      sweep.scores.emplace_back(std::move(scores));
    } else {
      sweep.scores.emplace_back(std::nullopt);
    }
    sweep.result.layers.push_back(std::move(r));
  }
  return sweep;
}

GridAxis GridAxis::from_sweep(const LayerSweep& sweep) {
  GridAxis axis;
  axis.network = sweep.result.network;
  for (const auto& l : sweep.result.layers) {
    axis.layers.push_back(l.layer);
    axis.learnables.push_back(l.learnables);
    axis.solo_eer.push_back(l.eer);
  }
  axis.scores = sweep.scores;
  return axis;
}

double fused_eer(const std::vector<TrialScores>& sets, const FusionOptions& options) {
  const FusionModel model = train_fusion(sets, options);
  return compute_eer(to_score_set(apply_fusion(model, sets)));
}

GridResult fusion_grid(const GridAxis& cnn, const GridAxis& vit, int jobs, const FusionOptions& options) {
  if (cnn.scores.size() != cnn.layers.size() || vit.scores.size() != vit.layers.size()) {
    throw SelectionError("grid axis scores do not match its layer list");
  }
  GridResult grid;
  grid.cnn = cnn.network;
  grid.vit = vit.network;
  grid.cnn_layers = cnn.layers;
  grid.vit_layers = vit.layers;
  grid.cnn_learnables = cnn.learnables;
  grid.vit_learnables = vit.learnables;
  grid.cnn_solo_eer = cnn.solo_eer;
  grid.vit_solo_eer = vit.solo_eer;
  grid.cnn_solo_eer.resize(cnn.layers.size());
  grid.vit_solo_eer.resize(vit.layers.size());
  grid.eer.assign(grid.rows() * grid.cols(), std::nullopt);

  parallel_for(grid.eer.size(), jobs, [&](std::size_t cell) {
    const std::size_t r = cell / grid.cols(), c = cell % grid.cols();
    if (!cnn.scores[r] || !vit.scores[c]) return;
    try {
      grid.eer[cell] = fused_eer({*cnn.scores[r], *vit.scores[c]}, options);
    } catch (const Error&) {
      // failed cell stays unset
    }
  });
  return grid;
}

std::uint8_t heatmap_value(double eer_percent) {
  if (std::isnan(eer_percent)) return 255;
  const double v = std::clamp(eer_percent, 0.0, kHeatmapMaxEer) / kHeatmapMaxEer * 255.0;
  return static_cast<std::uint8_t>(std::lround(v));
}

std::string heatmap_pgm(const GridResult& grid) {
  std::string out = fmt::format("P5\n{} {}\n255\n", grid.cols(), grid.rows());
  for (const auto& e : grid.eer) out.push_back(static_cast<char>(e ? heatmap_value(*e) : 255));
  return out;
}

namespace {

OperatingPoint make_point(const GridResult& g, std::size_t r, std::size_t c) {
  OperatingPoint p;
  p.cnn = g.cnn;
  p.vit = g.vit;
  p.cnn_index = r;
  p.vit_index = c;
  p.cnn_layer = g.cnn_layers[r];
  p.vit_layer = g.vit_layers[c];
  p.cnn_learnables = g.cnn_learnables.at(r);
  p.vit_learnables = g.vit_learnables.at(c);
  p.cnn_eer = g.cnn_solo_eer.at(r);
  p.vit_eer = g.vit_solo_eer.at(c);
  p.fused_eer = *g.at(r, c);
  return p;
}

}  // namespace

OperatingPointSelection select_operating_points(const GridResult& grid, std::uint64_t budget) {
  std::optional<std::size_t> best, low;
  auto better = [&](std::size_t a, std::optional<std::size_t> b) {
    if (!b) return true;
    const std::size_t ra = a / grid.cols(), ca = a % grid.cols();
    const std::size_t rb = *b / grid.cols(), cb = *b % grid.cols();
    const auto la = grid.cnn_learnables[ra] + grid.vit_learnables[ca];
    const auto lb = grid.cnn_learnables[rb] + grid.vit_learnables[cb];
    return std::tie(*grid.eer[a], la) < std::tie(*grid.eer[*b], lb);
  };
  for (std::size_t cell = 0; cell < grid.eer.size(); ++cell) {
    if (!grid.eer[cell]) continue;
    if (better(cell, best)) best = cell;
    const std::size_t r = cell / grid.cols(), c = cell % grid.cols();
    if (grid.cnn_learnables[r] + grid.vit_learnables[c] <= budget && better(cell, low)) low = cell;
  }
  if (!best) throw SelectionError(fmt::format("grid {} x {} has no completed cell", grid.cnn, grid.vit));
  OperatingPointSelection sel{make_point(grid, *best / grid.cols(), *best % grid.cols()), std::nullopt};
  if (low) sel.low_depth = make_point(grid, *low / grid.cols(), *low % grid.cols());
  return sel;
}

}  // namespace periscope
