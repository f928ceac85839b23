// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "oracles.hpp"
#include "periscope/cli.hpp"
#include "periscope/eval.hpp"
#include "periscope/fusion.hpp"
#include "periscope/handcrafted.hpp"
#include "periscope/normalize.hpp"
#include "periscope/protocol.hpp"
#include "periscope/report.hpp"
#include "periscope/synthetic.hpp"

using namespace periscope;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "ok: " : "FAILED: ") + what);
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome normalization() {
  Outcome o;
  const auto t0 = Clock::now();
  struct Shape {
    bool cnn;
    std::uint32_t a, c;
  };
  const std::vector<std::pair<std::string, std::vector<Shape>>> classes = {
      {"cnn", {{true, 7, 512}, {true, 14, 256}, {true, 28, 128}}},
      {"vit", {{false, 197, 192}, {false, 197, 384}, {false, 577, 384}}},
  };
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  for (const auto& [name, shapes] : classes) {
    double worst_norm = 0.0, worst_scale = 0.0;
    std::size_t slices = 0;
    std::map<std::size_t, std::vector<FeatureVector>> previous;  // per shape, one per strategy
    for (int i = 0; i < 1000; ++i) {
      const std::size_t si = static_cast<std::size_t>(i) % shapes.size();
      const Shape& sh = shapes[si];
      const std::size_t n = sh.cnn ? static_cast<std::size_t>(sh.a) * sh.a * sh.c : static_cast<std::size_t>(sh.a) * sh.c;
      std::vector<float> v(n), scaled(n);
      const float k = static_cast<float>(std::pow(10.0, log_scale(rng)));
      for (std::size_t j = 0; j < n; ++j) {
        v[j] = u(rng);
        scaled[j] = v[j] * k;
      }
      const auto t = sh.cnn ? ActivationTensor::cnn(sh.a, sh.c, v) : ActivationTensor::vit(sh.a, sh.c, v);
      const auto ts = sh.cnn ? ActivationTensor::cnn(sh.a, sh.c, scaled) : ActivationTensor::vit(sh.a, sh.c, scaled);
      const auto prev = previous.find(si);
      std::vector<FeatureVector> current;
      for (std::size_t k = 0; k < std::size(kAllStrategies); ++k) {
        const auto s = kAllStrategies[k];
        const auto& f = current.emplace_back(normalize(t, s));
        for (std::size_t r = 0; r < f.slices(); ++r) {
          double ss = 0.0;
          for (float x : f.slice(r)) ss += static_cast<double>(x) * x;
          worst_norm = std::max(worst_norm, std::abs(std::sqrt(ss) - 1.0));
          ++slices;
        }
        if (prev != previous.end()) {
          const auto& g = prev->second[k];
          const double d = std::abs(score(f, g) - score(normalize(ts, s), g));
          worst_scale = std::max(worst_scale, d);
        }
      }
      previous.insert_or_assign(si, std::move(current));
    }
    o.require(worst_norm <= 1e-5, fmt::format("{}: max |slice norm - 1| = {:.2e} over {} slices", name, worst_norm, slices));
    o.require(worst_scale <= 1e-5, fmt::format("{}: max score change under rescaling = {:.2e}", name, worst_scale));
  }
  const double t = seconds_since(t0);
  o.require(t < 10.0, fmt::format("runtime {:.2f} s < 10 s", t));
  return o;
}

// ---------------------------------------------------------------------------

Outcome eer() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n01;
  ScoreSet gauss, same;
  for (int i = 0; i < 100000; ++i) {
    gauss.genuine.push_back(1.0 + n01(rng));
    gauss.impostor.push_back(-1.0 + n01(rng));
    same.genuine.push_back(n01(rng));
    same.impostor.push_back(n01(rng));
  }
  const double expected = 100.0 * oracle::phi(-1.0);
  const double e1 = compute_eer(gauss);
  o.require(std::abs(e1 - expected) <= 0.4, fmt::format("N(+-1,1): EER {:.4f}% vs {:.4f}% +- 0.4", e1, expected));

  ScoreSet sep;
  std::uniform_real_distribution<double> hi(1.0, 2.0), lo(-2.0, -1.0);
  for (int i = 0; i < 1000; ++i) {
    sep.genuine.push_back(hi(rng));
    sep.impostor.push_back(lo(rng));
  }
  const double e2 = compute_eer(sep);
  o.require(e2 == 0.0, fmt::format("perfect separation: EER {}%", e2));

  const double e3 = compute_eer(same);
  o.require(std::abs(e3 - 50.0) <= 1.0, fmt::format("identical distributions: EER {:.4f}% vs 50 +- 1", e3));
  const double t = seconds_since(t0);
  o.require(t < 5.0, fmt::format("runtime {:.2f} s < 5 s", t));
  return o;
}

// ---------------------------------------------------------------------------

KeypointSet random_keypoints(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<float> pos(20, 180), ang(-std::numbers::pi_v<float>, std::numbers::pi_v<float>);
  std::uniform_real_distribution<float> val(0, 1);
  KeypointSet s;
  for (int i = 0; i < n; ++i) {
    Keypoint k;
    k.x = pos(rng);
    k.y = pos(rng);
    k.scale = 2.0f;
    k.orientation = ang(rng);
    for (auto& v : k.descriptor) v = val(rng);
    s.points.push_back(k);
  }
  return s;
}

Outcome handcrafted() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  int lbp_mismatch = 0;
  double hog_worst = 0.0, chi_worst = 0.0;
  std::vector<BlockHistogramDescriptor> lbps, hogs;
  for (int i = 0; i < 10; ++i) {
    const cv::Mat img = oracle::random_image(rng, 64, 64);
    for (bool l2 : {false, true}) {
      LbpOptions lo;
      lo.normalize = l2;
      const auto d = lbp_descriptor(img, lo);
      const auto ref = oracle::lbp_histograms(img, lo.layout.grid_rows, lo.layout.grid_cols, l2);
      for (std::size_t k = 0; k < ref.size(); ++k) lbp_mismatch += d.data[k] != static_cast<float>(ref[k]);
      if (l2) lbps.push_back(d);

      HogOptions ho;
      ho.normalize = l2;
      const auto h = hog_descriptor(img, ho);
      const auto href = oracle::hog_histograms(img, ho.layout.grid_rows, ho.layout.grid_cols, ho.bins, l2);
      for (std::size_t k = 0; k < href.size(); ++k) {
        const double scale = l2 ? 1.0 : std::max(1.0, std::abs(href[k]));
        hog_worst = std::max(hog_worst, std::abs(h.data[k] - href[k]) / scale);
      }
      if (l2) hogs.push_back(h);
    }
  }
  for (std::size_t i = 0; i + 1 < lbps.size(); ++i) {
    for (const auto* set : {&lbps, &hogs}) {
      const auto& a = (*set)[i];
      const auto& b = (*set)[i + 1];
      chi_worst = std::max(chi_worst, std::abs(chi2_distance(a, b) - static_cast<double>(oracle::chi2(a.data, b.data))));
    }
  }
  o.require(lbp_mismatch == 0, fmt::format("LBP: {} values differ from the oracle (raw and L2, 10 images)", lbp_mismatch));
  o.require(hog_worst <= 1e-6, fmt::format("HOG: max deviation {:.2e} <= 1e-6", hog_worst));
  o.require(chi_worst <= 1e-6, fmt::format("chi-square: max deviation {:.2e} <= 1e-6", chi_worst));

  // b = a translated by (10, 0) plus 5 outlier points with random orientations
  const auto a = random_keypoints(rng, 40);
  KeypointSet b = a;
  for (auto& k : b.points) {
    k.x += 10.0f;
    for (auto& v : k.descriptor) v += 0.001f;
  }
  const auto outliers = random_keypoints(rng, 5);
  b.points.insert(b.points.end(), outliers.points.begin(), outliers.points.end());
  const double score = sift_match_score(a, b);
  o.require(score == 1.0, fmt::format("SIFT: score {} on 40 correspondences + 5 outliers", score));

  // the outliers paired with real points are removed by the geometric filter
  auto candidates = match_keypoints(a, b);
  std::uniform_real_distribution<float> turn(std::numbers::pi_v<float> / 3, 5 * std::numbers::pi_v<float> / 3);
  KeypointSet b2 = b;
  for (std::size_t j = 0; j < 5; ++j) {
    auto& out = b2.points[40 + j];
    out.x = a.points[j].x + 40.0f + 10.0f * static_cast<float>(j);
    out.y = a.points[j].y - 30.0f;
    out.orientation = a.points[j].orientation + turn(rng);
    candidates.push_back({j, 40 + j, 0.0});
  }
  const auto kept = geometric_filter(a, b2, candidates);
  const bool only_inliers = std::all_of(kept.begin(), kept.end(), [](const KeypointMatch& m) { return m.b < 40; });
  o.require(kept.size() == 40 && only_inliers,
            fmt::format("SIFT: geometric filter keeps {} of {} candidates, outliers removed: {}", kept.size(),
                        candidates.size(), only_inliers));
  const double t = seconds_since(t0);
  o.require(t < 30.0, fmt::format("runtime {:.2f} s < 30 s", t));
  return o;
}

// ---------------------------------------------------------------------------

Outcome protocol() {
  Outcome o;
  auto manifest = [](const std::vector<int>& counts) {
    std::vector<ImageRecord> m;
    for (std::size_t u = 0; u < counts.size(); ++u)
      for (int k = 0; k < counts[u]; ++k) {
        ImageRecord r;
        r.subject_id = fmt::format("{}", u);
        r.id = fmt::format("u{}_{}", u, k);
        m.push_back(r);
      }
    return m;
  };
  for (std::uint64_t users : {2, 3, 10}) {
    for (int n : {2, 5, 10}) {
      const auto plan = build_trials(manifest(std::vector<int>(users, n)));
      const auto g = plan.count(TrialLabel::Genuine), i = plan.count(TrialLabel::Impostor);
      const auto eg = users * oracle::pairs(static_cast<std::uint64_t>(n)), ei = users * (users - 1);
      o.require(g == eg && i == ei, fmt::format("U={} n={}: genuine {} (want {}), impostor {} (want {})", users, n, g,
                                                eg, i, ei));
    }
  }
  const std::vector<int> mixed{2, 5, 10, 3};
  std::uint64_t eg = 0;
  for (int n : mixed) eg += oracle::pairs(static_cast<std::uint64_t>(n));
  const auto plan = build_trials(manifest(mixed));
  o.require(plan.count(TrialLabel::Genuine) == eg && plan.count(TrialLabel::Impostor) == 12,
            fmt::format("mixed n={{2,5,10,3}}: genuine {} (want {}), impostor {} (want 12)",
                        plan.count(TrialLabel::Genuine), eg, plan.count(TrialLabel::Impostor)));
  return o;
}

// ---------------------------------------------------------------------------

TrialScores as_trials(const std::string& name, const std::vector<double>& s, const std::vector<bool>& genuine) {
  TrialScores t;
  t.comparator = name;
  for (std::size_t j = 0; j < s.size(); ++j) {
    t.trials.push_back({fmt::format("e{}", j), fmt::format("p{}", j), genuine[j] ? TrialLabel::Genuine : TrialLabel::Impostor});
    t.scores.push_back(s[j]);
  }
  return t;
}

Outcome fusion() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  std::normal_distribution<double> n01;
  std::vector<double> informative, noise;
  std::vector<bool> genuine;
  for (int j = 0; j < 10000; ++j) {
    const bool g = j % 2 == 0;
    genuine.push_back(g);
    informative.push_back((g ? 1.0 : -1.0) + n01(rng));
    noise.push_back(n01(rng));
  }
  const std::vector<std::vector<double>> rows{informative, noise};
  const auto model = train_fusion(rows, genuine, {"informative", "noise"});
  const auto a = as_trials("informative", informative, genuine), b = as_trials("noise", noise, genuine);
  const auto fused = apply_fusion(model, std::vector<TrialScores>{a, b});
  const double e_inf = compute_eer(to_score_set(a));
  const double e_fused = compute_eer(to_score_set(fused));
  o.require(e_fused <= e_inf + 0.5, fmt::format("fused EER {:.4f}% <= informative {:.4f}% + 0.5", e_fused, e_inf));

  const std::vector<double> mean_rule{0.0, 0.5, 0.5};
  const double mean_loss = fusion_objective(mean_rule, rows, genuine);
  o.require(model.final_loss <= mean_loss,
            fmt::format("trained loss {:.6f} <= mean-rule loss {:.6f}", model.final_loss, mean_loss));

  bool identical = true;
  const auto det = det_curve(to_score_set(fused));
  for (const auto& [index, scale, shift] : {std::tuple{0, 3.7, -12.0}, std::tuple{1, 0.02, 5.0}}) {
    auto moved = rows;
    for (auto& v : moved[static_cast<std::size_t>(index)]) v = scale * v + shift;
    const auto m2 = train_fusion(moved, genuine, {"informative", "noise"});
    const auto f2 = apply_fusion(m2, std::vector<TrialScores>{as_trials("informative", moved[0], genuine),
                                                              as_trials("noise", moved[1], genuine)});
    const auto det2 = det_curve(to_score_set(f2));
    bool same = det.size() == det2.size();
    for (std::size_t k = 0; same && k < det.size(); ++k) same = det[k].far == det2[k].far && det[k].frr == det2[k].frr;
    o.require(same, fmt::format("input {} mapped to {}*s{:+}: fused DET identical ({} vs {} points)", index, scale,
                                shift, det.size(), det2.size()));
    identical = identical && same;
  }
  const double t = seconds_since(t0);
  o.require(t < 10.0, fmt::format("runtime {:.2f} s < 10 s", t));
  return o;
}

// ---------------------------------------------------------------------------

Outcome grid() {
  Outcome o;
  std::mt19937_64 rng(606);
  std::normal_distribution<double> n01;
  GridAxis axis;
  axis.network = "toy";
  std::vector<bool> genuine;
  for (int j = 0; j < 2000; ++j) genuine.push_back(j % 4 == 0);
  for (int l = 0; l < 5; ++l) {
    std::vector<double> s;
    for (bool g : genuine) s.push_back((g ? 0.4 * (l + 1) : 0.0) + n01(rng));
    auto t = as_trials(fmt::format("l{}", l), s, genuine);
    axis.layers.push_back(fmt::format("l{}", l));
    axis.learnables.push_back(static_cast<std::uint64_t>(1000 * (l + 1)));
    axis.solo_eer.push_back(compute_eer(to_score_set(t)));
    axis.scores.push_back(std::move(t));
  }
  const auto g = fusion_grid(axis, axis);
  double worst = 0.0;
  bool complete = true;
  for (std::size_t i = 0; i < 5; ++i) {
    if (!g.at(i, i)) {
      complete = false;
      continue;
    }
    worst = std::max(worst, std::abs(*g.at(i, i) - *axis.solo_eer[i]));
  }
  o.require(complete && worst <= 0.1,
            fmt::format("5x5 self-fusion diagonal: max |fused - solo| = {:.4f} EER points <= 0.1", worst));
  o.require(heatmap_value(0.0) == 0 && heatmap_value(25.0) == 255 && heatmap_value(37.5) == 255 &&
                heatmap_value(100.0) == 255,
            fmt::format("heatmap: 0% -> {}, 25% -> {}, 37.5% -> {}, 100% -> {}", heatmap_value(0.0),
                        heatmap_value(25.0), heatmap_value(37.5), heatmap_value(100.0)));
  const std::string pgm = heatmap_pgm(g);
  bool cells_match = pgm.size() == std::string("P5\n5 5\n255\n").size() + 25;
  for (std::size_t c = 0; cells_match && c < 25; ++c) {
    cells_match = static_cast<std::uint8_t>(pgm[pgm.size() - 25 + c]) == heatmap_value(*g.eer[c]);
  }
  o.require(cells_match, "heatmap pixels follow the cell EERs");
  return o;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_text(e.path());
  }
  return files;
}

std::optional<std::string> pipeline(const fs::path& raw, const fs::path& root, int jobs) {
  const std::string j = std::to_string(jobs);
  const std::string cache = (root / "cache").string();
  const std::string prep = (root / "prep").string();
  const std::vector<std::vector<std::string>> steps = {
      {"prep", "--manifest", (raw / "manifest.jsonl").string(), "--out", prep, "--side", "128", "-j", j},
      {"features", "--manifest", prep + "/manifest.jsonl", "--cache", cache, "-j", j},
      {"score", "--plan", prep + "/plan.jsonl", "--comparator", "lbp", "--cache", cache, "--out",
       (root / "scores" / "lbp.csv").string(), "-j", j},
      {"score", "--plan", prep + "/plan.jsonl", "--comparator", "hog", "--cache", cache, "--out",
       (root / "scores" / "hog.csv").string(), "-j", j},
      {"score", "--plan", prep + "/plan.jsonl", "--comparator", "sift", "--cache", cache, "--out",
       (root / "scores" / "sift.csv").string(), "-j", j},
      {"fuse-train", "--scores", (root / "scores" / "lbp.csv").string(), (root / "scores" / "hog.csv").string(),
       (root / "scores" / "sift.csv").string(), "--out", (root / "fusion.json").string()},
      {"fuse-apply", "--model", (root / "fusion.json").string(), "--scores", (root / "scores" / "lbp.csv").string(),
       (root / "scores" / "hog.csv").string(), (root / "scores" / "sift.csv").string(), "--out",
       (root / "scores" / "fused.csv").string()},
      {"eval", "--scores", (root / "scores" / "lbp.csv").string(), (root / "scores" / "hog.csv").string(),
       (root / "scores" / "sift.csv").string(), "--fuse", "--name", "handcrafted", "--results",
       (root / "results").string()},
      {"report", "--results", (root / "results").string(), "--out", (root / "report").string()},
  };
  for (const auto& args : steps) {
    std::ostringstream out, err;
    if (run(args, out, err) != 0) return fmt::format("'{}' failed: {}", args[0], err.str());
  }
  return std::nullopt;
}

Outcome end_to_end() {
  Outcome o;
  const auto root = oracle::temp_dir("acceptance-e2e");
  SyntheticOptions so;
  so.subjects = 10;  // 20 users (left and right eyes)
  so.images_per_eye = 4;
  const auto records = write_synthetic_dataset(root / "raw", so);
  o.require(records.size() == 80, fmt::format("synthetic dataset: {} images of 20 users", records.size()));

  const auto err_a = pipeline(root / "raw", root / "run-a", 1);
  const auto err_b = pipeline(root / "raw", root / "run-b", 4);
  o.require(!err_a && !err_b, err_a ? *err_a : err_b ? *err_b : "prep -> features -> score -> fuse -> report ran twice");
  if (err_a || err_b) return o;

  const auto summary = parse_eval_json(read_text(root / "run-a" / "results" / "eval_handcrafted.json"));
  double worst = -1.0;
  std::string detail;
  for (const auto& c : summary.comparators) {
    if (c.eer) worst = std::max(worst, *c.eer);
    detail += fmt::format("{} {}%, ", c.name, format_eer(c.eer));
  }
  const bool fused_ok = summary.fused && summary.fused->eer && *summary.fused->eer < worst;
  o.require(fused_ok, fmt::format("{}fused {}% < worst {:.6f}%", detail,
                                  summary.fused ? format_eer(summary.fused->eer) : "NA", worst));

  const auto a = snapshot(root / "run-a"), b = snapshot(root / "run-b");
  std::size_t differing = 0;
  for (const auto& [path, bytes] : a) {
    const auto it = b.find(path);
    differing += it == b.end() || it->second != bytes;
  }
  differing += b.size() > a.size() ? b.size() - a.size() : 0;
  o.require(differing == 0 && !a.empty(),
            fmt::format("{} output files byte-identical across reruns (-j 1 vs -j 4); {} differ", a.size(), differing));
  fs::remove_all(root);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"normalization invariants", normalization},
      {"EER calibration", eer},
      {"handcrafted descriptor oracles", handcrafted},
      {"trial protocol counts", protocol},
      {"score fusion", fusion},
      {"fusion grid and heatmap", grid},
      {"end-to-end synthetic pipeline", end_to_end},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double t = seconds_since(t0);
    std::cout << fmt::format("[{}] {} ({:.2f} s)\n", o.pass ? "PASS" : "FAIL", name, t);
    for (const auto& n : o.notes) std::cout << "       " << n << '\n';
    failures += !o.pass;
  }
  std::cout << fmt::format("{} of {} acceptance criteria passed\n", criteria.size() - static_cast<std::size_t>(failures),
                           criteria.size());
  return failures ? 1 : 0;
}
