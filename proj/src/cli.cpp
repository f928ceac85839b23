#include "periscope/cli.hpp"

#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "periscope/errors.hpp"
#include "periscope/eval.hpp"
#include "periscope/feature_store.hpp"
#include "periscope/fusion.hpp"
#include "periscope/handcrafted.hpp"
#include "periscope/inference.hpp"
#include "periscope/parallel.hpp"
#include "periscope/preprocess.hpp"
#include "periscope/protocol.hpp"
#include "periscope/report.hpp"

namespace periscope {

namespace fs = std::filesystem;

namespace {

struct Globals {
  int jobs = 1;
  std::uint64_t seed = 42;
  std::string cache;
  std::string models_dir = "models";

  FeatureStore store() const {
    return cache.empty() ? FeatureStore::from_environment("periscope-cache") : FeatureStore(cache);
  }
};

std::vector<std::string> strategy_tokens() {
  std::vector<std::string> out;
  for (auto s : kAllStrategies) out.emplace_back(to_string(s));
  return out;
}

fs::path image_path(const ImageRecord& rec, const fs::path& manifest) {
  fs::path p = rec.path;
  return p.is_relative() ? manifest.parent_path() / p : p;
}

// A model argument is a file path or a name under the models directory, and
// may point at either a ModelGraph spec or a bare catalog.
fs::path resolve_model_path(const std::string& arg, const Globals& g) {
  if (fs::exists(arg)) return arg;
  const fs::path named = fs::path(g.models_dir) / (arg + ".json");
  if (fs::exists(named)) return named;
  throw LookupError(fmt::format("no model spec or catalog '{}' (also tried {})", arg, named.string()));
}

NetworkCatalogEntry resolve_catalog(const std::string& arg, const Globals& g) {
  const fs::path path = resolve_model_path(arg, g);
  const std::string text = read_text(path);
  bool is_catalog = false;
  try {
    is_catalog = nlohmann::json::parse(text).contains("layers");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (is_catalog) return load_catalog(path);
  return load_catalog(load_model_spec(path).catalog);
}

std::vector<TrialScores> read_score_files(const std::vector<std::string>& paths) {
  std::vector<TrialScores> sets;
  for (const auto& p : paths) sets.push_back(read_scores_csv(p));
  return sets;
}

std::string sanitize_stem(const std::string& s) { return sanitize_component(s); }

void write_sweep(const fs::path& results, const SweepResult& sweep, std::vector<fs::path>& written) {
  const std::string stem = sanitize_stem(fmt::format("{}_{}", sweep.network, to_string(sweep.strategy)));
  const fs::path json = results / ("sweep_" + stem + ".json");
  const fs::path csv = results / ("sweep_" + stem + ".csv");
  write_text(json, sweep_json(sweep));
  write_text(csv, sweep_csv(sweep));
  written.push_back(json);
  written.push_back(csv);
}

void print_written(std::ostream& out, const std::vector<fs::path>& written) {
  for (const auto& p : written) out << "wrote " << p.string() << '\n';
}

// ---------------------------------------------------------------------------

struct PrepArgs {
  std::string manifest, out, network;
  std::optional<int> side;
  bool gray = false;
};

int cmd_prep(const PrepArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto records = read_manifest(a.manifest);
  PrepOptions opt{a.out, a.side, !a.gray, g.jobs};
  if (!a.network.empty()) {
    const auto catalog = resolve_catalog(a.network, g);
    if (!catalog.input_side) throw CatalogError(catalog.name + " catalog has no input_side");
    opt.side = static_cast<int>(*catalog.input_side);
  }
  const auto prepared = prepare_dataset(records, fs::path(a.manifest).parent_path(), opt);
  write_manifest(fs::path(a.out) / "manifest.jsonl", prepared);
  const TrialPlan plan = build_trials(prepared);
  write_plan(fs::path(a.out) / "plan.jsonl", plan);
  for (const auto& w : plan.warnings) err << "warning: " << w << '\n';
  out << fmt::format("prepared {} images; {} genuine and {} impostor trials\n", prepared.size(),
                     plan.count(TrialLabel::Genuine), plan.count(TrialLabel::Impostor));
  return 0;
}

struct ExtractArgs {
  std::string model, manifest, parity, parity_out;
  std::vector<std::string> taps;
};

int cmd_extract(const ExtractArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const ModelGraph model = ModelGraph::load(resolve_model_path(a.model, g));
  const auto records = read_manifest(a.manifest);
  const FeatureStore store = g.store();
  const std::vector<std::string> taps = a.taps.empty() ? model.spec().taps : a.taps;
  const int side = model.spec().input.side;
  std::vector<std::optional<ParityReport>> parity(records.size());
  std::optional<FeatureStore> reference;
  if (!a.parity.empty()) reference.emplace(a.parity);

  parallel_for(records.size(), g.jobs, [&](std::size_t i) {
    const auto& rec = records[i];
    cv::Mat img = read_image(image_path(rec, a.manifest), model.spec().input.channels == 3);
    if (img.rows != side || img.cols != side) img = resize_square(img, side);
    std::map<std::string, ActivationTensor> acts;
    try {
      acts = model.extract(img, taps);
    } catch (const Error& e) {
      throw ExtractionError(fmt::format("image '{}': {}", rec.id, e.what()));
    }
    for (const auto& [tap, t] : acts) store.write_activation(model.name(), tap, rec.id, t);
    if (reference) {
      std::map<std::string, ActivationTensor> dumped;
      for (const auto& tap : taps) {
        if (auto t = reference->read_activation(model.name(), tap, rec.id)) dumped.emplace(tap, std::move(*t));
      }
      parity[i] = verify_parity(acts, dumped);
    }
  });
  out << fmt::format("extracted {} taps for {} images of {}\n", taps.size(), records.size(), model.name());

  if (!reference) return 0;
  nlohmann::ordered_json report;
  bool pass = true;
  report["images"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto entry = nlohmann::ordered_json::parse(dump_parity_report(*parity[i]));
    entry["id"] = records[i].id;
    pass = pass && parity[i]->pass();
    report["images"].push_back(std::move(entry));
  }
  report["pass"] = pass;
  if (a.parity_out.empty()) {
    out << report.dump(2) << '\n';
  } else {
    write_text(a.parity_out, report.dump(2) + "\n");
  }
  if (!pass) {
    err << "periscope: error: parity below " << kParityThreshold << " for at least one tap\n";
    return 1;
  }
  return 0;
}

struct FeaturesArgs {
  std::string manifest;
  std::vector<std::string> kinds{"lbp", "hog", "sift"};
  int grid_rows = 8, grid_cols = 8, hog_bins = 9;
  std::optional<int> cell_pixels;
};

int cmd_features(const FeaturesArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  const auto records = read_manifest(a.manifest);
  const FeatureStore store = g.store();
  RegionLayout layout{a.grid_rows, a.grid_cols, a.cell_pixels};
  const LbpOptions lbp{layout, true};
  const HogOptions hog{layout, a.hog_bins, true};
  auto wants = [&](const char* k) { return std::find(a.kinds.begin(), a.kinds.end(), k) != a.kinds.end(); };
  const bool do_lbp = wants("lbp"), do_hog = wants("hog"), do_sift = wants("sift");
  parallel_for(records.size(), g.jobs, [&](std::size_t i) {
    const auto& rec = records[i];
    const cv::Mat gray = read_image(image_path(rec, a.manifest), false);
    try {
      if (do_lbp) store.write_descriptor(rec.id, lbp_descriptor(gray, lbp));
      if (do_hog) store.write_descriptor(rec.id, hog_descriptor(gray, hog));
      if (do_sift) store.write_keypoints(rec.id, detect_sift(gray));
    } catch (const Error& e) {
      throw DataError(fmt::format("image '{}': {}", rec.id, e.what()));
    }
  });
  out << fmt::format("computed {} descriptor kinds for {} images\n", a.kinds.size(), records.size());
  return 0;
}

struct ScoreArgs {
  std::string plan, manifest, comparator, network, layer, strategy = "per-channel", out;
};

int cmd_score(const ScoreArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  if (a.plan.empty() == a.manifest.empty()) throw CLI::ValidationError("score", "give exactly one of --plan or --manifest");
  if (a.comparator == "deep" && (a.network.empty() || a.layer.empty())) {
    throw CLI::ValidationError("score", "--comparator deep needs --network and --layer");
  }
  const TrialPlan plan = a.plan.empty() ? build_trials(read_manifest(a.manifest)) : read_plan(a.plan);
  const FeatureStore store = g.store();
  std::unique_ptr<TrialComparator> cmp;
  if (a.comparator == "lbp") {
    cmp = std::make_unique<HistogramComparator>(store, HistogramKind::Lbp);
  } else if (a.comparator == "hog") {
    cmp = std::make_unique<HistogramComparator>(store, HistogramKind::Hog);
  } else if (a.comparator == "sift") {
    cmp = std::make_unique<KeypointComparator>(store);
  } else {
    cmp = std::make_unique<DeepComparator>(store, resolve_catalog(a.network, g).name, a.layer,
                                           parse_strategy(a.strategy));
  }
  TrialScores scores = score_trials(plan, *cmp, g.jobs);
  write_scores_csv(a.out, scores);
  if (scores.missing()) err << fmt::format("warning: {} of {} trials have no score\n", scores.missing(), scores.trials.size());
  out << fmt::format("scored {} trials with {}\n", scores.trials.size(), cmp->name());
  return 0;
}

struct FuseTrainArgs {
  std::vector<std::string> scores;
  std::string out;
  double l2 = 1e-6;
  int max_iterations = 1000;
};

int cmd_fuse_train(const FuseTrainArgs& a, const Globals&, std::ostream& out, std::ostream& err) {
  FusionOptions opt;
  opt.l2 = a.l2;
  opt.max_iterations = a.max_iterations;
  const FusionModel model = train_fusion(read_score_files(a.scores), opt);
  save_fusion_model(a.out, model);
  if (!model.converged) err << fmt::format("warning: fusion stopped after {} iterations\n", model.iterations);
  out << fmt::format("weights {:.6g}", model.weights[0]);
  for (std::size_t i = 0; i < model.inputs(); ++i) out << fmt::format(" {}={:.6g}", model.comparators[i], model.weights[i + 1]);
  out << '\n';
  return 0;
}

struct FuseApplyArgs {
  std::string model, out;
  std::vector<std::string> scores;
};

int cmd_fuse_apply(const FuseApplyArgs& a, const Globals&, std::ostream& out, std::ostream&) {
  const FusionModel model = load_fusion_model(a.model);
  const auto sets = read_score_files(a.scores);
  for (std::size_t i = 0; i < sets.size() && i < model.inputs(); ++i) {
    if (sets[i].comparator != model.comparators[i]) {
      throw DataError(fmt::format("score file {} is '{}' but the model expects '{}' in that position", i + 1,
                                  sets[i].comparator, model.comparators[i]));
    }
  }
  const TrialScores fused = apply_fusion(model, sets);
  write_scores_csv(a.out, fused);
  out << fmt::format("fused {} trials\n", fused.trials.size());
  return 0;
}

struct EvalArgs {
  std::vector<std::string> scores;
  std::string results, name = "eval";
  bool fuse = false;
  int cv = 0;
};

int cmd_eval(const EvalArgs& a, const Globals&, std::ostream& out, std::ostream&) {
  const auto sets = read_score_files(a.scores);
  EvalSummary summary;
  summary.name = a.name;
  const fs::path results = a.results;
  auto det = [&](const TrialScores& s) {
    const ScoreSet set = to_score_set(s);
    if (set.genuine.empty() || set.impostor.empty()) return;
    write_text(results / sanitize_stem("det_" + a.name + "_" + s.comparator + ".csv"), det_csv(det_curve(set)));
  };
  for (const auto& s : sets) {
    summary.comparators.push_back(summarize(s));
    det(s);
  }
  if (a.fuse || a.cv > 0) {
    TrialScores fused;
    if (a.cv > 0) {
      fused = cross_validated_fusion(sets, a.cv);
      summary.fusion_training = fmt::format("cv-{}", a.cv);
    } else {
      summary.model = train_fusion(sets);
      fused = apply_fusion(*summary.model, sets);
      summary.fusion_training = "same-set";
    }
    summary.fused = summarize(fused);
    det(fused);
  }
  write_text(results / sanitize_stem("eval_" + a.name + ".json"), eval_json(summary));
  for (const auto& c : summary.comparators) out << fmt::format("{:<24} EER {}%\n", c.name, format_eer(c.eer));
  if (summary.fused) {
    out << fmt::format("{:<24} EER {}% ({})\n", summary.fused->name, format_eer(summary.fused->eer),
                       summary.fusion_training);
  }
  return 0;
}

struct SweepArgs {
  std::string model, plan, results, scores_dir, strategy = "per-channel";
};

int cmd_sweep(const SweepArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  const auto catalog = resolve_catalog(a.model, g);
  const TrialPlan plan = read_plan(a.plan);
  const LayerSweep sweep = layer_sweep(catalog, g.store(), plan, parse_strategy(a.strategy), g.jobs);
  std::vector<fs::path> written;
  write_sweep(a.results, sweep.result, written);
  if (!a.scores_dir.empty()) {
    for (std::size_t i = 0; i < sweep.scores.size(); ++i) {
      if (!sweep.scores[i]) continue;
      const fs::path p = fs::path(a.scores_dir) / sanitize_stem(catalog.name + "_" + sweep.result.layers[i].layer + ".csv");
      write_scores_csv(p, *sweep.scores[i]);
      written.push_back(p);
    }
  }
  if (const auto best = sweep.result.best_layer()) {
    const auto& l = sweep.result.layers[*best];
    out << fmt::format("{} best layer {} EER {}% at {} learnables\n", catalog.name, l.layer, format_eer(l.eer), l.learnables);
  }
  print_written(out, written);
  return 0;
}

struct GridArgs {
  std::string cnn, vit, plan, results, strategy = "per-channel";
  std::uint64_t budget = kDefaultLearnablesBudget;
  std::vector<std::string> with;
};

int cmd_grid(const GridArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto cnn_cat = resolve_catalog(a.cnn, g);
  const auto vit_cat = resolve_catalog(a.vit, g);
  const TrialPlan plan = read_plan(a.plan);
  const NormStrategy strategy = parse_strategy(a.strategy);
  const FeatureStore store = g.store();
  const LayerSweep cnn = layer_sweep(cnn_cat, store, plan, strategy, g.jobs);
  const LayerSweep vit = layer_sweep(vit_cat, store, plan, strategy, g.jobs);
  std::vector<fs::path> written;
  write_sweep(a.results, cnn.result, written);
  write_sweep(a.results, vit.result, written);

  GridRecord rec;
  rec.grid = fusion_grid(GridAxis::from_sweep(cnn), GridAxis::from_sweep(vit), g.jobs);
  rec.strategy = std::string(to_string(strategy));
  rec.budget = a.budget;
  try {
    rec.selection = select_operating_points(rec.grid, a.budget);
  } catch (const SelectionError& e) {
    err << "warning: " << e.what() << '\n';
  }
  if (rec.selection && !a.with.empty()) {
    const auto traditional = read_score_files(a.with);
    auto with_traditional = [&](OperatingPoint& p) {
      std::vector<TrialScores> sets{*cnn.scores[p.cnn_index], *vit.scores[p.vit_index]};
      sets.insert(sets.end(), traditional.begin(), traditional.end());
      p.with_traditional_eer = fused_eer(sets);
    };
    with_traditional(rec.selection->best);
    if (rec.selection->low_depth) with_traditional(*rec.selection->low_depth);
  }

  const std::string stem = sanitize_stem(fmt::format("{}_{}_{}", cnn_cat.name, vit_cat.name, rec.strategy));
  const std::vector<std::pair<fs::path, std::string>> files = {
      {fs::path(a.results) / ("grid_" + stem + ".json"), grid_json(rec)},
      {fs::path(a.results) / ("grid_" + stem + ".csv"), grid_csv(rec.grid)},
      {fs::path(a.results) / ("grid_" + stem + ".pgm"), heatmap_pgm(rec.grid)},
  };
  for (const auto& [p, text] : files) {
    write_text(p, text);
    written.push_back(p);
  }
  if (rec.selection) {
    const auto& b = rec.selection->best;
    out << fmt::format("best {} + {}: EER {}% at {} learnables\n", b.cnn_layer, b.vit_layer, format_eer(b.fused_eer),
                       b.combined_learnables());
    if (const auto& l = rec.selection->low_depth) {
      out << fmt::format("low-depth {} + {}: EER {}% at {} learnables\n", l->cnn_layer, l->vit_layer,
                         format_eer(l->fused_eer), l->combined_learnables());
    }
  }
  print_written(out, written);
  return 0;
}

struct ReportArgs {
  std::string results, out;
};

int cmd_report(const ReportArgs& a, const Globals&, std::ostream& out, std::ostream&) {
  print_written(out, write_report(a.results, a.out));
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Periocular verification with deep-layer, handcrafted and fused comparators", "periscope"};
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "TOML configuration; command-line flags take precedence");
  app.allow_config_extras(false);

  Globals g;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--jobs,-j", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", g.seed, "Seed for any randomized step");
    sub->add_option("--cache", g.cache, "Feature store root (overrides PERISCOPE_CACHE)");
    sub->add_option("--models-dir", g.models_dir, "Directory searched for <name>.json model specs");
  };
  add_globals(&app);
  const auto strategies = strategy_tokens();

  std::function<int()> action;
  auto bind = [&](CLI::App* sub, auto& args, auto fn) {
    add_globals(sub);
    sub->callback([&action, &args, &g, &out, &err, fn] { action = [&, fn] { return fn(args, g, out, err); }; });
  };

  PrepArgs prep;
  auto* s_prep = app.add_subcommand("prep", "Scale, crop, mirror and resize annotated images");
  s_prep->add_option("--manifest", prep.manifest, "Input manifest (JSON lines)")->required();
  s_prep->add_option("--out", prep.out, "Output directory")->required();
  auto* side = s_prep->add_option("--side", prep.side, "Square output side in pixels")->check(CLI::PositiveNumber);
  s_prep->add_option("--network", prep.network, "Take the output side from this model's catalog")->excludes(side);
  s_prep->add_flag("--gray", prep.gray, "Write 8-bit grayscale instead of keeping colour");
  bind(s_prep, prep, cmd_prep);

  ExtractArgs ext;
  auto* s_ext = app.add_subcommand("extract", "Run a model graph and store tap activations");
  s_ext->add_option("--model", ext.model, "ModelGraph spec path or name")->required();
  s_ext->add_option("--manifest", ext.manifest, "Preprocessed manifest")->required();
  s_ext->add_option("--taps", ext.taps, "Subset of taps (default: all)")->delimiter(',');
  s_ext->add_option("--parity", ext.parity, "Feature store holding reference dumps to compare against");
  s_ext->add_option("--parity-out", ext.parity_out, "Write the parity report here instead of stdout");
  bind(s_ext, ext, cmd_extract);

  FeaturesArgs feat;
  auto* s_feat = app.add_subcommand("features", "Compute handcrafted descriptors");
  s_feat->add_option("--manifest", feat.manifest, "Preprocessed manifest")->required();
  s_feat->add_option("--kinds", feat.kinds, "Descriptor kinds")
      ->delimiter(',')
      ->check(CLI::IsMember({"lbp", "hog", "sift"}))
      ->capture_default_str();
  s_feat->add_option("--grid-rows", feat.grid_rows, "Region grid rows")->check(CLI::PositiveNumber)->capture_default_str();
  s_feat->add_option("--grid-cols", feat.grid_cols, "Region grid columns")->check(CLI::PositiveNumber)->capture_default_str();
  s_feat->add_option("--cell-pixels", feat.cell_pixels, "Fixed square cells instead of a grid")->check(CLI::PositiveNumber);
  s_feat->add_option("--hog-bins", feat.hog_bins, "HOG orientation bins over 360 degrees")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bind(s_feat, feat, cmd_features);

  ScoreArgs score;
  auto* s_score = app.add_subcommand("score", "Score every trial with one comparator");
  auto* plan_opt = s_score->add_option("--plan", score.plan, "Trial plan (JSON lines)");
  s_score->add_option("--manifest", score.manifest, "Build the trial plan from this manifest")->excludes(plan_opt);
  s_score->add_option("--comparator", score.comparator, "Comparator")
      ->required()
      ->check(CLI::IsMember({"lbp", "hog", "sift", "deep"}));
  s_score->add_option("--network", score.network, "Model spec, catalog or name (deep only)");
  s_score->add_option("--layer", score.layer, "Layer name (deep only)");
  s_score->add_option("--strategy", score.strategy, "Normalization (deep only)")
      ->check(CLI::IsMember(strategies))
      ->capture_default_str();
  s_score->add_option("--out", score.out, "Output score CSV")->required();
  bind(s_score, score, cmd_score);

  FuseTrainArgs ft;
  auto* s_ft = app.add_subcommand("fuse-train", "Train a linear-logistic score fusion");
  s_ft->add_option("--scores", ft.scores, "Score CSVs, one per comparator")->required();
  s_ft->add_option("--out", ft.out, "Output model JSON")->required();
  s_ft->add_option("--l2", ft.l2, "L2 penalty on the comparator weights in score standard deviations")->check(CLI::NonNegativeNumber)->capture_default_str();
  s_ft->add_option("--max-iter", ft.max_iterations, "Newton iteration cap")->check(CLI::PositiveNumber)->capture_default_str();
  bind(s_ft, ft, cmd_fuse_train);

  FuseApplyArgs fa;
  auto* s_fa = app.add_subcommand("fuse-apply", "Apply a trained fusion to score CSVs");
  s_fa->add_option("--model", fa.model, "Model JSON")->required();
  s_fa->add_option("--scores", fa.scores, "Score CSVs in model order")->required();
  s_fa->add_option("--out", fa.out, "Output fused score CSV")->required();
  bind(s_fa, fa, cmd_fuse_apply);

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "EER and DET points for score CSVs, optionally fused");
  s_ev->add_option("--scores", ev.scores, "Score CSVs")->required();
  s_ev->add_option("--results", ev.results, "Results directory")->required();
  s_ev->add_option("--name", ev.name, "Result name")->capture_default_str();
  auto* fuse_flag = s_ev->add_flag("--fuse", ev.fuse, "Also fuse all inputs, trained on the same trials");
  s_ev->add_option("--cv", ev.cv, "Fuse with k-fold cross-validated training instead")
      ->check(CLI::Range(2, 1000))
      ->excludes(fuse_flag);
  bind(s_ev, ev, cmd_eval);

  SweepArgs sw;
  auto* s_sw = app.add_subcommand("sweep", "Per-layer EER for one network");
  s_sw->add_option("--model", sw.model, "Model spec, catalog or name")->required();
  s_sw->add_option("--plan", sw.plan, "Trial plan")->required();
  s_sw->add_option("--results", sw.results, "Results directory")->required();
  s_sw->add_option("--strategy", sw.strategy, "Normalization")->check(CLI::IsMember(strategies))->capture_default_str();
  s_sw->add_option("--scores-dir", sw.scores_dir, "Also write per-layer score CSVs here");
  bind(s_sw, sw, cmd_sweep);

  GridArgs gr;
  auto* s_gr = app.add_subcommand("grid", "Fuse every CNN layer with every ViT layer");
  s_gr->add_option("--cnn", gr.cnn, "CNN model spec, catalog or name")->required();
  s_gr->add_option("--vit", gr.vit, "ViT model spec, catalog or name")->required();
  s_gr->add_option("--plan", gr.plan, "Trial plan")->required();
  s_gr->add_option("--results", gr.results, "Results directory")->required();
  s_gr->add_option("--strategy", gr.strategy, "Normalization")->check(CLI::IsMember(strategies))->capture_default_str();
  s_gr->add_option("--budget", gr.budget, "Learnables budget for the low-depth selection")->capture_default_str();
  s_gr->add_option("--with", gr.with, "Handcrafted score CSVs fused into the selected points");
  bind(s_gr, gr, cmd_grid);

  ReportArgs rep;
  auto* s_rep = app.add_subcommand("report", "Assemble summary tables, curves and heatmaps");
  s_rep->add_option("--results", rep.results, "Results directory")->required();
  s_rep->add_option("--out", rep.out, "Report directory")->required();
  bind(s_rep, rep, cmd_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  try {
    return action();
  } catch (const CLI::ValidationError& e) {
    err << "periscope: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "periscope: error: " << e.what() << '\n';
    return 1;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"periscope"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace periscope
