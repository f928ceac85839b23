#include <doctest.h>

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "periscope/errors.hpp"
#include "periscope/report.hpp"

using namespace periscope;

namespace {

SweepResult sweep() {
  SweepResult s;
  s.network = "R18";
  s.strategy = NormStrategy::PerChannel;
  s.layers = {{"conv1", 9472, 12.5, 0}, {"layer1.0", 80000, 7.25, 1}, {"fc", 11689512, std::nullopt, 40}};
  return s;
}

GridRecord grid() {
  GridResult g;
  g.cnn = "R18";
  g.vit = "ViT-small";
  g.cnn_layers = {"a", "b"};
  g.vit_layers = {"x", "y", "z"};
  g.cnn_learnables = {100, 2000};
  g.vit_learnables = {300, 4000, 50000};
  g.cnn_solo_eer = {10.0, 8.0};
  g.vit_solo_eer = {9.0, std::nullopt, 6.0};
  g.eer = {5.0, std::nullopt, 4.0, 30.0, 2.0, 0.0};
  GridRecord r{g, "per-channel", 5000, select_operating_points(g, 5000)};
  r.selection->best.with_traditional_eer = 0.0;
  return r;
}

EvalSummary eval() {
  EvalSummary e;
  e.name = "hand";
  e.comparators = {{"lbp", 3.5, 120, 380, 0}, {"hog", std::nullopt, 0, 0, 500}};
  e.fused = ComparatorSummary{"fused", 1.25, 120, 380, 0};
  e.fusion_training = "cv-5";
  FusionModel m;
  m.comparators = {"lbp", "hog"};
  m.weights = {0.1, 2.0, -0.5};
  m.iterations = 7;
  m.final_loss = 0.25;
  m.converged = true;
  e.model = m;
  return e;
}

}  // namespace

TEST_CASE("EER formatting") {
  CHECK(format_eer(7.5) == "7.500000");
  CHECK(format_eer(std::nullopt) == "NA");
}

TEST_CASE("sweep result round trip") {
  const auto s = sweep();
  const auto back = parse_sweep_json(sweep_json(s));
  CHECK(back.network == "R18");
  CHECK(back.layers.size() == 3);
  CHECK(back.layers[1].eer == 7.25);
  CHECK_FALSE(back.layers[2].eer.has_value());
  CHECK(sweep_json(back) == sweep_json(s));
  CHECK(sweep_csv(s) == "layer,eer,learnables,missing\nconv1,12.500000,9472,0\nlayer1.0,7.250000,80000,1\nfc,NA,11689512,40\n");
  CHECK_THROWS_AS(parse_sweep_json("{}"), FormatError);
}

TEST_CASE("grid record round trip") {
  const auto r = grid();
  const auto back = parse_grid_json(grid_json(r));
  CHECK(back.grid.eer == r.grid.eer);
  CHECK(back.budget == 5000);
  REQUIRE(back.selection.has_value());
  CHECK(back.selection->best.fused_eer == 0.0);
  CHECK(back.selection->best.cnn_layer == "b");
  CHECK(back.selection->best.vit_layer == "z");
  CHECK(back.selection->best.with_traditional_eer == 0.0);
  REQUIRE(back.selection->low_depth.has_value());
  CHECK(back.selection->low_depth->fused_eer == 5.0);
  CHECK(grid_json(back) == grid_json(r));
  const auto csv = grid_csv(r.grid);
  CHECK(csv.find("a,y,100,4000,NA\n") != std::string::npos);
}

TEST_CASE("eval summary round trip and summarize") {
  const auto e = eval();
  const auto back = parse_eval_json(eval_json(e));
  CHECK(back.fusion_training == "cv-5");
  REQUIRE(back.model.has_value());
  CHECK(back.model->weights == e.model->weights);
  CHECK_FALSE(back.comparators[1].eer.has_value());
  CHECK(eval_json(back) == eval_json(e));

  TrialScores s;
  s.comparator = "x";
  s.trials = {{"a", "b", TrialLabel::Genuine}, {"a", "c", TrialLabel::Impostor}, {"b", "c", TrialLabel::Impostor}};
  s.scores = {1.0, 0.0, std::nullopt};
  const auto sum = summarize(s);
  CHECK(sum.eer == 0.0);
  CHECK(sum.genuine == 1);
  CHECK(sum.impostor == 1);
  CHECK(sum.missing == 1);
  s.scores = {std::nullopt, 0.0, 1.0};
  CHECK_FALSE(summarize(s).eer.has_value());
}

TEST_CASE("DET CSV") {
  const std::vector<DetPoint> pts{{0.5, 1.0, 0.0}, {std::numeric_limits<double>::infinity(), 0.0, 1.0}};
  CHECK(det_csv(pts) == "threshold,far,frr\n0.5,1,0\ninf,0,1\n");
}

TEST_CASE("report bundle is complete and byte stable") {
  const auto root = oracle::temp_dir("report");
  const auto results = root / "results";
  write_text(results / "sweep_R18_per-channel.json", sweep_json(sweep()));
  write_text(results / "grid_R18_ViT-small_per-channel.json", grid_json(grid()));
  write_text(results / "eval_hand.json", eval_json(eval()));
  write_text(results / "det_hand_lbp.csv", det_csv({{0.5, 1.0, 0.0}}));
  write_text(results / "notes.txt", "ignored");

  const auto first = write_report(results, root / "a");
  const auto second = write_report(results, root / "b");
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(std::filesystem::relative(first[i], root / "a") == std::filesystem::relative(second[i], root / "b"));
    CHECK(read_text(first[i]) == read_text(second[i]));
  }
  for (const char* rel : {"summary.json", "curves/R18_per-channel.csv", "grids/R18_ViT-small_per-channel.csv",
                          "heatmaps/R18_ViT-small_per-channel.pgm", "heatmaps/R18_ViT-small_per-channel.png",
                          "det/hand_lbp.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(root / "a" / rel), rel);
  }

  const auto j = nlohmann::json::parse(read_text(root / "a" / "summary.json"));
  CHECK(j["networks"][0]["network"] == "R18");
  CHECK(j["networks"][0]["best_layer"] == "layer1.0");
  CHECK(j["pairings"][0]["best"]["fused_eer"] == 0.0);
  CHECK(j["evaluations"][0]["name"] == "hand");

  const auto pgm = read_text(root / "a" / "heatmaps" / "R18_ViT-small_per-channel.pgm");
  CHECK(pgm == std::string("P5\n3 2\n255\n") + std::string{'\x33', '\xff', '\x29', '\xff', '\x14', '\x00'});

  CHECK_THROWS_AS(write_report(root / "empty", root / "c"), DataError);
  std::filesystem::remove_all(root);
}
