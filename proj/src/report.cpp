#include "periscope/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "periscope/errors.hpp"
#include "periscope/preprocess.hpp"

namespace periscope {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

ojson opt(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::optional<double> opt_double(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::vector<std::optional<double>> opt_list(const nlohmann::json& j) {
  std::vector<std::optional<double>> out;
  for (const auto& v : j) out.push_back(opt_double(v));
  return out;
}

ojson opt_list(const std::vector<std::optional<double>>& v) {
  ojson a = ojson::array();
  for (const auto& x : v) a.push_back(opt(x));
  return a;
}

template <typename Fn>
auto parse_json(const std::string& text, const char* what, Fn fn) {
  try {
    return fn(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{} JSON: {}", what, e.what()));
  }
}

ojson point_json(const OperatingPoint& p) {
  ojson j;
  j["cnn_layer"] = p.cnn_layer;
  j["vit_layer"] = p.vit_layer;
  j["cnn_index"] = p.cnn_index;
  j["vit_index"] = p.vit_index;
  j["cnn_learnables"] = p.cnn_learnables;
  j["vit_learnables"] = p.vit_learnables;
  j["combined_learnables"] = p.combined_learnables();
  j["cnn_eer"] = opt(p.cnn_eer);
  j["vit_eer"] = opt(p.vit_eer);
  j["fused_eer"] = p.fused_eer;
  j["with_traditional_eer"] = opt(p.with_traditional_eer);
  return j;
}

OperatingPoint parse_point(const nlohmann::json& j, const std::string& cnn, const std::string& vit) {
  OperatingPoint p;
  p.cnn = cnn;
  p.vit = vit;
  p.cnn_layer = j.at("cnn_layer").get<std::string>();
  p.vit_layer = j.at("vit_layer").get<std::string>();
  p.cnn_index = j.at("cnn_index").get<std::size_t>();
  p.vit_index = j.at("vit_index").get<std::size_t>();
  p.cnn_learnables = j.at("cnn_learnables").get<std::uint64_t>();
  p.vit_learnables = j.at("vit_learnables").get<std::uint64_t>();
  p.cnn_eer = opt_double(j.at("cnn_eer"));
  p.vit_eer = opt_double(j.at("vit_eer"));
  p.fused_eer = j.at("fused_eer").get<double>();
  p.with_traditional_eer = opt_double(j.at("with_traditional_eer"));
  return p;
}

ojson comparator_json(const ComparatorSummary& c) {
  ojson j;
  j["name"] = c.name;
  j["eer"] = opt(c.eer);
  j["genuine"] = c.genuine;
  j["impostor"] = c.impostor;
  j["missing"] = c.missing;
  return j;
}

ComparatorSummary parse_comparator(const nlohmann::json& j) {
  return {j.at("name").get<std::string>(), opt_double(j.at("eer")), j.at("genuine").get<std::size_t>(),
          j.at("impostor").get<std::size_t>(), j.at("missing").get<std::size_t>()};
}

ojson sweep_row(const SweepResult& s) {
  ojson j;
  j["network"] = s.network;
  j["strategy"] = std::string(to_string(s.strategy));
  const auto best = s.best_layer();
  j["best_layer"] = best ? ojson(s.layers[*best].layer) : ojson(nullptr);
  j["eer"] = best ? opt(s.layers[*best].eer) : ojson(nullptr);
  j["learnables"] = best ? ojson(s.layers[*best].learnables) : ojson(nullptr);
  j["layers"] = s.layers.size();
  j["gaps"] = std::count_if(s.layers.begin(), s.layers.end(), [](const LayerResult& l) { return !l.eer; });
  return j;
}

std::vector<fs::path> result_files(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with(prefix) && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string stem_after(const fs::path& p, const std::string& prefix) {
  return p.stem().string().substr(prefix.size());
}

}  // namespace

std::string format_eer(std::optional<double> eer) { return eer ? fmt::format("{:.6f}", *eer) : "NA"; }

std::string sweep_csv(const SweepResult& sweep) {
  std::string out = "layer,eer,learnables,missing\n";
  for (const auto& l : sweep.layers) {
    out += fmt::format("{},{},{},{}\n", l.layer, format_eer(l.eer), l.learnables, l.missing);
  }
  return out;
}

std::string sweep_json(const SweepResult& sweep) {
  ojson j;
  j["network"] = sweep.network;
  j["strategy"] = std::string(to_string(sweep.strategy));
  j["layers"] = ojson::array();
  for (const auto& l : sweep.layers) {
    ojson e;
    e["layer"] = l.layer;
    e["learnables"] = l.learnables;
    e["eer"] = opt(l.eer);
    e["missing"] = l.missing;
    j["layers"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

SweepResult parse_sweep_json(const std::string& text) {
  return parse_json(text, "sweep", [](const nlohmann::json& j) {
    SweepResult s;
    s.network = j.at("network").get<std::string>();
    s.strategy = parse_strategy(j.at("strategy").get<std::string>());
    for (const auto& e : j.at("layers")) {
      s.layers.push_back({e.at("layer").get<std::string>(), e.at("learnables").get<std::uint64_t>(),
                          opt_double(e.at("eer")), e.at("missing").get<std::size_t>()});
    }
    return s;
  });
}

std::string grid_csv(const GridResult& grid) {
  std::string out = "cnn_layer,vit_layer,cnn_learnables,vit_learnables,eer\n";
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      out += fmt::format("{},{},{},{},{}\n", grid.cnn_layers[r], grid.vit_layers[c], grid.cnn_learnables[r],
                         grid.vit_learnables[c], format_eer(grid.at(r, c)));
    }
  }
  return out;
}

std::string grid_json(const GridRecord& record) {
  const GridResult& g = record.grid;
  ojson j;
  j["cnn"] = g.cnn;
  j["vit"] = g.vit;
  j["strategy"] = record.strategy;
  j["budget"] = record.budget;
  j["cnn_layers"] = g.cnn_layers;
  j["vit_layers"] = g.vit_layers;
  j["cnn_learnables"] = g.cnn_learnables;
  j["vit_learnables"] = g.vit_learnables;
  j["cnn_solo_eer"] = opt_list(g.cnn_solo_eer);
  j["vit_solo_eer"] = opt_list(g.vit_solo_eer);
  j["eer"] = ojson::array();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    j["eer"].push_back(opt_list(std::vector<std::optional<double>>(
        g.eer.begin() + static_cast<std::ptrdiff_t>(r * g.cols()),
        g.eer.begin() + static_cast<std::ptrdiff_t>((r + 1) * g.cols()))));
  }
  if (record.selection) {
    j["selection"]["best"] = point_json(record.selection->best);
    j["selection"]["low_depth"] =
        record.selection->low_depth ? point_json(*record.selection->low_depth) : ojson(nullptr);
  } else {
    j["selection"] = nullptr;
  }
  return j.dump(2) + "\n";
}

GridRecord parse_grid_json(const std::string& text) {
  return parse_json(text, "grid", [](const nlohmann::json& j) {
    GridRecord rec;
    GridResult& g = rec.grid;
    g.cnn = j.at("cnn").get<std::string>();
    g.vit = j.at("vit").get<std::string>();
    rec.strategy = j.at("strategy").get<std::string>();
    rec.budget = j.at("budget").get<std::uint64_t>();
    g.cnn_layers = j.at("cnn_layers").get<std::vector<std::string>>();
    g.vit_layers = j.at("vit_layers").get<std::vector<std::string>>();
    g.cnn_learnables = j.at("cnn_learnables").get<std::vector<std::uint64_t>>();
    g.vit_learnables = j.at("vit_learnables").get<std::vector<std::uint64_t>>();
    g.cnn_solo_eer = opt_list(j.at("cnn_solo_eer"));
    g.vit_solo_eer = opt_list(j.at("vit_solo_eer"));
    for (const auto& row : j.at("eer")) {
      const auto v = opt_list(row);
      if (v.size() != g.cols()) throw FormatError("grid JSON row length differs from the ViT layer count");
      g.eer.insert(g.eer.end(), v.begin(), v.end());
    }
    if (g.eer.size() != g.rows() * g.cols()) throw FormatError("grid JSON row count differs from the CNN layer count");
    if (const auto& sel = j.at("selection"); !sel.is_null()) {
      OperatingPointSelection s{parse_point(sel.at("best"), g.cnn, g.vit), std::nullopt};
      if (!sel.at("low_depth").is_null()) s.low_depth = parse_point(sel.at("low_depth"), g.cnn, g.vit);
      rec.selection = s;
    }
    return rec;
  });
}

ComparatorSummary summarize(const TrialScores& scores) {
  ComparatorSummary c;
  c.name = scores.comparator;
  c.missing = scores.missing();
  const ScoreSet set = to_score_set(scores);
  c.genuine = set.genuine.size();
  c.impostor = set.impostor.size();
  if (c.genuine && c.impostor) c.eer = compute_eer(set);
  return c;
}

std::string eval_json(const EvalSummary& s) {
  ojson j;
  j["name"] = s.name;
  j["comparators"] = ojson::array();
  for (const auto& c : s.comparators) j["comparators"].push_back(comparator_json(c));
  j["fused"] = s.fused ? comparator_json(*s.fused) : ojson(nullptr);
  j["fusion_training"] = s.fusion_training;
  j["model"] = s.model ? ojson::parse(dump_fusion_model(*s.model)) : ojson(nullptr);
  return j.dump(2) + "\n";
}

EvalSummary parse_eval_json(const std::string& text) {
  return parse_json(text, "eval", [](const nlohmann::json& j) {
    EvalSummary s;
    s.name = j.at("name").get<std::string>();
    for (const auto& c : j.at("comparators")) s.comparators.push_back(parse_comparator(c));
    if (!j.at("fused").is_null()) s.fused = parse_comparator(j.at("fused"));
    s.fusion_training = j.at("fusion_training").get<std::string>();
    if (!j.at("model").is_null()) s.model = parse_fusion_model(j.at("model").dump());
    return s;
  });
}

std::string det_csv(const std::vector<DetPoint>& points) {
  std::string out = "threshold,far,frr\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{}\n", std::isinf(p.threshold) ? std::string("inf") : format_score(p.threshold),
                       format_score(p.far), format_score(p.frr));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<fs::path> write_report(const fs::path& results, const fs::path& out) {
  const auto sweeps = result_files(results, "sweep_", ".json");
  const auto grids = result_files(results, "grid_", ".json");
  const auto evals = result_files(results, "eval_", ".json");
  const auto dets = result_files(results, "det_", ".csv");
  if (sweeps.empty() && grids.empty() && evals.empty()) {
    throw DataError("no sweep, grid or eval results in " + results.string());
  }
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& path, const std::string& text) {
    write_text(path, text);
    written.push_back(path);
  };

  auto load = [](const fs::path& p, auto parse) {
    try {
      return parse(read_text(p));
    } catch (const FormatError& e) {
      throw FormatError(p.string() + ": " + e.what());
    }
  };

  ojson summary;
  summary["networks"] = ojson::array();
  for (const auto& p : sweeps) {
    const SweepResult s = load(p, parse_sweep_json);
    summary["networks"].push_back(sweep_row(s));
    emit(out / "curves" / (stem_after(p, "sweep_") + ".csv"), sweep_csv(s));
  }

  summary["pairings"] = ojson::array();
  for (const auto& p : grids) {
    const GridRecord g = load(p, parse_grid_json);
    ojson row;
    row["cnn"] = g.grid.cnn;
    row["vit"] = g.grid.vit;
    row["strategy"] = g.strategy;
    row["budget"] = g.budget;
    row["best"] = g.selection ? point_json(g.selection->best) : ojson(nullptr);
    row["low_depth"] = g.selection && g.selection->low_depth ? point_json(*g.selection->low_depth) : ojson(nullptr);
    summary["pairings"].push_back(std::move(row));
    const std::string stem = stem_after(p, "grid_");
    emit(out / "grids" / (stem + ".csv"), grid_csv(g.grid));
    const std::string pgm = heatmap_pgm(g.grid);
    emit(out / "heatmaps" / (stem + ".pgm"), pgm);
    if (g.grid.rows() && g.grid.cols()) {
      cv::Mat cells(static_cast<int>(g.grid.rows()), static_cast<int>(g.grid.cols()), CV_8UC1);
      std::copy(pgm.end() - static_cast<std::ptrdiff_t>(cells.total()), pgm.end(), cells.data);
      cv::Mat big;
      cv::resize(cells, big, cv::Size(), 8, 8, cv::INTER_NEAREST);
      const fs::path png = out / "heatmaps" / (stem + ".png");
      write_png(png, big);
      written.push_back(png);
    }
  }

  summary["evaluations"] = ojson::array();
  for (const auto& p : evals) {
    const EvalSummary s = load(p, parse_eval_json);
    summary["evaluations"].push_back(ojson::parse(eval_json(s)));
  }

  for (const auto& p : dets) emit(out / "det" / (stem_after(p, "det_") + ".csv"), read_text(p));

  emit(out / "summary.json", summary.dump(2) + "\n");
  return written;
}

}  // namespace periscope
