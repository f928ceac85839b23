// Writes the procedural periocular dataset used for desk-scale runs.

#include <iostream>

#include <CLI11.hpp>

#include "periscope/errors.hpp"
#include "periscope/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic annotated periocular dataset", "periscope-synth"};
  std::string out;
  periscope::SyntheticOptions opt;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--subjects", opt.subjects, "Subjects (two eyes each)")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--images", opt.images_per_eye, "Captures per eye")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--width", opt.width, "Frame width")->check(CLI::Range(64, 4096))->capture_default_str();
  app.add_option("--height", opt.height, "Frame height")->check(CLI::Range(64, 4096))->capture_default_str();
  app.add_option("--seed", opt.seed, "Random seed")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    const auto records = periscope::write_synthetic_dataset(out, opt);
    std::cout << "wrote " << records.size() << " images and " << out << "/manifest.jsonl\n";
  } catch (const std::exception& e) {
    std::cerr << "periscope-synth: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
