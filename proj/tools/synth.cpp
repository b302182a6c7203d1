// Writes a synthetic labelled WAV dataset and its manifest.

#include <iostream>

#include <CLI11.hpp>

#include "msdml/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic acoustic dataset", "msdml-synth"};
  std::string out;
  int per_class = 50;
  int classes = static_cast<int>(msdml::synthetic::kClassNames.size());
  std::uint64_t seed = 0;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--per-class", per_class, "Recordings per class")->check(CLI::PositiveNumber);
  app.add_option("--classes", classes, "Number of classes")->check(CLI::Range(2, 6));
  app.add_option("--seed", seed, "Random seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    const auto manifest = msdml::synthetic::write_dataset(out, per_class, seed, classes);
    std::cout << manifest.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
