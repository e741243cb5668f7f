// enclap-desk <stage> --config <path> [--seed N] [--out DIR] [key=value ...]

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "enclap/stages.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale audio captioning pipeline"};
  std::string stage, config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
  app.add_option("stage", stage, "make-data | train-codec | train-clap | train-captioner | caption | evaluate | ablate")
      ->required();
  app.add_option("--config", config_path, "key = value settings file");
  app.add_option("--seed", seed, "overrides the seed setting");
  app.add_option("--out", out, "overrides out_dir");
  app.add_option("overrides", overrides, "key=value settings applied last");
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::string> all = overrides;
    all.push_back("stage=" + stage);
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    if (out) all.push_back("out_dir=" + *out);
    const auto config = enclap::cli::parse_config(config_path, all);
    enclap::cli::run_stage(config, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "enclap-desk: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
