// Command-line front end for the experiment harness.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nupf/harness/config.hpp"
#include "nupf/harness/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Nudged particle filter experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  std::string config_path;
  std::uint64_t seed = 0;
  int runs = 0;
  int threads = 0;
  std::string out_dir;
  run->add_option("config", config_path, "Config file (key = value)")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Master seed");
  auto* runs_opt = run->add_option("--runs", runs, "Number of independent runs")->check(CLI::PositiveNumber);
  auto* threads_opt = run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  auto* out_opt = run->add_option("--out", out_dir, "Output directory (default: $NUPF_OUTPUT_DIR or results)");

  auto* list = app.add_subcommand("list-experiments", "List experiment ids");

  auto* print = app.add_subcommand("print-default-config", "Print the default config of an experiment");
  std::string print_id;
  print->add_option("experiment", print_id, "Experiment id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (list->parsed()) {
      for (const auto& id : nupf::experiment_ids()) std::cout << id << '\n';
      return 0;
    }
    if (print->parsed()) {
      std::cout << nupf::default_config(print_id).dump();
      return 0;
    }
    nupf::Config cfg = nupf::Config::load(config_path);
    if (*seed_opt) cfg.set("seed", std::to_string(seed));
    if (*runs_opt) cfg.set("runs", std::to_string(runs));
    if (*threads_opt) cfg.set("threads", std::to_string(threads));
    if (*out_opt) {
      cfg.set("output_dir", out_dir);
    } else if (!cfg.has("output_dir")) {
      if (const char* env = std::getenv("NUPF_OUTPUT_DIR")) cfg.set("output_dir", env);
    }
    std::vector<std::string> files;
    const nupf::ExperimentResult res = nupf::run_experiment(cfg, &files);
    for (const auto& w : res.warnings) std::cerr << "warning: rate guard: " << w << '\n';
    std::cout << res.id << ": " << res.runs.size() << " runs in " << res.wall_seconds << " s\n";
    std::cout << nupf::summary_table(res).str();
    for (const auto& f : files) std::cout << "wrote " << f << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
