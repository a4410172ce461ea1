// Command-line front end: generate synthetic blended-target datasets, train
// the adaptation variants, run the ablation table and the cluster-count
// sweep, and evaluate saved checkpoints.
#include <cstdint>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "amean/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Blended-target domain adaptation laboratory"};
  app.require_subcommand(1);

  std::string spec_path, out_path, config_path, out_dir, checkpoint, dataset;
  uint64_t seed = 1;
  int threads = 1;
  std::vector<int> k_list;

  CLI::App* generate = app.add_subcommand("generate", "Write a synthetic dataset CSV");
  generate->add_option("--spec", spec_path, "Data-spec JSON path")->required();
  generate->add_option("--out", out_path, "Output CSV path")->required();
  generate->add_option("--seed", seed, "Generation seed");

  CLI::App* train = app.add_subcommand("train", "Train the configured variant per seed");
  train->add_option("--config", config_path, "Experiment config JSON")->required();
  train->add_option("--out", out_dir, "Override the config's output directory");
  train->add_option("--threads", threads, "Parallel independent runs");

  CLI::App* ablate = app.add_subcommand("ablate", "Compare all five variants");
  ablate->add_option("--config", config_path, "Experiment config JSON")->required();
  ablate->add_option("--out", out_dir, "Override the config's output directory");
  ablate->add_option("--threads", threads, "Parallel independent runs");

  CLI::App* sweep = app.add_subcommand("sweep-k", "Sweep the assumed sub-target count");
  sweep->add_option("--config", config_path, "Experiment config JSON")->required();
  sweep->add_option("--k", k_list, "Cluster counts to try (e.g. --k 2,3,4)")
      ->required()
      ->delimiter(',');
  sweep->add_option("--out", out_dir, "Override the config's output directory");
  sweep->add_option("--threads", threads, "Parallel independent runs");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  eval->add_option("--dataset", dataset, "Dataset CSV path")->required();
  eval->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (generate->parsed()) return amean::cmd_generate(spec_path, out_path, seed);
  if (train->parsed()) return amean::cmd_train(config_path, out_dir, threads);
  if (ablate->parsed()) return amean::cmd_ablate(config_path, out_dir, threads);
  if (sweep->parsed()) return amean::cmd_sweep_k(config_path, k_list, out_dir, threads);
  if (eval->parsed()) return amean::cmd_eval(checkpoint, dataset, out_dir);
  return 1;
}
