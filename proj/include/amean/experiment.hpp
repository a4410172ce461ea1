// Experiment orchestration behind the command-line interface: strict JSON
// config parsing, per-seed runs (optionally fanned across worker threads),
// the ablation comparison table, and the cluster-count sweep.
//
// Exit-code contract shared by every command: 0 success, 1 configuration or
// I/O failure, 2 numeric failure during training.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amean/data.hpp"
#include "amean/trainer.hpp"

namespace amean {

struct ExperimentConfig {
  std::optional<DataSpec> data;              // inline generation spec
  std::optional<std::string> dataset_path;   // or a pre-generated CSV
  TrainConfig train;                          // seed is filled per run
  std::vector<uint64_t> seeds = {1};
  std::string out_dir = "runs";
};

// Strict parsers: unknown keys are rejected with a ConfigError naming the key,
// malformed JSON raises ParseError carrying the parser's position message.
DataSpec parse_data_spec(const std::string& json_text);
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Parses a bare train block (same strict schema as the 'train' object of an
// experiment config).
TrainConfig parse_train_config(const std::string& json_text);

// Trains one variant on a dataset, applying the variant's input wiring:
// explicit-sub-target swaps in the dataset's true group ids, single-target
// keeps only the rows of the configured sub-target.
TrainResult train_on_dataset(const BlendedDataset& ds, const TrainConfig& config);

int cmd_generate(const std::string& spec_path, const std::string& out_path,
                 uint64_t seed);
int cmd_train(const std::string& config_path, const std::string& out_override,
              int threads);
int cmd_ablate(const std::string& config_path, const std::string& out_override,
               int threads);
int cmd_sweep_k(const std::string& config_path, const std::vector<int>& k_list,
                const std::string& out_override, int threads);
int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
             const std::string& out_dir);

}  // namespace amean
