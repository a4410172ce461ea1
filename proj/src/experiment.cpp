#include "amean/experiment.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "amean/evaluation.hpp"

namespace amean {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

DomainTransformSpec parse_transform(const json& j, int index) {
  std::string where = "transform " + std::to_string(index + 1);
  check_keys(j, {"rotation", "translation", "scale", "label_offset", "noise_std"},
             where);
  DomainTransformSpec t;
  read_key(j, "rotation", t.rotation, where);
  read_key(j, "translation", t.translation, where);
  read_key(j, "scale", t.scale, where);
  read_key(j, "label_offset", t.label_offset, where);
  read_key(j, "noise_std", t.noise_std, where);
  return t;
}

DataSpec parse_data_spec_json(const json& j) {
  if (j.contains("preset")) {
    check_keys(j, {"preset"}, "data spec");
    std::string preset = j.at("preset").get<std::string>();
    if (preset == "default-task") return default_task_spec();
    if (preset == "harder-task") return harder_task_spec();
    throw ConfigError("unknown data preset '" + preset + "'");
  }
  check_keys(j,
             {"d", "m", "k", "n_source", "n_target", "cluster_std", "center_box",
              "pi", "transforms"},
             "data spec");
  DataSpec spec;
  read_key(j, "d", spec.d, "data spec");
  read_key(j, "m", spec.m, "data spec");
  read_key(j, "k", spec.k, "data spec");
  read_key(j, "n_source", spec.n_source, "data spec");
  read_key(j, "n_target", spec.n_target, "data spec");
  read_key(j, "cluster_std", spec.cluster_std, "data spec");
  read_key(j, "center_box", spec.center_box, "data spec");
  read_key(j, "pi", spec.pi, "data spec");
  if (j.contains("transforms")) {
    const json& arr = j.at("transforms");
    if (!arr.is_array()) throw ConfigError("data spec: 'transforms' must be an array");
    for (size_t i = 0; i < arr.size(); ++i) {
      spec.transforms.push_back(parse_transform(arr[i], static_cast<int>(i)));
    }
  } else {
    spec.transforms.assign(spec.k, DomainTransformSpec{});
  }
  validate_data_spec(spec);
  return spec;
}

GammaSetting parse_gamma(const json& j) {
  check_keys(j, {"scheduled", "value"}, "hyper.gamma");
  GammaSetting g;
  read_key(j, "scheduled", g.scheduled, "hyper.gamma");
  read_key(j, "value", g.value, "hyper.gamma");
  return g;
}

HyperParams parse_hyper(const json& j) {
  check_keys(j,
             {"lambda", "gamma", "beta", "rho", "epsilon", "lr", "momentum",
              "batch_size", "iters_per_outer"},
             "hyper");
  HyperParams hp;
  read_key(j, "lambda", hp.lambda, "hyper");
  if (j.contains("gamma")) hp.gamma = parse_gamma(j.at("gamma"));
  read_key(j, "beta", hp.beta, "hyper");
  read_key(j, "rho", hp.rho, "hyper");
  read_key(j, "epsilon", hp.epsilon, "hyper");
  read_key(j, "lr", hp.lr, "hyper");
  read_key(j, "momentum", hp.momentum, "hyper");
  read_key(j, "batch_size", hp.batch_size, "hyper");
  read_key(j, "iters_per_outer", hp.iters_per_outer, "hyper");
  return hp;
}

DecConfig parse_dec(const json& j) {
  check_keys(j,
             {"k", "t_dof", "lr", "batch_size", "pretrain_iters", "corruption_std",
              "max_iters", "max_epochs", "convergence_threshold", "kmeans_restarts",
              "kmeans_iters", "warm_start", "verbatim_kl_sign"},
             "dec");
  DecConfig dec;
  read_key(j, "k", dec.k, "dec");
  read_key(j, "t_dof", dec.t_dof, "dec");
  read_key(j, "lr", dec.lr, "dec");
  read_key(j, "batch_size", dec.batch_size, "dec");
  read_key(j, "pretrain_iters", dec.pretrain_iters, "dec");
  read_key(j, "corruption_std", dec.corruption_std, "dec");
  read_key(j, "max_iters", dec.max_iters, "dec");
  read_key(j, "max_epochs", dec.max_epochs, "dec");
  read_key(j, "convergence_threshold", dec.convergence_threshold, "dec");
  read_key(j, "kmeans_restarts", dec.kmeans_restarts, "dec");
  read_key(j, "kmeans_iters", dec.kmeans_iters, "dec");
  read_key(j, "warm_start", dec.warm_start, "dec");
  read_key(j, "verbatim_kl_sign", dec.verbatim_kl_sign, "dec");
  return dec;
}

TrainConfig parse_train(const json& j) {
  check_keys(j,
             {"variant", "mode", "outer_loops", "h", "trunk_width",
              "single_target_index", "hyper", "dec"},
             "train");
  TrainConfig tc;
  if (j.contains("variant")) {
    tc.variant = variant_from_name(j.at("variant").get<std::string>());
  }
  if (j.contains("mode")) {
    std::string mode = j.at("mode").get<std::string>();
    if (mode == "joint") {
      tc.mode = Mode::kJoint;
    } else if (mode == "alternating") {
      tc.mode = Mode::kAlternating;
    } else {
      throw ConfigError("train: mode '" + mode + "' is neither joint nor alternating");
    }
  }
  read_key(j, "outer_loops", tc.outer_loops, "train");
  read_key(j, "h", tc.h, "train");
  read_key(j, "trunk_width", tc.trunk_width, "train");
  read_key(j, "single_target_index", tc.single_target_index, "train");
  if (j.contains("hyper")) tc.hp = parse_hyper(j.at("hyper"));
  if (j.contains("dec")) tc.dec = parse_dec(j.at("dec"));
  return tc;
}

// ---- run plumbing shared by train/ablate/sweep ----

struct RunJob {
  Variant variant = Variant::kAmean;
  uint64_t seed = 0;
  int k = 0;  // dec.k for this run
  const BlendedDataset* dataset = nullptr;
  std::string run_dir;
};

struct RunOutcome {
  bool ok = false;
  int exit_code = 0;
  std::string message;
  MetricsReport report;
};

MetricsReport execute_run(const RunJob& job, const TrainConfig& base) {
  const BlendedDataset& ds = *job.dataset;
  TrainConfig tc = base;
  tc.seed = job.seed;
  tc.variant = job.variant;
  tc.dec.k = job.k;

  TrainResult res = train_on_dataset(ds, tc);

  fs::create_directories(job.run_dir);
  save_checkpoint(res.bundle, job.run_dir + "/checkpoint.bin");
  export_history_csv(res.history, job.run_dir + "/history.csv");
  {
    std::ofstream out(job.run_dir + "/history.json");
    if (!out) throw IoError("cannot open " + job.run_dir + "/history.json for writing");
    out << history_summary_json(res.history);
  }
  for (size_t i = 0; i < res.history.partitions.size(); ++i) {
    export_partition(res.history.partitions[i],
                     job.run_dir + "/partition_outer" + std::to_string(i + 1) + ".csv");
  }

  MetricsReport report = evaluate_bundle(res.bundle, ds, Split::kTest, tc.dec.t_dof);
  report.variant = variant_name(job.variant);
  report.seed = job.seed;
  save_metrics(report, job.run_dir + "/metrics.json");
  return report;
}

// Fans jobs over `threads` workers; each failure is captured, not thrown.
std::vector<RunOutcome> execute_all(const std::vector<RunJob>& jobs,
                                    const TrainConfig& base, int threads) {
  std::vector<RunOutcome> outcomes(jobs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        outcomes[i].report = execute_run(jobs[i], base);
        outcomes[i].ok = true;
      } catch (const NumericError& e) {
        outcomes[i].exit_code = 2;
        outcomes[i].message = e.what();
      } catch (const std::exception& e) {
        outcomes[i].exit_code = 1;
        outcomes[i].message = e.what();
      }
    }
  };
  int n_workers = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  return outcomes;
}

// Exit code for a batch: numeric failures dominate, then config/IO failures.
int combine_outcomes(const std::vector<RunOutcome>& outcomes,
                     const std::vector<RunJob>& jobs) {
  int code = 0;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].ok) continue;
    std::cerr << "run " << variant_name(jobs[i].variant) << " seed " << jobs[i].seed
              << " failed: " << outcomes[i].message << "\n";
    code = std::max(code, outcomes[i].exit_code);
  }
  return code;
}

// Datasets for each seed: one shared load, or per-seed generation.
std::vector<BlendedDataset> materialize_datasets(const ExperimentConfig& cfg) {
  std::vector<BlendedDataset> out;
  if (cfg.dataset_path.has_value()) {
    BlendedDataset ds = load_dataset(*cfg.dataset_path);
    for (size_t i = 0; i < cfg.seeds.size(); ++i) out.push_back(ds);
  } else {
    DataSpec spec = cfg.data.value_or(default_task_spec());
    for (uint64_t seed : cfg.seeds) out.push_back(generate_blended(spec, seed));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

double std_of(const std::vector<double>& v) {
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

}  // namespace

DataSpec parse_data_spec(const std::string& json_text) {
  return parse_data_spec_json(parse_json(json_text, "data spec"));
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j = parse_json(json_text, "experiment config");
  check_keys(j, {"data", "dataset", "train", "seeds", "out"}, "experiment config");
  ExperimentConfig cfg;
  if (j.contains("data") && j.contains("dataset")) {
    throw ConfigError("experiment config: give either 'data' or 'dataset', not both");
  }
  if (j.contains("data")) cfg.data = parse_data_spec_json(j.at("data"));
  if (j.contains("dataset")) cfg.dataset_path = j.at("dataset").get<std::string>();
  if (j.contains("train")) cfg.train = parse_train(j.at("train"));
  read_key(j, "seeds", cfg.seeds, "experiment config");
  if (cfg.seeds.empty()) throw ConfigError("experiment config: 'seeds' is empty");
  read_key(j, "out", cfg.out_dir, "experiment config");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_file(path));
}

TrainConfig parse_train_config(const std::string& json_text) {
  return parse_train(parse_json(json_text, "train config"));
}

TrainResult train_on_dataset(const BlendedDataset& ds, const TrainConfig& config) {
  TrainConfig tc = config;
  TrainerView view = ds.trainer_view();
  if (tc.variant == Variant::kExplicitSubTarget) {
    EvalView oracle = ds.eval_view(Split::kTrain);
    tc.oracle_groups = oracle.subtarget;
    tc.dec.k = ds.k;  // the oracle grouping fixes the group count
  } else if (tc.variant == Variant::kSingleTarget) {
    EvalView oracle = ds.eval_view(Split::kTrain);
    int want = tc.single_target_index - 1;
    if (want < 0 || want >= ds.k) {
      throw ConfigError("single_target_index " + std::to_string(tc.single_target_index) +
                        " outside [1, " + std::to_string(ds.k) + "]");
    }
    int n = 0;
    for (int s : oracle.subtarget) n += (s == want);
    if (n == 0) throw ConfigError("single-target: sub-target has no train rows");
    Mat filtered(n, view.d);
    int row = 0;
    for (int i = 0; i < oracle.x.rows; ++i) {
      if (oracle.subtarget[i] != want) continue;
      for (int jc = 0; jc < view.d; ++jc) filtered.at(row, jc) = oracle.x.at(i, jc);
      ++row;
    }
    view.target_x = filtered;
  }
  return run_training(view, tc);
}

int cmd_generate(const std::string& spec_path, const std::string& out_path,
                 uint64_t seed) {
  try {
    std::string text = read_file(spec_path);
    DataSpec spec = parse_data_spec(text);
    BlendedDataset ds = generate_blended(spec, seed);
    save_dataset(ds, out_path);
    char hash_hex[32];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    ojson manifest;
    manifest["spec_hash"] = std::string(hash_hex);
    manifest["seed"] = seed;
    manifest["d"] = ds.d;
    manifest["m"] = ds.m;
    manifest["k"] = ds.k;
    manifest["n_source"] = ds.source_x.rows;
    manifest["n_target"] = ds.n_target();
    manifest["pi"] = ds.pi;
    std::ofstream out(out_path + ".manifest.json");
    if (!out) throw IoError("cannot open " + out_path + ".manifest.json for writing");
    out << manifest.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "generate failed: " << e.what() << "\n";
    return 1;
  }
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              int threads) {
  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    std::vector<BlendedDataset> datasets = materialize_datasets(cfg);

    std::vector<RunJob> jobs;
    for (size_t i = 0; i < cfg.seeds.size(); ++i) {
      RunJob job;
      job.variant = cfg.train.variant;
      job.seed = cfg.seeds[i];
      job.k = cfg.train.dec.k;
      job.dataset = &datasets[i];
      job.run_dir = cfg.out_dir + "/" + variant_name(job.variant) + "/seed" +
                    std::to_string(job.seed);
      jobs.push_back(job);
    }
    std::vector<RunOutcome> outcomes = execute_all(jobs, cfg.train, threads);
    return combine_outcomes(outcomes, jobs);
  } catch (const std::exception& e) {
    std::cerr << "train failed: " << e.what() << "\n";
    return 1;
  }
}

int cmd_ablate(const std::string& config_path, const std::string& out_override,
               int threads) {
  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    std::vector<BlendedDataset> datasets = materialize_datasets(cfg);

    const Variant variants[] = {Variant::kSourceOnly, Variant::kNoMeta,
                                Variant::kExplicitSubTarget,
                                Variant::kStaticKClustering, Variant::kAmean};
    std::vector<RunJob> jobs;
    for (Variant v : variants) {
      for (size_t i = 0; i < cfg.seeds.size(); ++i) {
        RunJob job;
        job.variant = v;
        job.seed = cfg.seeds[i];
        job.k = cfg.train.dec.k;
        job.dataset = &datasets[i];
        job.run_dir = cfg.out_dir + "/" + variant_name(v) + "/seed" +
                      std::to_string(job.seed);
        jobs.push_back(job);
      }
    }
    std::vector<RunOutcome> outcomes = execute_all(jobs, cfg.train, threads);
    int code = combine_outcomes(outcomes, jobs);
    if (code != 0) return code;

    // Attach the transfer-gain comparison to every same-seed report, then
    // aggregate per variant.
    size_t per_variant = cfg.seeds.size();
    auto outcome_of = [&](int vi, size_t si) -> RunOutcome& {
      return outcomes[vi * per_variant + si];
    };
    for (int vi = 1; vi < 5; ++vi) {
      for (size_t si = 0; si < per_variant; ++si) {
        MetricsReport& rep = outcome_of(vi, si).report;
        attach_source_only(rep, outcome_of(0, si).report);
        save_metrics(rep, jobs[vi * per_variant + si].run_dir + "/metrics.json");
      }
    }

    fs::create_directories(cfg.out_dir);
    std::ofstream csv(cfg.out_dir + "/ablation.csv");
    if (!csv) throw IoError("cannot open " + cfg.out_dir + "/ablation.csv for writing");
    csv << "variant,seeds,mean_acc_btda,std_acc_btda\n";
    ojson table = ojson::array();
    for (int vi = 0; vi < 5; ++vi) {
      std::vector<double> accs;
      for (size_t si = 0; si < per_variant; ++si) {
        accs.push_back(outcome_of(vi, si).report.acc_btda);
      }
      std::string name = variant_name(variants[vi]);
      csv << name << ',' << per_variant << ',' << fmt17(mean_of(accs)) << ','
          << fmt17(std_of(accs)) << '\n';
      ojson row;
      row["variant"] = name;
      row["seeds"] = per_variant;
      row["mean_acc_btda"] = mean_of(accs);
      row["std_acc_btda"] = std_of(accs);
      table.push_back(row);
    }
    std::ofstream js(cfg.out_dir + "/ablation.json");
    if (!js) throw IoError("cannot open " + cfg.out_dir + "/ablation.json for writing");
    js << table.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "ablate failed: " << e.what() << "\n";
    return 1;
  }
}

int cmd_sweep_k(const std::string& config_path, const std::vector<int>& k_list,
                const std::string& out_override, int threads) {
  try {
    if (k_list.empty()) throw ConfigError("sweep-k: empty k list");
    for (int k : k_list) {
      if (k < 2) throw ConfigError("sweep-k: k must be >= 2, got " + std::to_string(k));
    }
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    std::vector<BlendedDataset> datasets = materialize_datasets(cfg);

    std::vector<RunJob> jobs;
    for (int k : k_list) {
      for (size_t i = 0; i < cfg.seeds.size(); ++i) {
        RunJob job;
        job.variant = Variant::kAmean;
        job.seed = cfg.seeds[i];
        job.k = k;
        job.dataset = &datasets[i];
        job.run_dir = cfg.out_dir + "/k" + std::to_string(k) + "/seed" +
                      std::to_string(job.seed);
        jobs.push_back(job);
      }
    }
    std::vector<RunOutcome> outcomes = execute_all(jobs, cfg.train, threads);
    int code = combine_outcomes(outcomes, jobs);
    if (code != 0) return code;

    fs::create_directories(cfg.out_dir);
    std::ofstream csv(cfg.out_dir + "/sweep_k.csv");
    if (!csv) throw IoError("cannot open " + cfg.out_dir + "/sweep_k.csv for writing");
    csv << "k,seeds,mean_acc_btda,std_acc_btda\n";
    ojson rows = ojson::array();
    int best_k = k_list.front();
    double best_mean = -1.0;
    size_t per_k = cfg.seeds.size();
    for (size_t ki = 0; ki < k_list.size(); ++ki) {
      std::vector<double> accs;
      for (size_t si = 0; si < per_k; ++si) {
        accs.push_back(outcomes[ki * per_k + si].report.acc_btda);
      }
      double m = mean_of(accs);
      csv << k_list[ki] << ',' << per_k << ',' << fmt17(m) << ',' << fmt17(std_of(accs))
          << '\n';
      ojson row;
      row["k"] = k_list[ki];
      row["seeds"] = per_k;
      row["mean_acc_btda"] = m;
      row["std_acc_btda"] = std_of(accs);
      rows.push_back(row);
      if (m > best_mean) {
        best_mean = m;
        best_k = k_list[ki];
      }
    }
    ojson summary;
    summary["rows"] = rows;
    summary["best_k"] = best_k;
    summary["best_mean_acc_btda"] = best_mean;
    std::ofstream js(cfg.out_dir + "/sweep_k.json");
    if (!js) throw IoError("cannot open " + cfg.out_dir + "/sweep_k.json for writing");
    js << summary.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "sweep-k failed: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
             const std::string& out_dir) {
  try {
    ModelBundle bundle = load_checkpoint(checkpoint_path);
    BlendedDataset ds = load_dataset(dataset_path);
    MetricsReport report = evaluate_bundle(bundle, ds, Split::kTest);
    report.variant = "eval";
    fs::create_directories(out_dir);
    save_metrics(report, out_dir + "/metrics.json");
    export_embeddings(bundle, ds, out_dir + "/embeddings.csv");
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "eval failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace amean
