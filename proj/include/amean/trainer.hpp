// The training loop: alternate sub-target discovery with M adaptation
// iterations, in joint (reversal-based) or alternating (two-phase) update
// mode, plus the baseline and ablation variants the comparisons need.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amean/data.hpp"
#include "amean/losses.hpp"
#include "amean/meta_learner.hpp"
#include "amean/networks.hpp"

namespace amean {

enum class Variant {
  kAmean,             // full method: rediscover the partition every outer loop
  kNoMeta,            // source-target stream only, no sub-target machinery
  kExplicitSubTarget, // partition fixed to oracle domain IDs
  kStaticKClustering, // one discovery pass up front, partition frozen
  kSourceOnly,        // supervised source training, no adaptation
  kSingleTarget,      // source-target stream against one sub-target's rows
};
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);  // ConfigError on unknown

struct TrainConfig {
  HyperParams hp;
  DecConfig dec;
  Mode mode = Mode::kJoint;
  int outer_loops = 5;
  uint64_t seed = 0;
  Variant variant = Variant::kAmean;
  // kSingleTarget bookkeeping: which sub-target (1-based) the caller filtered
  // the target view down to.
  int single_target_index = 1;
  // kExplicitSubTarget: oracle group per target-train row, 0-based.
  std::vector<int> oracle_groups;
  int h = 64;
  int trunk_width = 100;
};

struct IterRecord {
  int iter = 0;   // 1-based, global across outer loops
  int outer = 0;  // 1-based
  double v_st = 0.0;
  double v_mt = 0.0;  // joint: group-stream value; alternating: confusion value
  double l_ent = 0.0;
  double l_vir = 0.0;
  double gamma = 0.0;
};

struct TrainHistory {
  std::vector<IterRecord> records;        // outer_loops x M entries
  std::vector<MetaPartition> partitions;  // snapshot per outer loop (if any)
  std::vector<DecStats> meta_stats;       // one per discovery pass
  std::vector<std::string> warnings;      // e.g. empty-group quota folds
  double wall_seconds = 0.0;              // in-memory only, never serialized
};

struct TrainResult {
  ModelBundle bundle;
  TrainHistory history;
};

// Plain SGD with momentum; velocity is keyed by parameter identity and
// persists across steps. Parameters absent from the graph are skipped.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void step(const Graph& g, const std::vector<Param*>& params);

 private:
  double lr_;
  double momentum_;
  std::unordered_map<const Param*, Mat> velocity_;
};

// One half of the batch is drawn uniformly from the source with labels; the
// other half gives each partition group an equal quota (repeat sampling when
// groups are small). An empty group's quota folds uniformly into the rest and
// appends a warning. Empty `groups` means an unpartitioned uniform half.
std::pair<SourceBatch, TargetBatch> make_batches(
    const Mat& source_x, const Mat& source_y_onehot, const Mat& target_x,
    const std::vector<int>& groups, int k, int batch_size, Rng& rng,
    std::vector<std::string>* warnings);

// Full run for any variant; dispatches on config.variant. The target view
// carries no sub-target identities — variants that need them (explicit
// oracle, single-target filtering) receive them through the config or a
// pre-filtered view.
TrainResult run_training(const TrainerView& data, const TrainConfig& config);

// Spec'd entry points: the full method and the comparison variants.
TrainResult run_amean(const TrainerView& data, const TrainConfig& config);
TrainResult run_variant(const TrainerView& data, const TrainConfig& config);

// CSV: iteration,outer,v_st,v_mt,l_ent,l_vir,gamma with 17-digit values.
void export_history_csv(const TrainHistory& history, const std::string& path);
// Deterministic JSON digest (counts, per-pass discovery stats, final record,
// warnings); excludes wall-clock so reruns are byte-identical.
std::string history_summary_json(const TrainHistory& history);

}  // namespace amean
