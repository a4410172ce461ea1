// Blended-target metrics and diagnostics.
//
// The headline number is the mixture-weighted per-sub-target accuracy; it is
// compared against a source-only baseline (transfer gain, negative = negative
// transfer) and against single-target training legs (the cost of blending).
// Equal-weight variants remove the mixture weighting. Comparison fields are
// optional: a report carries them only after the corresponding baseline runs
// are attached.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "amean/data.hpp"
#include "amean/networks.hpp"

namespace amean {

// Published mixture weights for the full-scale benchmark suites; each is on
// the simplex and usable wherever empirical proportions are not available.
extern const std::vector<double> kDigitFiveWeights;
extern const std::vector<double> kOffice31Weights;
extern const std::vector<double> kOfficeHomeWeights;

// ContractError unless w is a probability vector (entries in [0,1], summing
// to 1 within 1e-9).
void validate_simplex(const std::vector<double>& w);

// Mixture-weighted accuracy: sum_j w_j * acc_j.
double acc_btda(const std::vector<double>& per_subtarget_acc,
                const std::vector<double>& weights);

struct AntResult {
  double gain = 0.0;  // adapted minus source-only, sign preserved
  bool flag = false;  // true marks negative transfer
};
AntResult ant(double acc_adapted, double acc_source_only);

// Blending cost: weighted accuracy minus the weighted single-target legs.
double rnt(double acc_btda_value, const std::vector<double>& mtda_accs,
           const std::vector<double>& weights);

struct EwMetrics {
  double acc_ew = 0.0;   // unweighted mean per-sub-target accuracy
  double gain_ew = 0.0;  // against the unweighted source-only mean
  bool flag_ew = false;
  double rnt_ew = 0.0;   // against the unweighted single-target mean
};
EwMetrics equal_weight_metrics(const std::vector<double>& per_subtarget_acc,
                               const std::vector<double>& source_only_acc,
                               const std::vector<double>& mtda_accs);

struct MetricsReport {
  std::string variant;
  uint64_t seed = 0;
  int n_rows = 0;  // evaluated records

  std::vector<double> per_subtarget_acc;  // index j-1 for sub-target j
  std::vector<double> weights;            // empirical split proportions
  double acc_btda = 0.0;
  double acc_ew = 0.0;
  std::optional<double> partition_ari;  // diagnostic vs oracle sub-targets

  // Filled by attach_source_only.
  std::optional<double> acc_source_only;
  std::optional<double> ant_gain;
  std::optional<bool> ant_flag;
  std::optional<double> ant_ew_gain;
  std::optional<bool> ant_ew_flag;

  // Filled by attach_mtda_legs.
  std::optional<std::vector<double>> mtda_accs;
  std::optional<double> acc_mtda;
  std::optional<double> rnt;
  std::optional<double> rnt_ew;
};

// Classifies the requested split with the bundle's feature/classifier pair,
// scores per sub-target with empirical-proportion weights, and reports the
// partition quality of the bundle's current meta state as adjusted Rand index
// against the oracle sub-targets. Comparison fields are left absent.
MetricsReport evaluate_bundle(const ModelBundle& bundle, const BlendedDataset& ds,
                              Split split, double t_dof = 1.0);

void attach_source_only(MetricsReport& report, const MetricsReport& source_only);
void attach_mtda_legs(MetricsReport& report, const std::vector<double>& leg_accs);

std::string metrics_to_json_string(const MetricsReport& report);
MetricsReport metrics_from_json_string(const std::string& text);
void save_metrics(const MetricsReport& report, const std::string& path);
MetricsReport load_metrics(const std::string& path);

// CSV of hidden labels and features F(x) for the target test split:
// index,class,subtarget,f_1..f_h (sub-target written 1-based).
void export_embeddings(const ModelBundle& bundle, const BlendedDataset& ds,
                       const std::string& path);

// Agreement between two labelings of the same rows, chance-corrected; 1 is
// identical up to relabeling, 0 is chance level.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// Row-wise argmax with ties resolved to the smallest index.
int argmax_row(const Mat& probs, int row);

}  // namespace amean
