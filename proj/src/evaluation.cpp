#include "amean/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "amean/meta_learner.hpp"

namespace amean {

const std::vector<double> kDigitFiveWeights = {0.236, 0.236, 0.236, 0.236, 0.056};
const std::vector<double> kOffice31Weights = {0.686, 0.121, 0.193};
const std::vector<double> kOfficeHomeWeights = {0.155, 0.280, 0.285, 0.280};

void validate_simplex(const std::vector<double>& w) {
  if (w.empty()) throw ContractError("weight vector is empty");
  double sum = 0.0;
  for (double v : w) {
    if (v < 0.0 || v > 1.0) {
      throw ContractError("weight " + fmt17(v) + " outside [0, 1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ContractError("weights sum to " + fmt17(sum) + ", expected 1");
  }
}

double acc_btda(const std::vector<double>& per_subtarget_acc,
                const std::vector<double>& weights) {
  if (per_subtarget_acc.size() != weights.size()) {
    throw ContractError("acc_btda: " + std::to_string(per_subtarget_acc.size()) +
                        " accuracies vs " + std::to_string(weights.size()) +
                        " weights");
  }
  validate_simplex(weights);
  double acc = 0.0;
  for (size_t j = 0; j < weights.size(); ++j) {
    acc += weights[j] * per_subtarget_acc[j];
  }
  return acc;
}

AntResult ant(double acc_adapted, double acc_source_only) {
  AntResult r;
  r.gain = acc_adapted - acc_source_only;
  r.flag = r.gain < 0.0;
  return r;
}

double rnt(double acc_btda_value, const std::vector<double>& mtda_accs,
           const std::vector<double>& weights) {
  return acc_btda_value - acc_btda(mtda_accs, weights);
}

EwMetrics equal_weight_metrics(const std::vector<double>& per_subtarget_acc,
                               const std::vector<double>& source_only_acc,
                               const std::vector<double>& mtda_accs) {
  size_t k = per_subtarget_acc.size();
  if (source_only_acc.size() != k || mtda_accs.size() != k) {
    throw ContractError("equal_weight_metrics: vector lengths " +
                        std::to_string(k) + ", " +
                        std::to_string(source_only_acc.size()) + ", " +
                        std::to_string(mtda_accs.size()) + " differ");
  }
  if (k == 0) throw ContractError("equal_weight_metrics: empty vectors");
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
  };
  EwMetrics ew;
  ew.acc_ew = mean_of(per_subtarget_acc);
  ew.gain_ew = ew.acc_ew - mean_of(source_only_acc);
  ew.flag_ew = ew.gain_ew < 0.0;
  ew.rnt_ew = ew.acc_ew - mean_of(mtda_accs);
  return ew;
}

int argmax_row(const Mat& probs, int row) {
  int best = 0;
  for (int j = 1; j < probs.cols; ++j) {
    if (probs.at(row, j) > probs.at(row, best)) best = j;
  }
  return best;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) {
    throw ContractError("adjusted_rand_index: " + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()) + " labels");
  }
  if (a.empty()) throw ContractError("adjusted_rand_index: empty labelings");
  int ka = 0, kb = 0;
  for (int v : a) {
    if (v < 0) throw ContractError("adjusted_rand_index: negative label");
    ka = std::max(ka, v + 1);
  }
  for (int v : b) {
    if (v < 0) throw ContractError("adjusted_rand_index: negative label");
    kb = std::max(kb, v + 1);
  }
  std::vector<long long> table(static_cast<size_t>(ka) * kb, 0);
  std::vector<long long> ra(ka, 0), rb(kb, 0);
  for (size_t i = 0; i < a.size(); ++i) {
    ++table[static_cast<size_t>(a[i]) * kb + b[i]];
    ++ra[a[i]];
    ++rb[b[i]];
  }
  auto choose2 = [](long long n) { return n * (n - 1) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (long long v : table) index += choose2(v);
  for (long long v : ra) sum_a += choose2(v);
  for (long long v : rb) sum_b += choose2(v);
  double total = choose2(static_cast<long long>(a.size()));
  double expected = sum_a * sum_b / total;
  double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both labelings degenerate
  return (index - expected) / (max_index - expected);
}

MetricsReport evaluate_bundle(const ModelBundle& bundle, const BlendedDataset& ds,
                              Split split, double t_dof) {
  if (ds.d != bundle.d || ds.m != bundle.m) {
    throw DimensionError("evaluate_bundle: dataset is d=" + std::to_string(ds.d) +
                         " m=" + std::to_string(ds.m) + ", bundle expects d=" +
                         std::to_string(bundle.d) + " m=" + std::to_string(bundle.m));
  }
  EvalView view = ds.eval_view(split);
  if (view.x.rows == 0) throw ContractError("evaluate_bundle: split has no rows");

  Mat probs = bundle.c.forward_plain(bundle.f.forward_plain(view.x));
  std::vector<int> predicted(view.x.rows);
  for (int i = 0; i < view.x.rows; ++i) predicted[i] = argmax_row(probs, i);

  MetricsReport report;
  report.n_rows = view.x.rows;
  std::vector<int> total(ds.k, 0), correct(ds.k, 0);
  for (int i = 0; i < view.x.rows; ++i) {
    ++total[view.subtarget[i]];
    if (predicted[i] == view.label[i]) ++correct[view.subtarget[i]];
  }
  report.per_subtarget_acc.resize(ds.k);
  report.weights.resize(ds.k);
  for (int j = 0; j < ds.k; ++j) {
    if (total[j] == 0) {
      throw ContractError("evaluate_bundle: sub-target " + std::to_string(j + 1) +
                          " has no rows in the split");
    }
    report.per_subtarget_acc[j] = static_cast<double>(correct[j]) / total[j];
    report.weights[j] = static_cast<double>(total[j]) / view.x.rows;
  }
  report.acc_btda = acc_btda(report.per_subtarget_acc, report.weights);
  double acc_sum = 0.0;
  for (double a : report.per_subtarget_acc) acc_sum += a;
  report.acc_ew = acc_sum / ds.k;

  // Partition quality of the current meta state (class/centroid count is the
  // bundle's k, which may differ from the dataset's true k).
  MetaPartition partition =
      split_targets(view.x, bundle.f, bundle.c, bundle.u1, bundle.centroids.w, t_dof);
  report.partition_ari = adjusted_rand_index(partition.assign, view.subtarget);
  return report;
}

void attach_source_only(MetricsReport& report, const MetricsReport& source_only) {
  if (source_only.per_subtarget_acc.size() != report.per_subtarget_acc.size()) {
    throw ContractError("attach_source_only: baseline has " +
                        std::to_string(source_only.per_subtarget_acc.size()) +
                        " sub-targets, report has " +
                        std::to_string(report.per_subtarget_acc.size()));
  }
  report.acc_source_only = source_only.acc_btda;
  AntResult a = ant(report.acc_btda, source_only.acc_btda);
  report.ant_gain = a.gain;
  report.ant_flag = a.flag;
  double gain_ew = report.acc_ew - source_only.acc_ew;
  report.ant_ew_gain = gain_ew;
  report.ant_ew_flag = gain_ew < 0.0;
}

void attach_mtda_legs(MetricsReport& report, const std::vector<double>& leg_accs) {
  if (leg_accs.size() != report.per_subtarget_acc.size()) {
    throw ContractError("attach_mtda_legs: " + std::to_string(leg_accs.size()) +
                        " legs for " + std::to_string(report.per_subtarget_acc.size()) +
                        " sub-targets");
  }
  report.mtda_accs = leg_accs;
  report.acc_mtda = acc_btda(leg_accs, report.weights);
  report.rnt = report.acc_btda - *report.acc_mtda;
  double leg_sum = 0.0;
  for (double a : leg_accs) leg_sum += a;
  report.rnt_ew = report.acc_ew - leg_sum / leg_accs.size();
}

namespace {

using ojson = nlohmann::ordered_json;

template <typename T>
void put_opt(ojson& j, const char* key, const std::optional<T>& v) {
  if (v.has_value()) {
    j[key] = *v;
  } else {
    j[key] = nullptr;
  }
}

template <typename T>
std::optional<T> get_opt(const ojson& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

std::string metrics_to_json_string(const MetricsReport& r) {
  ojson j;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["n_rows"] = r.n_rows;
  j["per_subtarget_acc"] = r.per_subtarget_acc;
  j["weights"] = r.weights;
  j["acc_btda"] = r.acc_btda;
  j["acc_ew"] = r.acc_ew;
  put_opt(j, "partition_ari", r.partition_ari);
  put_opt(j, "acc_source_only", r.acc_source_only);
  put_opt(j, "ant_gain", r.ant_gain);
  put_opt(j, "ant_flag", r.ant_flag);
  put_opt(j, "ant_ew_gain", r.ant_ew_gain);
  put_opt(j, "ant_ew_flag", r.ant_ew_flag);
  put_opt(j, "mtda_accs", r.mtda_accs);
  put_opt(j, "acc_mtda", r.acc_mtda);
  put_opt(j, "rnt", r.rnt);
  put_opt(j, "rnt_ew", r.rnt_ew);
  return j.dump(2) + "\n";
}

MetricsReport metrics_from_json_string(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("metrics JSON: ") + e.what());
  }
  MetricsReport r;
  try {
    r.variant = j.at("variant").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.n_rows = j.at("n_rows").get<int>();
    r.per_subtarget_acc = j.at("per_subtarget_acc").get<std::vector<double>>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.acc_btda = j.at("acc_btda").get<double>();
    r.acc_ew = j.at("acc_ew").get<double>();
    r.partition_ari = get_opt<double>(j, "partition_ari");
    r.acc_source_only = get_opt<double>(j, "acc_source_only");
    r.ant_gain = get_opt<double>(j, "ant_gain");
    r.ant_flag = get_opt<bool>(j, "ant_flag");
    r.ant_ew_gain = get_opt<double>(j, "ant_ew_gain");
    r.ant_ew_flag = get_opt<bool>(j, "ant_ew_flag");
    r.mtda_accs = get_opt<std::vector<double>>(j, "mtda_accs");
    r.acc_mtda = get_opt<double>(j, "acc_mtda");
    r.rnt = get_opt<double>(j, "rnt");
    r.rnt_ew = get_opt<double>(j, "rnt_ew");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics JSON: ") + e.what());
  }
  return r;
}

void save_metrics(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << metrics_to_json_string(report);
  if (!out.good()) throw IoError("write failed for " + path);
}

MetricsReport load_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return metrics_from_json_string(buf.str());
}

void export_embeddings(const ModelBundle& bundle, const BlendedDataset& ds,
                       const std::string& path) {
  EvalView view = ds.eval_view(Split::kTest);
  Mat feat = bundle.f.forward_plain(view.x);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "index,class,subtarget";
  for (int j = 1; j <= feat.cols; ++j) out << ",f_" << j;
  out << '\n';
  for (int i = 0; i < feat.rows; ++i) {
    out << view.dataset_index[i] << ',' << view.label[i] << ','
        << (view.subtarget[i] + 1);
    for (int j = 0; j < feat.cols; ++j) out << ',' << fmt17(feat.at(i, j));
    out << '\n';
  }
  if (!out.good()) throw IoError("write failed for " + path);
}

}  // namespace amean
