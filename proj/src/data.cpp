#include "amean/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "amean/rng.hpp"

namespace amean {
namespace {

constexpr double kMinSeparationStds = 4.0;
constexpr int kCenterAttempts = 100;

// Integer allocation of n slots proportional to weights: floors first, then
// one extra slot per largest fractional remainder (ties to the lower index).
std::vector<int> largest_remainder(const std::vector<double>& weights, int n) {
  int k = static_cast<int>(weights.size());
  std::vector<int> counts(k);
  std::vector<std::pair<double, int>> rem(k);
  int used = 0;
  for (int j = 0; j < k; ++j) {
    double exact = weights[j] * n;
    counts[j] = static_cast<int>(std::floor(exact));
    used += counts[j];
    rem[j] = {exact - counts[j], j};
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (int i = 0; i < n - used; ++i) ++counts[rem[i].second];
  return counts;
}

// Class slots inside a block of n rows: as even as possible, low classes first.
std::vector<int> balanced_class_counts(int n, int m) {
  std::vector<int> counts(m, n / m);
  for (int c = 0; c < n % m; ++c) ++counts[c];
  return counts;
}

double sq_dist(const Mat& a, int ra, const Mat& b, int rb) {
  double s = 0.0;
  for (int j = 0; j < a.cols; ++j) {
    double diff = a.at(ra, j) - b.at(rb, j);
    s += diff * diff;
  }
  return s;
}

Mat sample_centers(const DataSpec& spec, Rng& rng) {
  double min_sep = kMinSeparationStds * spec.cluster_std;
  for (int attempt = 0; attempt < kCenterAttempts; ++attempt) {
    Mat centers(spec.m, spec.d);
    for (double& v : centers.a) v = rng.uniform(-spec.center_box, spec.center_box);
    bool ok = true;
    for (int a = 0; a < spec.m && ok; ++a) {
      for (int b = a + 1; b < spec.m; ++b) {
        if (sq_dist(centers, a, centers, b) < min_sep * min_sep) {
          ok = false;
          break;
        }
      }
    }
    if (ok) return centers;
  }
  throw GenerationError("could not place " + std::to_string(spec.m) +
                        " class centers at least " + fmt17(min_sep) +
                        " apart in " + std::to_string(kCenterAttempts) +
                        " attempts; widen center_box or shrink cluster_std");
}

// scale .* rotate(x + class_offset) + translation + noise, rotation acting in
// the first two dimensions.
void apply_transform(const DomainTransformSpec& t, const Mat& centers, int cls,
                     int subtarget, int m, std::vector<double>& x, Rng& noise_rng) {
  int d = static_cast<int>(x.size());
  if (t.label_offset != 0.0) {
    int other = (cls + subtarget + 1) % m;
    for (int j = 0; j < d; ++j) {
      x[j] += t.label_offset * (centers.at(other, j) - centers.at(cls, j));
    }
  }
  if (t.rotation != 0.0) {
    double c = std::cos(t.rotation), s = std::sin(t.rotation);
    double x0 = x[0], x1 = x[1];
    x[0] = c * x0 - s * x1;
    x[1] = s * x0 + c * x1;
  }
  for (int j = 0; j < d; ++j) {
    if (!t.scale.empty()) x[j] *= t.scale[j];
    if (!t.translation.empty()) x[j] += t.translation[j];
    if (t.noise_std != 0.0) x[j] += t.noise_std * noise_rng.gaussian();
  }
}

void check_simplex_config(const std::vector<double>& pi, int k) {
  if (static_cast<int>(pi.size()) != k) {
    throw ConfigError("pi has " + std::to_string(pi.size()) + " entries for k = " +
                      std::to_string(k));
  }
  double sum = 0.0;
  for (double p : pi) {
    if (p < 0.0 || p > 1.0) throw ConfigError("pi entry " + fmt17(p) + " outside [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("pi sums to " + fmt17(sum) + ", expected 1");
  }
}

}  // namespace

void validate_data_spec(const DataSpec& spec) {
  if (spec.d < 2) throw ConfigError("data spec: d must be >= 2");
  if (spec.m < 2) throw ConfigError("data spec: m must be >= 2");
  if (spec.k < 2) throw ConfigError("data spec: k must be >= 2");
  if (spec.n_source < 1 || spec.n_target < 1) {
    throw ConfigError("data spec: n_source and n_target must be >= 1");
  }
  if (spec.cluster_std <= 0.0) throw ConfigError("data spec: cluster_std must be > 0");
  if (spec.center_box <= 0.0) throw ConfigError("data spec: center_box must be > 0");
  if (!spec.pi.empty()) check_simplex_config(spec.pi, spec.k);
  if (static_cast<int>(spec.transforms.size()) != spec.k) {
    throw ConfigError("data spec: " + std::to_string(spec.transforms.size()) +
                      " transforms for k = " + std::to_string(spec.k));
  }
  for (int j = 0; j < spec.k; ++j) {
    const DomainTransformSpec& t = spec.transforms[j];
    std::string who = "transform " + std::to_string(j + 1);
    if (!t.translation.empty() &&
        static_cast<int>(t.translation.size()) != spec.d) {
      throw ConfigError(who + ": translation length " +
                        std::to_string(t.translation.size()) + " for d = " +
                        std::to_string(spec.d));
    }
    if (!t.scale.empty()) {
      if (static_cast<int>(t.scale.size()) != spec.d) {
        throw ConfigError(who + ": scale length " + std::to_string(t.scale.size()) +
                          " for d = " + std::to_string(spec.d));
      }
      for (double s : t.scale) {
        if (s == 0.0) throw ConfigError(who + ": zero scale entry (not invertible)");
      }
    }
    if (t.noise_std < 0.0) throw ConfigError(who + ": negative noise_std");
  }
}

DataSpec default_task_spec() {
  DataSpec spec;
  spec.d = 2;
  spec.m = 4;
  spec.k = 2;
  spec.n_source = 600;
  spec.n_target = 600;
  spec.cluster_std = 1.0;
  spec.center_box = 10.0;
  spec.pi = {0.5, 0.5};
  DomainTransformSpec near_identity;
  near_identity.rotation = 0.15;
  near_identity.translation = {0.8, -0.6};
  near_identity.label_offset = 0.25;
  near_identity.noise_std = 0.15;
  DomainTransformSpec shifted;
  shifted.rotation = -0.35;
  shifted.translation = {-1.2, 1.0};
  shifted.scale = {1.15, 0.85};
  shifted.label_offset = 0.45;
  shifted.noise_std = 0.15;
  spec.transforms = {near_identity, shifted};
  return spec;
}

DataSpec harder_task_spec() {
  DataSpec spec;
  spec.d = 16;
  spec.m = 4;
  spec.k = 4;
  spec.n_source = 1200;
  spec.n_target = 1200;
  spec.cluster_std = 1.0;
  spec.center_box = 8.0;
  spec.pi = {0.4, 0.3, 0.2, 0.1};
  for (int j = 0; j < spec.k; ++j) {
    DomainTransformSpec t;
    t.rotation = 0.2 * (j + 1) * (j % 2 == 0 ? 1.0 : -1.0);
    t.translation.assign(spec.d, 0.0);
    for (int i = 0; i < spec.d; ++i) {
      t.translation[i] = ((i + j) % 3 - 1) * 0.8;
    }
    t.label_offset = 0.15 + 0.1 * j;
    t.noise_std = 0.2;
    spec.transforms.push_back(t);
  }
  return spec;
}

TrainerView BlendedDataset::trainer_view() const {
  TrainerView view;
  view.d = d;
  view.m = m;
  view.source_x = source_x;
  view.source_y = source_y;
  int n_train = 0;
  for (uint8_t t : target_test_) n_train += (t == 0);
  view.target_x = Mat(n_train, d);
  int row = 0;
  for (int i = 0; i < target_x_.rows; ++i) {
    if (target_test_[i]) continue;
    for (int j = 0; j < d; ++j) view.target_x.at(row, j) = target_x_.at(i, j);
    ++row;
  }
  return view;
}

EvalView BlendedDataset::eval_view(Split split) const {
  bool want_test = (split == Split::kTest);
  EvalView view;
  int n = 0;
  for (uint8_t t : target_test_) n += ((t != 0) == want_test);
  view.x = Mat(n, d);
  view.label.reserve(n);
  view.subtarget.reserve(n);
  view.dataset_index.reserve(n);
  int row = 0;
  for (int i = 0; i < target_x_.rows; ++i) {
    if ((target_test_[i] != 0) != want_test) continue;
    for (int j = 0; j < d; ++j) view.x.at(row, j) = target_x_.at(i, j);
    view.label.push_back(target_y_[i]);
    view.subtarget.push_back(target_sub_[i]);
    view.dataset_index.push_back(i);
    ++row;
  }
  return view;
}

BlendedDataset generate_blended(const DataSpec& spec, uint64_t seed) {
  validate_data_spec(spec);

  Rng center_rng = Rng::stream(seed, "data-centers");
  Mat centers = sample_centers(spec, center_rng);

  BlendedDataset ds;
  ds.d = spec.d;
  ds.m = spec.m;
  ds.k = spec.k;

  Rng source_rng = Rng::stream(seed, "data-source");
  ds.source_x = Mat(spec.n_source, spec.d);
  ds.source_y.reserve(spec.n_source);
  std::vector<int> class_counts = balanced_class_counts(spec.n_source, spec.m);
  int row = 0;
  for (int c = 0; c < spec.m; ++c) {
    for (int i = 0; i < class_counts[c]; ++i, ++row) {
      for (int j = 0; j < spec.d; ++j) {
        ds.source_x.at(row, j) =
            centers.at(c, j) + spec.cluster_std * source_rng.gaussian();
      }
      ds.source_y.push_back(c);
    }
  }

  std::vector<double> pi =
      spec.pi.empty() ? std::vector<double>(spec.k, 1.0 / spec.k) : spec.pi;
  std::vector<int> sub_counts = largest_remainder(pi, spec.n_target);

  Rng target_rng = Rng::stream(seed, "data-target");
  ds.target_x_ = Mat(spec.n_target, spec.d);
  ds.target_y_.reserve(spec.n_target);
  ds.target_sub_.reserve(spec.n_target);
  row = 0;
  for (int j = 0; j < spec.k; ++j) {
    std::vector<int> per_class = balanced_class_counts(sub_counts[j], spec.m);
    for (int c = 0; c < spec.m; ++c) {
      for (int i = 0; i < per_class[c]; ++i, ++row) {
        std::vector<double> x(spec.d);
        for (int dim = 0; dim < spec.d; ++dim) {
          x[dim] = centers.at(c, dim) + spec.cluster_std * target_rng.gaussian();
        }
        apply_transform(spec.transforms[j], centers, c, j, spec.m, x, target_rng);
        for (int dim = 0; dim < spec.d; ++dim) ds.target_x_.at(row, dim) = x[dim];
        ds.target_y_.push_back(c);
        ds.target_sub_.push_back(j);
      }
    }
  }

  // 80/20 split, stratified by (sub-target, class): each stratum contributes
  // a random fifth (rounded down) of its rows to the test set.
  Rng split_rng = Rng::stream(seed, "data-split");
  ds.target_test_.assign(spec.n_target, 0);
  for (int j = 0; j < spec.k; ++j) {
    for (int c = 0; c < spec.m; ++c) {
      std::vector<int> members;
      for (int i = 0; i < spec.n_target; ++i) {
        if (ds.target_sub_[i] == j && ds.target_y_[i] == c) members.push_back(i);
      }
      split_rng.shuffle(members);
      int n_test = static_cast<int>(members.size()) / 5;
      for (int i = 0; i < n_test; ++i) ds.target_test_[members[i]] = 1;
    }
  }

  ds.pi.resize(spec.k);
  for (int j = 0; j < spec.k; ++j) {
    ds.pi[j] = static_cast<double>(sub_counts[j]) / spec.n_target;
  }
  return ds;
}

void save_dataset(const BlendedDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "role,split";
  for (int j = 1; j <= ds.d; ++j) out << ",x_" << j;
  out << ",class,subtarget\n";
  for (int i = 0; i < ds.source_x.rows; ++i) {
    out << "source,train";
    for (int j = 0; j < ds.d; ++j) out << ',' << fmt17(ds.source_x.at(i, j));
    out << ',' << ds.source_y[i] << ",0\n";
  }
  for (int i = 0; i < ds.target_x_.rows; ++i) {
    out << "target," << (ds.target_test_[i] ? "test" : "train");
    for (int j = 0; j < ds.d; ++j) out << ',' << fmt17(ds.target_x_.at(i, j));
    out << ',' << ds.target_y_[i] << ',' << (ds.target_sub_[i] + 1) << '\n';
  }
  if (!out.good()) throw IoError("write failed for " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double_field(const std::string& s, int line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ParseError("line " + std::to_string(line_no) + ": '" + s +
                     "' is not a number");
  }
  return v;
}

int parse_int_field(const std::string& s, int line_no, const char* what) {
  bool ok = !s.empty() && s != "-";
  for (size_t i = 0; ok && i < s.size(); ++i) {
    ok = std::isdigit(static_cast<unsigned char>(s[i])) || (i == 0 && s[i] == '-');
  }
  if (!ok) {
    throw ParseError("line " + std::to_string(line_no) + ": '" + s +
                     "' is not an integer " + what);
  }
  return std::atoi(s.c_str());
}

}  // namespace

BlendedDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_csv_line(line);

  size_t pos = 0;
  auto expect = [&](const std::string& name) {
    if (pos >= header.size() || header[pos] != name) {
      throw SchemaError(path + ": missing column '" + name + "' at position " +
                        std::to_string(pos + 1));
    }
    ++pos;
  };
  expect("role");
  expect("split");
  int d = 0;
  while (pos < header.size() && header[pos] == "x_" + std::to_string(d + 1)) {
    ++d;
    ++pos;
  }
  if (d == 0) throw SchemaError(path + ": missing column 'x_1'");
  expect("class");
  expect("subtarget");
  if (pos != header.size()) {
    throw SchemaError(path + ": unexpected column '" + header[pos] + "'");
  }

  struct Row {
    bool is_source;
    bool is_test;
    std::vector<double> x;
    int cls;
    int sub;
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(f.size()));
    }
    Row r;
    if (f[0] == "source") {
      r.is_source = true;
    } else if (f[0] == "target") {
      r.is_source = false;
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": role '" + f[0] +
                       "' is neither source nor target");
    }
    if (f[1] == "train") {
      r.is_test = false;
    } else if (f[1] == "test") {
      r.is_test = true;
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": split '" + f[1] +
                       "' is neither train nor test");
    }
    if (r.is_source && r.is_test) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": source rows are train-only");
    }
    r.x.resize(d);
    for (int j = 0; j < d; ++j) r.x[j] = parse_double_field(f[2 + j], line_no);
    r.cls = parse_int_field(f[2 + d], line_no, "class");
    r.sub = parse_int_field(f[3 + d], line_no, "subtarget");
    if (r.cls < 0) {
      throw ParseError("line " + std::to_string(line_no) + ": negative class");
    }
    if (r.is_source ? (r.sub != 0) : (r.sub < 1)) {
      throw ParseError("line " + std::to_string(line_no) + ": subtarget " +
                       std::to_string(r.sub) + " invalid for role " + f[0]);
    }
    rows.push_back(std::move(r));
  }

  int n_source = 0, n_target = 0, max_class = -1, max_sub = 0;
  for (const Row& r : rows) {
    (r.is_source ? n_source : n_target)++;
    max_class = std::max(max_class, r.cls);
    if (!r.is_source) max_sub = std::max(max_sub, r.sub);
  }
  if (n_source == 0) throw ParseError(path + ": no source rows");
  if (n_target == 0) throw ParseError(path + ": no target rows");

  BlendedDataset ds;
  ds.d = d;
  ds.m = max_class + 1;
  ds.k = max_sub;
  ds.source_x = Mat(n_source, d);
  ds.source_y.reserve(n_source);
  ds.target_x_ = Mat(n_target, d);
  ds.target_y_.reserve(n_target);
  ds.target_sub_.reserve(n_target);
  ds.target_test_.reserve(n_target);
  int si = 0, ti = 0;
  for (const Row& r : rows) {
    if (r.is_source) {
      for (int j = 0; j < d; ++j) ds.source_x.at(si, j) = r.x[j];
      ds.source_y.push_back(r.cls);
      ++si;
    } else {
      for (int j = 0; j < d; ++j) ds.target_x_.at(ti, j) = r.x[j];
      ds.target_y_.push_back(r.cls);
      ds.target_sub_.push_back(r.sub - 1);
      ds.target_test_.push_back(r.is_test ? 1 : 0);
      ++ti;
    }
  }
  ds.pi.assign(ds.k, 0.0);
  for (int s : ds.target_sub_) ds.pi[s] += 1.0;
  for (double& p : ds.pi) p /= n_target;
  return ds;
}

Mat one_hot(const std::vector<int>& labels, int m) {
  Mat y = Mat::zeros(static_cast<int>(labels.size()), m);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= m) {
      throw DomainError("one_hot: label " + std::to_string(labels[i]) +
                        " outside [0, " + std::to_string(m) + ")");
    }
    y.at(static_cast<int>(i), labels[i]) = 1.0;
  }
  return y;
}

}  // namespace amean
