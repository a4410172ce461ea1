#include "amean/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace amean {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kAmean: return "amean";
    case Variant::kNoMeta: return "no-meta";
    case Variant::kExplicitSubTarget: return "explicit-sub-target";
    case Variant::kStaticKClustering: return "static-k-clustering";
    case Variant::kSourceOnly: return "source-only";
    case Variant::kSingleTarget: return "single-target";
  }
  throw ContractError("variant_name: unhandled variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "amean") return Variant::kAmean;
  if (name == "no-meta") return Variant::kNoMeta;
  if (name == "explicit-sub-target") return Variant::kExplicitSubTarget;
  if (name == "static-k-clustering") return Variant::kStaticKClustering;
  if (name == "source-only") return Variant::kSourceOnly;
  if (name == "single-target") return Variant::kSingleTarget;
  throw ConfigError("unknown variant '" + name + "'");
}

void SgdMomentum::step(const Graph& g, const std::vector<Param*>& params) {
  for (Param* p : params) {
    const Mat* grad = g.find_grad(*p);
    if (!grad) continue;
    Mat& v = velocity_[p];
    if (v.rows == 0) v = Mat::zeros(p->w.rows, p->w.cols);
    for (size_t i = 0; i < p->w.size(); ++i) {
      v.a[i] = momentum_ * v.a[i] + grad->a[i];
      p->w.a[i] -= lr_ * v.a[i];
    }
  }
}

std::pair<SourceBatch, TargetBatch> make_batches(
    const Mat& source_x, const Mat& source_y_onehot, const Mat& target_x,
    const std::vector<int>& groups, int k, int batch_size, Rng& rng,
    std::vector<std::string>* warnings) {
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw ContractError("batch size must be even and >= 2, got " +
                        std::to_string(batch_size));
  }
  if (source_x.rows < 1 || target_x.rows < 1) {
    throw ContractError("make_batches: empty source or target pool");
  }
  if (source_y_onehot.rows != source_x.rows) {
    throw DimensionError("make_batches: " + std::to_string(source_y_onehot.rows) +
                         " label rows for " + std::to_string(source_x.rows) +
                         " source rows");
  }
  if (!groups.empty() && static_cast<int>(groups.size()) != target_x.rows) {
    throw DimensionError("make_batches: " + std::to_string(groups.size()) +
                         " group tags for " + std::to_string(target_x.rows) +
                         " target rows");
  }
  int half = batch_size / 2;

  SourceBatch sb;
  sb.x = Mat(half, source_x.cols);
  sb.y = Mat(half, source_y_onehot.cols);
  for (int i = 0; i < half; ++i) {
    int r = static_cast<int>(rng.uniform_int(0, source_x.rows - 1));
    for (int j = 0; j < source_x.cols; ++j) sb.x.at(i, j) = source_x.at(r, j);
    for (int j = 0; j < source_y_onehot.cols; ++j) sb.y.at(i, j) = source_y_onehot.at(r, j);
  }

  TargetBatch tb;
  tb.x = Mat(half, target_x.cols);
  if (groups.empty()) {
    for (int i = 0; i < half; ++i) {
      int r = static_cast<int>(rng.uniform_int(0, target_x.rows - 1));
      for (int j = 0; j < target_x.cols; ++j) tb.x.at(i, j) = target_x.at(r, j);
    }
    return {std::move(sb), std::move(tb)};
  }

  std::vector<std::vector<int>> members(k);
  for (int i = 0; i < target_x.rows; ++i) {
    int gi = groups[i];
    if (gi < 0 || gi >= k) {
      throw DomainError("make_batches: group tag " + std::to_string(gi) +
                        " outside [0, " + std::to_string(k) + ")");
    }
    members[gi].push_back(i);
  }
  std::vector<int> active;
  for (int j = 0; j < k; ++j) {
    if (!members[j].empty()) {
      active.push_back(j);
    } else if (warnings) {
      warnings->push_back("meta-sub-target " + std::to_string(j + 1) +
                          " is empty; folding its batch quota into the remaining groups");
    }
  }
  if (active.empty()) throw ContractError("make_batches: every group is empty");

  int n_active = static_cast<int>(active.size());
  tb.group.resize(half);
  int row = 0;
  for (int idx = 0; idx < n_active; ++idx) {
    int quota = half / n_active + (idx < half % n_active ? 1 : 0);
    const std::vector<int>& pool = members[active[idx]];
    for (int q = 0; q < quota; ++q, ++row) {
      int r = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
      for (int j = 0; j < target_x.cols; ++j) tb.x.at(row, j) = target_x.at(r, j);
      tb.group[row] = active[idx];
    }
  }
  return {std::move(sb), std::move(tb)};
}

namespace {

void ensure_finite(double v, const char* term, int iter) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + term + " at iteration " +
                       std::to_string(iter));
  }
}

double value_or_zero(const Tensor& t) { return t.valid() ? t.scalar() : 0.0; }

std::vector<Param*> concat(std::vector<Param*> a, const std::vector<Param*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Appends only messages not already recorded (a persistently empty group
// would otherwise repeat its warning every iteration).
void merge_warnings(std::vector<std::string>& into, const std::vector<std::string>& fresh) {
  for (const std::string& w : fresh) {
    bool seen = false;
    for (const std::string& old : into) {
      if (old == w) {
        seen = true;
        break;
      }
    }
    if (!seen) into.push_back(w);
  }
}

void validate_train_config(const TrainerView& data, const TrainConfig& cfg) {
  if (cfg.outer_loops < 1) throw ConfigError("outer_loops must be >= 1");
  if (cfg.hp.iters_per_outer < 1) throw ConfigError("iters_per_outer must be >= 1");
  if (data.m < 2) throw ConfigError("training needs at least 2 classes");
  if (data.source_x.rows < 1 || data.target_x.rows < 1) {
    throw ConfigError("training needs non-empty source and target pools");
  }
  if (static_cast<int>(data.source_y.size()) != data.source_x.rows) {
    throw ConfigError("source labels do not match source rows");
  }
  if (cfg.variant == Variant::kExplicitSubTarget) {
    if (static_cast<int>(cfg.oracle_groups.size()) != data.target_x.rows) {
      throw ConfigError("explicit-sub-target needs one oracle group per target row (" +
                        std::to_string(cfg.oracle_groups.size()) + " given for " +
                        std::to_string(data.target_x.rows) + " rows)");
    }
    for (int gi : cfg.oracle_groups) {
      if (gi < 0 || gi >= cfg.dec.k) {
        throw ConfigError("oracle group " + std::to_string(gi) + " outside [0, " +
                          std::to_string(cfg.dec.k) + ")");
      }
    }
  }
}

MetaPartition one_hot_partition(const std::vector<int>& groups, int k) {
  MetaPartition part;
  part.k = k;
  part.assign = groups;
  part.q = Mat::zeros(static_cast<int>(groups.size()), k);
  for (size_t i = 0; i < groups.size(); ++i) {
    part.q.at(static_cast<int>(i), groups[i]) = 1.0;
  }
  return part;
}

}  // namespace

TrainResult run_training(const TrainerView& data, const TrainConfig& cfg) {
  validate_train_config(data, cfg);

  auto start = std::chrono::steady_clock::now();
  TrainResult res{
      build_bundle(data.d, data.m, cfg.dec.k, cfg.h, cfg.mode, cfg.seed, cfg.trunk_width),
      {}};
  ModelBundle& bundle = res.bundle;
  TrainHistory& history = res.history;
  StreamNets nets = nets_of(bundle);
  Mat y_onehot = one_hot(data.source_y, data.m);

  // Variants without the sub-target stream train with its weight pinned to
  // zero so the recorded schedule is honest about what ran.
  HyperParams hp = cfg.hp;
  bool has_group_stream = cfg.variant == Variant::kAmean ||
                          cfg.variant == Variant::kExplicitSubTarget ||
                          cfg.variant == Variant::kStaticKClustering;
  if (!has_group_stream) {
    hp.gamma.scheduled = false;
    hp.gamma.value = 0.0;
  }

  int max_iter = cfg.outer_loops * hp.iters_per_outer;
  Rng batch_rng = Rng::stream(cfg.seed, "batching");
  Rng vat_rng = Rng::stream(cfg.seed, "vat");
  SgdMomentum opt(hp.lr, hp.momentum);

  std::vector<Param*> gen_params =
      concat(bundle.feature_params(), bundle.classifier_params());
  std::vector<Param*> disc_params = bundle.discriminator_params();
  std::vector<Param*> adapt_params = concat(gen_params, disc_params);

  std::vector<int> groups;  // current partition over target rows

  for (int outer = 0; outer < cfg.outer_loops; ++outer) {
    // --- partition refresh ---
    bool discover = cfg.variant == Variant::kAmean ||
                    (cfg.variant == Variant::kStaticKClustering && outer == 0);
    if (discover) {
      bool fresh = !cfg.dec.warm_start || outer == 0;
      if (fresh) {
        Rng meta_init = Rng::stream(cfg.seed, "meta-init", outer);
        reinit_meta(bundle, meta_init);
      }
      uint64_t meta_seed = Rng::stream(cfg.seed, "meta-seed", outer).next_u64();
      DecStats stats = train_meta_learner(data.target_x, bundle.f, bundle.c, bundle.u1,
                                          bundle.u2, bundle.centroids.w, cfg.dec,
                                          meta_seed, fresh);
      history.meta_stats.push_back(stats);
      MetaPartition part = split_targets(data.target_x, bundle.f, bundle.c, bundle.u1,
                                         bundle.centroids.w, cfg.dec.t_dof);
      groups = part.assign;
      history.partitions.push_back(std::move(part));
    } else if (cfg.variant == Variant::kStaticKClustering) {
      history.partitions.push_back(history.partitions.front());
    } else if (cfg.variant == Variant::kExplicitSubTarget) {
      groups = cfg.oracle_groups;
      history.partitions.push_back(one_hot_partition(groups, cfg.dec.k));
    }

    // --- M adaptation iterations ---
    for (int it = 0; it < hp.iters_per_outer; ++it) {
      int iter = outer * hp.iters_per_outer + it + 1;
      std::vector<std::string> fresh_warnings;
      auto [sb, tb] = make_batches(data.source_x, y_onehot, data.target_x,
                                   has_group_stream ? groups : std::vector<int>{},
                                   cfg.dec.k, hp.batch_size, batch_rng,
                                   &fresh_warnings);
      merge_warnings(history.warnings, fresh_warnings);

      IterRecord rec;
      rec.iter = iter;
      rec.outer = outer + 1;

      // Inputs were validated up front, so a domain violation inside the
      // objective (e.g. the log guard meeting a NaN probability) can only
      // mean the previous steps pushed the weights out of the finite range.
      try {
        if (cfg.variant == Variant::kSourceOnly) {
          Graph g;
          Tensor ce = source_cross_entropy(g, nets, sb);
          rec.v_st = ce.scalar();
          ensure_finite(rec.v_st, "classification loss", iter);
          g.backward(ce);
          opt.step(g, gen_params);
        } else if (cfg.mode == Mode::kJoint) {
          Graph g;
          JointTerms t = joint_objective(g, nets, sb, tb, hp, iter, max_iter, vat_rng);
          rec.v_st = value_or_zero(t.v_st);
          rec.v_mt = value_or_zero(t.v_mt);
          rec.l_ent = value_or_zero(t.l_ent);
          rec.l_vir = value_or_zero(t.l_vir);
          rec.gamma = t.gamma;
          ensure_finite(rec.v_st, "v_st", iter);
          ensure_finite(rec.v_mt, "v_mt", iter);
          ensure_finite(rec.l_ent, "l_ent", iter);
          ensure_finite(rec.l_vir, "l_vir", iter);
          ensure_finite(t.total.scalar(), "total objective", iter);
          g.backward(t.total);
          opt.step(g, adapt_params);
        } else {
          Graph gd;
          DiscriminatorTerms dt = alternating_discriminator_objective(gd, nets, sb, tb);
          ensure_finite(dt.total.scalar(), "discriminator objective", iter);
          gd.backward(dt.total);
          opt.step(gd, disc_params);

          Graph gg;
          GeneratorTerms gt =
              alternating_generator_objective(gg, nets, sb, tb, hp, iter, max_iter, vat_rng);
          rec.v_st = value_or_zero(gt.v_st);
          rec.v_mt = value_or_zero(gt.v_mt_confusion);
          rec.l_ent = value_or_zero(gt.l_ent);
          rec.l_vir = value_or_zero(gt.l_vir);
          rec.gamma = gt.gamma;
          ensure_finite(rec.v_st, "v_st", iter);
          ensure_finite(rec.v_mt, "confusion value", iter);
          ensure_finite(rec.l_ent, "l_ent", iter);
          ensure_finite(rec.l_vir, "l_vir", iter);
          ensure_finite(gt.total.scalar(), "generator objective", iter);
          gg.backward(gt.total);
          opt.step(gg, gen_params);
        }
      } catch (const DomainError& e) {
        throw NumericError("non-finite arithmetic at iteration " +
                           std::to_string(iter) + " (" + e.what() + ")");
      }
      history.records.push_back(rec);
    }
  }

  history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

TrainResult run_amean(const TrainerView& data, const TrainConfig& config) {
  if (config.variant != Variant::kAmean) {
    throw ConfigError("run_amean called with variant " + variant_name(config.variant));
  }
  return run_training(data, config);
}

TrainResult run_variant(const TrainerView& data, const TrainConfig& config) {
  if (config.variant == Variant::kAmean) {
    throw ConfigError("run_variant expects a comparison variant, not the full method");
  }
  return run_training(data, config);
}

void export_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "iteration,outer,v_st,v_mt,l_ent,l_vir,gamma\n";
  for (const IterRecord& r : history.records) {
    out << r.iter << ',' << r.outer << ',' << fmt17(r.v_st) << ',' << fmt17(r.v_mt)
        << ',' << fmt17(r.l_ent) << ',' << fmt17(r.l_vir) << ',' << fmt17(r.gamma)
        << '\n';
  }
  if (!out.good()) throw IoError("write failed for " + path);
}

std::string history_summary_json(const TrainHistory& history) {
  nlohmann::ordered_json j;
  j["records"] = history.records.size();
  j["outer_loops_recorded"] =
      history.records.empty() ? 0 : history.records.back().outer;
  j["partitions"] = history.partitions.size();
  nlohmann::ordered_json meta = nlohmann::ordered_json::array();
  for (const DecStats& s : history.meta_stats) {
    nlohmann::ordered_json e;
    e["rec_before"] = s.rec_before;
    e["rec_after"] = s.rec_after;
    e["epochs_run"] = s.epochs_run;
    e["iters_run"] = s.iters_run;
    e["converged"] = s.converged;
    e["centroid_restarts"] = s.centroid_restarts;
    meta.push_back(e);
  }
  j["meta_passes"] = meta;
  if (!history.records.empty()) {
    const IterRecord& r = history.records.back();
    nlohmann::ordered_json fin;
    fin["iter"] = r.iter;
    fin["v_st"] = r.v_st;
    fin["v_mt"] = r.v_mt;
    fin["l_ent"] = r.l_ent;
    fin["l_vir"] = r.l_vir;
    fin["gamma"] = r.gamma;
    j["final"] = fin;
  }
  j["warnings"] = history.warnings;
  return j.dump(2) + "\n";
}

}  // namespace amean
