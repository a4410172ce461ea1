#include "amean/meta_learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace amean {

// ---- soft assignment ----

Mat soft_assign(const Mat& embeddings, const Mat& centroids, double t_dof) {
  if (embeddings.cols != centroids.cols) {
    throw DimensionError("soft_assign: embeddings " + shape_str(embeddings) +
                         " vs centroids " + shape_str(centroids));
  }
  if (t_dof <= 0.0) throw ContractError("soft_assign: t_dof must be positive");
  const int n = embeddings.rows;
  const int k = centroids.rows;
  const double expo = -(t_dof + 1.0) / 2.0;
  Mat q(n, k);
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int j = 0; j < k; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < embeddings.cols; ++c) {
        const double d = embeddings.at(i, c) - centroids.at(j, c);
        d2 += d * d;
      }
      const double s = std::pow(1.0 + d2 / t_dof, expo);
      q.at(i, j) = s;
      norm += s;
    }
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw DegenerateClusterError("soft_assign: row " + std::to_string(i) +
                                   " has no kernel mass");
    }
    for (int j = 0; j < k; ++j) q.at(i, j) /= norm;
  }
  return q;
}

Tensor soft_assign_graph(Graph& g, Tensor embeddings, Tensor centroids, double t_dof) {
  if (embeddings.cols() != centroids.cols()) {
    throw DimensionError("soft_assign_graph: embeddings " +
                         shape_str(embeddings.value()) + " vs centroids " +
                         shape_str(centroids.value()));
  }
  if (t_dof <= 0.0) throw ContractError("soft_assign_graph: t_dof must be positive");
  const int k = centroids.rows();
  const double expo = -(t_dof + 1.0) / 2.0;
  Tensor kernel;  // n x k, column j built from the distance to centroid j
  for (int j = 0; j < k; ++j) {
    Tensor mu_j = g.constant(centroids.value().row_copy(j));
    Tensor diff = sub_rowvec(embeddings, mu_j);
    Tensor d2 = sum_rows(mul(diff, diff));
    // (1 + d2/t)^expo via exp(expo * log1p-style argument); 1 + d2/t >= 1.
    Tensor s = exp_elem(scale(log_elem(add_const(scale(d2, 1.0 / t_dof), 1.0)), expo));
    kernel = (j == 0) ? s : concat_cols(kernel, s);
  }
  return div_colvec(kernel, sum_rows(kernel));
}

Mat target_distribution(const Mat& q) {
  const int n = q.rows;
  const int k = q.cols;
  std::vector<double> mass(k, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) mass[j] += q.at(i, j);
  for (int j = 0; j < k; ++j) {
    if (!(mass[j] > 0.0) || !std::isfinite(mass[j])) {
      throw DegenerateClusterError("target_distribution: cluster " +
                                   std::to_string(j + 1) + " has zero mass");
    }
  }
  Mat p(n, k);
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int j = 0; j < k; ++j) {
      const double w = q.at(i, j) * q.at(i, j) / mass[j];
      p.at(i, j) = w;
      norm += w;
    }
    if (!(norm > 0.0)) {
      throw DegenerateClusterError("target_distribution: row " + std::to_string(i) +
                                   " lost all mass");
    }
    for (int j = 0; j < k; ++j) p.at(i, j) /= norm;
  }
  return p;
}

int hard_assign_row(const Mat& q, int row) {
  int best = 0;
  for (int j = 1; j < q.cols; ++j) {
    if (q.at(row, j) > q.at(row, best)) best = j;
  }
  return best;
}

// ---- k-means ----

namespace {

double sq_dist_row(const Mat& a, int ra, const Mat& b, int rb) {
  double d2 = 0.0;
  for (int c = 0; c < a.cols; ++c) {
    const double d = a.at(ra, c) - b.at(rb, c);
    d2 += d * d;
  }
  return d2;
}

}  // namespace

double kmeans_inertia(const Mat& embeddings, const Mat& centroids) {
  double total = 0.0;
  for (int i = 0; i < embeddings.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < centroids.rows; ++j) {
      best = std::min(best, sq_dist_row(embeddings, i, centroids, j));
    }
    total += best;
  }
  return total;
}

Mat init_centroids(const Mat& embeddings, int k, Rng& rng, int restarts, int iters) {
  const int n = embeddings.rows;
  if (k < 1) throw ConfigError("init_centroids: k must be >= 1");
  if (n < k) {
    throw ConfigError("init_centroids: " + std::to_string(n) + " points cannot seed " +
                      std::to_string(k) + " clusters");
  }
  Mat best_centroids;
  double best_inertia = std::numeric_limits<double>::infinity();

  std::vector<int> order(n);
  for (int restart = 0; restart < restarts; ++restart) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    Mat centers(k, embeddings.cols);
    for (int j = 0; j < k; ++j)
      for (int c = 0; c < embeddings.cols; ++c)
        centers.at(j, c) = embeddings.at(order[j], c);

    std::vector<int> assign(n, -1);
    for (int it = 0; it < iters; ++it) {
      bool moved = false;
      for (int i = 0; i < n; ++i) {
        int arg = 0;
        double best = sq_dist_row(embeddings, i, centers, 0);
        for (int j = 1; j < k; ++j) {
          const double d2 = sq_dist_row(embeddings, i, centers, j);
          if (d2 < best) {
            best = d2;
            arg = j;
          }
        }
        if (assign[i] != arg) {
          assign[i] = arg;
          moved = true;
        }
      }
      Mat sums(k, embeddings.cols);
      std::vector<int> counts(k, 0);
      for (int i = 0; i < n; ++i) {
        ++counts[assign[i]];
        for (int c = 0; c < embeddings.cols; ++c)
          sums.at(assign[i], c) += embeddings.at(i, c);
      }
      for (int j = 0; j < k; ++j) {
        if (counts[j] == 0) {
          // Re-seed an empty cluster at the point farthest from its center.
          int far = 0;
          double far_d = -1.0;
          for (int i = 0; i < n; ++i) {
            const double d2 = sq_dist_row(embeddings, i, centers, assign[i]);
            if (d2 > far_d) {
              far_d = d2;
              far = i;
            }
          }
          for (int c = 0; c < embeddings.cols; ++c)
            centers.at(j, c) = embeddings.at(far, c);
          moved = true;
        } else {
          for (int c = 0; c < embeddings.cols; ++c)
            centers.at(j, c) = sums.at(j, c) / counts[j];
        }
      }
      if (!moved) break;
    }
    const double inertia = kmeans_inertia(embeddings, centers);
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_centroids = std::move(centers);
    }
  }
  return best_centroids;
}

// ---- centroid gradient of the sharpening KL ----

Mat centroid_kl_grad(const Mat& z, const Mat& q, const Mat& p, const Mat& mu,
                     double t_dof) {
  const int n = z.rows;
  const int k = mu.rows;
  Mat grad(k, mu.cols);
  const double coeff = (t_dof + 1.0) / t_dof;
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (int c = 0; c < z.cols; ++c) {
        const double d = z.at(i, c) - mu.at(j, c);
        d2 += d * d;
      }
      const double w = coeff / (1.0 + d2 / t_dof) * (p.at(i, j) - q.at(i, j));
      for (int c = 0; c < z.cols; ++c) {
        grad.at(j, c) -= w * (z.at(i, c) - mu.at(j, c));
      }
    }
    for (int c = 0; c < mu.cols; ++c) grad.at(j, c) /= n;
  }
  return grad;
}

// ---- partition export ----

void export_partition(const MetaPartition& partition, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open partition file for writing: " + path);
  out << "target-index,meta-sub-target";
  for (int j = 1; j <= partition.k; ++j) out << ",q_" << j;
  out << '\n';
  for (size_t i = 0; i < partition.assign.size(); ++i) {
    out << i << ',' << partition.assign[i] + 1;
    for (int j = 0; j < partition.k; ++j) {
      out << ',' << fmt17(partition.q.at(static_cast<int>(i), j));
    }
    out << '\n';
  }
  if (!out) throw IoError("partition write failed: " + path);
}

// ---- autoencoder training ----

namespace {

// Mean per-sample squared reconstruction error over the full set.
double reconstruction_loss_plain(const Mlp& u1, const Mlp& u2, const Mat& v,
                                 const Mat& target) {
  const Mat rec = u2.forward_plain(u1.forward_plain(v));
  double s = 0.0;
  for (size_t i = 0; i < rec.size(); ++i) {
    const double d = rec.a[i] - target.a[i];
    s += d * d;
  }
  return s / v.rows;
}

Mat gather_rows(const Mat& v, const std::vector<int>& idx, int lo, int hi) {
  Mat out(hi - lo, v.cols);
  for (int i = lo; i < hi; ++i)
    for (int c = 0; c < v.cols; ++c) out.at(i - lo, c) = v.at(idx[i], c);
  return out;
}

void sgd_plain(Graph& g, double lr) {
  for (const auto& [id, p] : g.param_leaves()) {
    const Mat& grad = g.grad_of(*p);
    for (size_t i = 0; i < p->w.size(); ++i) p->w.a[i] -= lr * grad.a[i];
  }
}

// Folds v' = (v - lo) / range into the encoder's first layer so the encoder
// keeps accepting raw inputs.
void bake_input_rescale(Mlp& u1, const std::vector<double>& lo,
                        const std::vector<double>& range) {
  Param& W = u1.layers.front().W;
  Param& b = u1.layers.front().b;
  for (int j = 0; j < W.w.cols; ++j) {
    double shift = 0.0;
    for (int i = 0; i < W.w.rows; ++i) {
      W.w.at(i, j) /= range[i];
      shift += lo[i] * W.w.at(i, j);
    }
    b.w.at(0, j) -= shift;
  }
}

std::vector<int> assign_all(const Mlp& u1, const Mat& v, const Mat& centroids,
                            double t_dof) {
  const Mat q = soft_assign(u1.forward_plain(v), centroids, t_dof);
  std::vector<int> out(q.rows);
  for (int i = 0; i < q.rows; ++i) out[i] = hard_assign_row(q, i);
  return out;
}

}  // namespace

DecStats train_meta_learner(const Mat& target_x, const Mlp& f, const Mlp& c,
                            Mlp& u1, Mlp& u2, Mat& centroids, const DecConfig& cfg,
                            uint64_t seed, bool fresh) {
  if (cfg.k < 2) throw ConfigError("train_meta_learner: k must be >= 2");
  if (target_x.rows < cfg.k) {
    throw ConfigError("train_meta_learner: fewer target points than clusters");
  }
  if (cfg.batch_size < 2) throw ConfigError("train_meta_learner: batch_size must be >= 2");

  const Mat v_raw = meta_input(target_x, f, c);
  const int n = v_raw.rows;
  const int dim = v_raw.cols;

  // Per-dimension [0,1] rescale of the concatenated input.
  std::vector<double> lo(dim), range(dim);
  for (int cc = 0; cc < dim; ++cc) {
    double mn = v_raw.at(0, cc), mx = v_raw.at(0, cc);
    for (int i = 1; i < n; ++i) {
      mn = std::min(mn, v_raw.at(i, cc));
      mx = std::max(mx, v_raw.at(i, cc));
    }
    lo[cc] = mn;
    range[cc] = (mx - mn > 1e-8) ? (mx - mn) : 1.0;
  }
  if (fresh) bake_input_rescale(u1, lo, range);

  // Decoder reconstructs the rescaled concatenation.
  Mat v_unit(n, dim);
  for (int i = 0; i < n; ++i)
    for (int cc = 0; cc < dim; ++cc)
      v_unit.at(i, cc) = (v_raw.at(i, cc) - lo[cc]) / range[cc];

  DecStats stats;
  stats.rec_before = reconstruction_loss_plain(u1, u2, v_raw, v_unit);

  Rng batch_rng = Rng::stream(seed, "dec-batch");
  Rng noise_rng = Rng::stream(seed, "dec-noise");

  // Phase 1: reconstruction-only pretraining.
  for (int it = 0; it < cfg.pretrain_iters; ++it) {
    std::vector<int> idx(std::min(cfg.batch_size, n));
    for (auto& i : idx) i = static_cast<int>(batch_rng.uniform_int(0, n - 1));
    Mat vb_raw = gather_rows(v_raw, idx, 0, static_cast<int>(idx.size()));
    Mat vb_unit = gather_rows(v_unit, idx, 0, static_cast<int>(idx.size()));
    if (cfg.corruption_std > 0.0) {
      for (auto& x : vb_raw.a) x += cfg.corruption_std * noise_rng.gaussian();
    }
    Graph g;
    Tensor input = g.constant(std::move(vb_raw));
    Tensor rec = u2.forward(g, u1.forward(g, input));
    Tensor loss = scale(sse(rec, g.constant(std::move(vb_unit))), 1.0 / idx.size());
    g.backward(loss);
    sgd_plain(g, cfg.lr);
  }
  stats.rec_after = reconstruction_loss_plain(u1, u2, v_raw, v_unit);

  // Phase 2: centroid init on the pretrained embeddings.
  {
    Rng km = Rng::stream(seed, "kmeans");
    centroids = init_centroids(u1.forward_plain(v_raw), cfg.k, km,
                               cfg.kmeans_restarts, cfg.kmeans_iters);
  }

  // Phase 3: joint reconstruction + sharpening updates.
  std::vector<int> prev_assign = assign_all(u1, v_raw, centroids, cfg.t_dof);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double kl_sign = cfg.kl_sign();

  for (int epoch = 0; epoch < cfg.max_epochs && stats.iters_run < cfg.max_iters;
       ++epoch) {
    batch_rng.shuffle(order);
    for (int start = 0; start < n && stats.iters_run < cfg.max_iters;
         start += cfg.batch_size) {
      const int stop = std::min(start + cfg.batch_size, n);
      if (stop - start < 2) break;  // a 1-row tail cannot carry a distribution
      Mat vb_raw = gather_rows(v_raw, order, start, stop);
      Mat vb_unit = gather_rows(v_unit, order, start, stop);
      const int nb = stop - start;

      Graph g;
      Tensor input = g.constant(std::move(vb_raw));
      Tensor z = u1.forward(g, input);
      Tensor rec = u2.forward(g, z);
      Tensor rec_loss = scale(sse(rec, g.constant(std::move(vb_unit))), 1.0 / nb);
      Tensor mu = g.constant(centroids);
      Tensor q = soft_assign_graph(g, z, mu, cfg.t_dof);

      Mat p;
      try {
        p = target_distribution(q.value());
      } catch (const DegenerateClusterError&) {
        if (stats.centroid_restarts >= 1) throw;
        ++stats.centroid_restarts;
        Rng km = Rng::stream(seed, "kmeans-restart");
        centroids = init_centroids(u1.forward_plain(v_raw), cfg.k, km,
                                   cfg.kmeans_restarts, cfg.kmeans_iters);
        continue;
      }
      Mat log_p(p.rows, p.cols);
      for (size_t i = 0; i < p.size(); ++i) {
        log_p.a[i] = std::log(std::clamp(p.a[i], kProbClampLo, kProbClampHi));
      }
      Tensor p_const = g.constant(p);
      Tensor kl = scale(sum(mul(p_const, sub(g.constant(std::move(log_p)),
                                             log_probs(q)))),
                        1.0 / nb);
      Tensor loss = add(rec_loss, scale(kl, kl_sign));
      g.backward(loss);
      sgd_plain(g, cfg.lr);

      // Centroids move by the explicit sharpening-gradient rule.
      const Mat mu_grad =
          centroid_kl_grad(z.value(), q.value(), p, centroids, cfg.t_dof);
      for (size_t i = 0; i < centroids.size(); ++i) {
        centroids.a[i] -= cfg.lr * kl_sign * mu_grad.a[i];
      }
      ++stats.iters_run;
    }
    ++stats.epochs_run;

    const std::vector<int> cur = assign_all(u1, v_raw, centroids, cfg.t_dof);
    int changed = 0;
    for (int i = 0; i < n; ++i) changed += (cur[i] != prev_assign[i]) ? 1 : 0;
    prev_assign = cur;
    if (static_cast<double>(changed) / n < cfg.convergence_threshold) {
      stats.converged = true;
      break;
    }
  }
  return stats;
}

MetaPartition split_targets(const Mat& target_x, const Mlp& f, const Mlp& c,
                            const Mlp& u1, const Mat& centroids, double t_dof) {
  MetaPartition part;
  part.k = centroids.rows;
  part.q = soft_assign(u1.forward_plain(meta_input(target_x, f, c)), centroids, t_dof);
  part.assign.resize(part.q.rows);
  for (int i = 0; i < part.q.rows; ++i) part.assign[i] = hard_assign_row(part.q, i);
  return part;
}

}  // namespace amean
