// Unsupervised discovery of meta-sub-targets inside the blended target set.
//
// A denoising autoencoder embeds [x | F(x) | C(F(x))]; embeddings are soft-
// assigned to centroids with a Student's-t kernel, the assignment is sharpened
// into a target distribution, and encoder + centroids descend the KL between
// the two while the decoder keeps the embedding honest via reconstruction.
// Hard argmax assignments of the converged kernel define the partition.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amean/networks.hpp"

namespace amean {

struct DecConfig {
  int k = 2;
  double t_dof = 1.0;      // Student's-t degrees of freedom
  double lr = 0.001;       // plain SGD step for encoder/decoder/centroids
  int batch_size = 64;
  int pretrain_iters = 150;      // reconstruction-only warmup steps
  double corruption_std = 0.0;   // gaussian input noise during pretraining
  int max_iters = 4000;          // cap on clustering mini-batch steps
  int max_epochs = 200;          // cap on clustering epochs
  double convergence_threshold = 0.001;  // stop when < this fraction reassigns
  int kmeans_restarts = 20;
  int kmeans_iters = 100;
  bool warm_start = false;        // reuse encoder weights across outer loops
  bool verbatim_kl_sign = false;  // read the clustering objective's KL term
                                  // with its literal leading minus (rewards
                                  // divergence; kept only for comparison)

  double kl_sign() const { return verbatim_kl_sign ? -1.0 : 1.0; }
};

// Soft assignment q[i][j] of embedding row i to centroid j under a
// Student's-t kernel with t_dof degrees of freedom.
Mat soft_assign(const Mat& embeddings, const Mat& centroids, double t_dof);

// Graph version used inside training losses; centroids enter as a constant.
Tensor soft_assign_graph(Graph& g, Tensor embeddings, Tensor centroids, double t_dof);

// Sharpened target: p[i][j] proportional to q^2 / column-mass, renormalized
// per row. Throws DegenerateClusterError when a cluster holds no mass.
Mat target_distribution(const Mat& q);

// Argmax with ties resolved to the smallest index.
int hard_assign_row(const Mat& q, int row);

// k-means on embeddings: `restarts` random starts, `iters` Lloyd iterations
// each, best inertia wins. Deterministic given the RNG state.
Mat init_centroids(const Mat& embeddings, int k, Rng& rng, int restarts = 20,
                   int iters = 100);
double kmeans_inertia(const Mat& embeddings, const Mat& centroids);

// Gradient of mean-over-batch KL(P || Q(z, mu)) with respect to the centroids,
// with P held constant. Matches finite differences of the same quantity.
Mat centroid_kl_grad(const Mat& z, const Mat& q, const Mat& p, const Mat& mu,
                     double t_dof);

struct MetaPartition {
  int k = 0;
  std::vector<int> assign;  // 0-based sub-target per target row
  Mat q;                    // soft assignments, one row per target row
};

// CSV export: target-index, meta-sub-target (1-based), q_1..q_k.
void export_partition(const MetaPartition& partition, const std::string& path);

struct DecStats {
  double rec_before = 0.0;  // mean per-sample reconstruction loss at entry
  double rec_after = 0.0;   // same, after pretraining
  int epochs_run = 0;
  int iters_run = 0;
  bool converged = false;
  int centroid_restarts = 0;
};

// Trains the autoencoder + centroids on the target set with F and C frozen.
// When `fresh` is set, a per-dimension [0,1] rescaling of the concatenated
// input (computed from the full target set) is folded into the encoder's
// first layer, so downstream consumers keep feeding raw inputs; the decoder
// reconstructs the rescaled concatenation. Desk-scale stand-in for feeding
// the autoencoder unit-range pixels.
DecStats train_meta_learner(const Mat& target_x, const Mlp& f, const Mlp& c,
                            Mlp& u1, Mlp& u2, Mat& centroids, const DecConfig& cfg,
                            uint64_t seed, bool fresh = true);

// Assigns every target row to its sub-target via the trained encoder.
MetaPartition split_targets(const Mat& target_x, const Mlp& f, const Mlp& c,
                            const Mlp& u1, const Mat& centroids, double t_dof);

}  // namespace amean
