// Training objectives.
//
// Two adversarial streams share one discriminator trunk: a source-vs-target
// stream (with the classifier's supervised term folded in) and a sub-target
// stream driven by the discovered partition. Entropy and virtual-adversarial
// penalties regularize the classifier on top. Compositions come in two
// flavors: a joint objective whose single backward pass realizes the minimax
// through gradient reversal, and an alternating pair (discriminator ascent,
// generator descent) with gradients confined to each phase's parameters.
#pragma once

#include <cstdint>
#include <vector>

#include "amean/networks.hpp"
#include "amean/rng.hpp"

namespace amean {

struct GammaSetting {
  bool scheduled = true;  // ramp iter/max_iter; otherwise the fixed value
  double value = 0.1;
};

struct HyperParams {
  double lambda = 1.0;    // adversarial weight in the source-target stream
  GammaSetting gamma{};   // sub-target stream weight
  double beta = 0.01;     // entropy weight
  double rho = 0.01;      // target share of the virtual-adversarial penalty
  double epsilon = 0.5;   // virtual-adversarial perturbation radius
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 128;
  int iters_per_outer = 500;

  // 1-based iteration over the whole run.
  double gamma_at(int iter, int max_iter) const;
};

// Power-iteration probe scale for virtual-adversarial directions.
inline constexpr double kVatXi = 1e-6;

struct SourceBatch {
  Mat x;  // n x d
  Mat y;  // n x m one-hot
};

struct TargetBatch {
  Mat x;                   // n x d
  std::vector<int> group;  // 0-based sub-target per row; empty when unused
};

// Non-owning view of the bundle pieces the objectives touch.
struct StreamNets {
  const Mlp* f = nullptr;
  const Mlp* c = nullptr;
  const Mlp* d_trunk = nullptr;
  const DenseLayer* d_st = nullptr;
  const DenseLayer* d_mt = nullptr;
  Mode mode = Mode::kJoint;
  int k = 0;
};
StreamNets nets_of(const ModelBundle& bundle);

// ---- individual terms (plain orientation, gradients = d(value)/d(params)) ----

// Mean cross-entropy of the classifier against one-hot source labels.
Tensor source_cross_entropy(Graph& g, const StreamNets& nets, const SourceBatch& src);

// lambda * (E_src log D_st + E_tgt log(1 - D_st)) + cross-entropy on source.
Tensor v_st(Graph& g, const StreamNets& nets, const SourceBatch& src,
            const Mat& target_x, double lambda);

// Sum over sub-targets of the mean log-probability the sub-target head
// assigns to each sample's own group. Groups absent from the batch add 0.
Tensor v_mt(Graph& g, const StreamNets& nets, const TargetBatch& tgt);

// Mean negative entropy of the sub-target head; lives in [-ln k, 0].
Tensor v_mt_confusion(Graph& g, const StreamNets& nets, const Mat& target_x);

// Mean classifier entropy on targets; lives in [0, ln m].
Tensor l_ent(Graph& g, const Mlp& f, const Mlp& c, const Mat& target_x);

struct VatTerm {
  Tensor value;
  Mat r_source;  // realized perturbations, one row per sample
  Mat r_target;
};

// Virtual-adversarial smoothness: KL between clean (held constant) and
// perturbed predictions at the most-sensitive direction of radius epsilon,
// found by one power-iteration step. Source mean plus rho * target mean.
VatTerm l_vir(Graph& g, const Mlp& f, const Mlp& c, const Mat& source_x,
              const Mat& target_x, double epsilon, double rho, Rng& rng);

// Same value with caller-fixed perturbations and clean distributions. The
// clean side is a constant by VAT's definition; taking it as an argument lets
// a finite-difference harness hold it at the base point while probing.
Tensor l_vir_at(Graph& g, const Mlp& f, const Mlp& c, const Mat& source_x,
                const Mat& r_source, const Mat& p_source_clean,
                const Mat& target_x, const Mat& r_target,
                const Mat& p_target_clean, double rho);

struct ClusteringTerms {
  Tensor total;
  Tensor reconstruction;
  Tensor kl;
};

// Reconstruction plus kl_sign * KL(sharpened || soft assignment) on the
// concatenated meta input, mean over the batch; the sharpened distribution is
// recomputed from the batch and held constant. A caller-fixed `sharpened`
// overrides that recomputation so a finite-difference harness can probe the
// loss as the function its gradient actually descends.
ClusteringTerms clustering_loss(Graph& g, const Mlp& u1, const Mlp& u2,
                                const Mat& centroids, const Mat& target_x,
                                const Mlp& f, const Mlp& c, double t_dof,
                                double kl_sign = 1.0, const Mat* sharpened = nullptr);

// ---- compositions ----

struct JointTerms {
  Tensor total;   // backward on this realizes the minimax
  Tensor v_st;    // reported component values (plain orientation)
  Tensor v_mt;    // invalid when the sub-target stream is off
  Tensor l_ent;   // invalid when beta = 0
  Tensor l_vir;   // invalid when epsilon = 0
  double gamma = 0.0;
};

// v_st + gamma * v_mt + beta * l_ent + l_vir, with both adversarial terms
// routed through gradient reversal: descent on `total` descends F and C and
// ascends both discriminator heads in one backward pass.
JointTerms joint_objective(Graph& g, const StreamNets& nets, const SourceBatch& src,
                           const TargetBatch& tgt, const HyperParams& hp, int iter,
                           int max_iter, Rng& vat_rng);

struct DiscriminatorTerms {
  Tensor total;  // value v_st + v_mt; descent ascends the discriminators
  Tensor v_st;
  Tensor v_mt;
};

// Discriminator phase: features and classifier are held constant, so F and C
// receive exactly zero gradient.
DiscriminatorTerms alternating_discriminator_objective(Graph& g,
                                                       const StreamNets& nets,
                                                       const SourceBatch& src,
                                                       const TargetBatch& tgt);

struct GeneratorTerms {
  Tensor total;  // v_st + gamma * confusion + beta * l_ent + l_vir
  Tensor v_st;
  Tensor v_mt_confusion;
  Tensor l_ent;
  Tensor l_vir;
  double gamma = 0.0;
};

// Generator phase: discriminator parameters are frozen; F and C descend.
GeneratorTerms alternating_generator_objective(Graph& g, const StreamNets& nets,
                                               const SourceBatch& src,
                                               const TargetBatch& tgt,
                                               const HyperParams& hp, int iter,
                                               int max_iter, Rng& vat_rng);

}  // namespace amean
