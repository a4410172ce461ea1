#include "amean/losses.hpp"

#include <cmath>
#include <string>

#include "amean/meta_learner.hpp"

namespace amean {
namespace {

void check_batch_x(const Mat& x, int d, const char* who) {
  if (x.rows < 1 || x.cols != d) {
    throw DimensionError(std::string(who) + ": batch is " + shape_str(x) +
                         ", expected n x " + std::to_string(d) + " with n >= 1");
  }
}

// Probability a row is a source sample, as an n x 1 column. The joint head is
// a 2-way softmax (source class first); the alternating head is a sigmoid.
Tensor source_prob(Graph& g, const StreamNets& nets, Tensor trunk_out) {
  Tensor head = nets.d_st->forward(g, trunk_out, Fwd{});
  if (nets.mode == Mode::kJoint) {
    Mat pick = Mat::zeros(2, 1);
    pick.at(0, 0) = 1.0;
    return matmul(head, g.constant(pick));
  }
  return head;  // already n x 1 sigmoid
}

// Mean over rows of KL(p || q) with p a constant matrix and q a graph tensor.
Tensor kl_mean(Graph& g, const Mat& p, Tensor q) {
  Mat log_p(p.rows, p.cols);
  for (int i = 0; i < p.rows * p.cols; ++i) {
    double v = p.a[i];
    if (v < kProbClampLo) v = kProbClampLo;
    if (v > kProbClampHi) v = kProbClampHi;
    log_p.a[i] = std::log(v);
  }
  Tensor p_t = g.constant(p);
  Tensor gap = sub(g.constant(log_p), log_probs(q));
  return scale(sum(mul(p_t, gap)), 1.0 / p.rows);
}

// Unit-normalize each row; a zero row (never expected from a Gaussian draw)
// falls back to the first basis direction.
void normalize_rows(Mat& m) {
  for (int i = 0; i < m.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < m.cols; ++j) sq += m.at(i, j) * m.at(i, j);
    double norm = std::sqrt(sq);
    if (norm == 0.0) {
      m.at(i, 0) = 1.0;
      continue;
    }
    for (int j = 0; j < m.cols; ++j) m.at(i, j) /= norm;
  }
}

// One power-iteration step: gradient of KL(clean || perturbed) at a tiny
// random probe, rescaled to radius epsilon. Rows where the gradient vanishes
// keep the probe direction instead.
Mat vat_direction(const Mlp& f, const Mlp& c, const Mat& x, double epsilon,
                  Rng& rng) {
  Mat p_clean = c.forward_plain(f.forward_plain(x));
  Mat u = rng.gaussian_mat(x.rows, x.cols);
  normalize_rows(u);

  Mat r0 = u;
  for (double& v : r0.a) v *= kVatXi;

  Graph probe;
  Tensor r = probe.leaf(r0);
  Tensor perturbed = add(probe.constant(x), r);
  Tensor q = c.forward(probe, f.forward(probe, perturbed, Fwd{}), Fwd{});
  probe.backward(kl_mean(probe, p_clean, q));

  Mat dir = r.grad();
  for (int i = 0; i < dir.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < dir.cols; ++j) sq += dir.at(i, j) * dir.at(i, j);
    double norm = std::sqrt(sq);
    if (norm == 0.0) {
      for (int j = 0; j < dir.cols; ++j) dir.at(i, j) = epsilon * u.at(i, j);
    } else {
      for (int j = 0; j < dir.cols; ++j) dir.at(i, j) *= epsilon / norm;
    }
  }
  return dir;
}

// lambda * (E_src log p_src + E_tgt log(1 - p_src)) on already-built trunk
// activations, so callers control reversal/detachment of the inputs.
Tensor adversarial_term(Graph& g, const StreamNets& nets, Tensor trunk_src,
                        Tensor trunk_tgt, double lambda) {
  Tensor p_src = source_prob(g, nets, trunk_src);
  Tensor p_tgt = source_prob(g, nets, trunk_tgt);
  Tensor hit = mean(log_probs(p_src));
  Tensor miss = mean(log_probs(add_const(scale(p_tgt, -1.0), 1.0)));
  return scale(add(hit, miss), lambda);
}

// Mean cross-entropy of the classifier against one-hot labels.
Tensor cross_entropy(Graph& g, const StreamNets& nets, Tensor feat_src,
                     const SourceBatch& src) {
  if (src.y.rows != src.x.rows || src.y.cols != nets.c->out_dim()) {
    throw DimensionError("cross_entropy: labels are " + shape_str(src.y) +
                         ", expected " + std::to_string(src.x.rows) + " x " +
                         std::to_string(nets.c->out_dim()) + " one-hot");
  }
  Tensor probs = nets.c->forward(g, feat_src, Fwd{});
  Tensor picked = mul(g.constant(src.y), log_probs(probs));
  return scale(sum(picked), -1.0 / src.x.rows);
}

// Per-group mean weights for the sub-target stream: W[i, group_i] = 1/count.
Mat group_weights(const TargetBatch& tgt, int k) {
  int n = tgt.x.rows;
  if (static_cast<int>(tgt.group.size()) != n) {
    throw DimensionError("v_mt: " + std::to_string(tgt.group.size()) +
                         " group labels for " + std::to_string(n) + " rows");
  }
  std::vector<int> count(k, 0);
  for (int gi : tgt.group) {
    if (gi < 0 || gi >= k) {
      throw DomainError("v_mt: group label " + std::to_string(gi) +
                        " outside [0, " + std::to_string(k) + ")");
    }
    ++count[gi];
  }
  Mat w = Mat::zeros(n, k);
  for (int i = 0; i < n; ++i) w.at(i, tgt.group[i]) = 1.0 / count[tgt.group[i]];
  return w;
}

Tensor sub_target_term(Graph& g, const StreamNets& nets, Tensor trunk_tgt,
                       const TargetBatch& tgt) {
  Tensor probs = nets.d_mt->forward(g, trunk_tgt, Fwd{});
  Tensor weighted = mul(g.constant(group_weights(tgt, nets.k)), log_probs(probs));
  return sum(weighted);
}

}  // namespace

double HyperParams::gamma_at(int iter, int max_iter) const {
  if (!gamma.scheduled) return gamma.value;
  if (iter < 1 || max_iter < 1 || iter > max_iter) {
    throw ContractError("gamma_at: iteration " + std::to_string(iter) +
                        " outside [1, " + std::to_string(max_iter) + "]");
  }
  return static_cast<double>(iter) / max_iter;
}

StreamNets nets_of(const ModelBundle& bundle) {
  StreamNets nets;
  nets.f = &bundle.f;
  nets.c = &bundle.c;
  nets.d_trunk = &bundle.d_trunk;
  nets.d_st = &bundle.d_st;
  nets.d_mt = &bundle.d_mt;
  nets.mode = bundle.mode;
  nets.k = bundle.k;
  return nets;
}

Tensor source_cross_entropy(Graph& g, const StreamNets& nets, const SourceBatch& src) {
  check_batch_x(src.x, nets.f->in_dim(), "source_cross_entropy");
  Tensor feat = nets.f->forward(g, g.constant(src.x), Fwd{});
  return cross_entropy(g, nets, feat, src);
}

Tensor v_st(Graph& g, const StreamNets& nets, const SourceBatch& src,
            const Mat& target_x, double lambda) {
  check_batch_x(src.x, nets.f->in_dim(), "v_st source");
  check_batch_x(target_x, nets.f->in_dim(), "v_st target");
  Tensor feat_s = nets.f->forward(g, g.constant(src.x), Fwd{});
  Tensor feat_t = nets.f->forward(g, g.constant(target_x), Fwd{});
  Tensor trunk_s = nets.d_trunk->forward(g, feat_s, Fwd{});
  Tensor trunk_t = nets.d_trunk->forward(g, feat_t, Fwd{});
  Tensor adv = adversarial_term(g, nets, trunk_s, trunk_t, lambda);
  return add(adv, cross_entropy(g, nets, feat_s, src));
}

Tensor v_mt(Graph& g, const StreamNets& nets, const TargetBatch& tgt) {
  check_batch_x(tgt.x, nets.f->in_dim(), "v_mt");
  Tensor feat = nets.f->forward(g, g.constant(tgt.x), Fwd{});
  Tensor trunk = nets.d_trunk->forward(g, feat, Fwd{});
  return sub_target_term(g, nets, trunk, tgt);
}

Tensor v_mt_confusion(Graph& g, const StreamNets& nets, const Mat& target_x) {
  check_batch_x(target_x, nets.f->in_dim(), "v_mt_confusion");
  Tensor feat = nets.f->forward(g, g.constant(target_x), Fwd{});
  Tensor trunk = nets.d_trunk->forward(g, feat, Fwd{});
  Tensor probs = nets.d_mt->forward(g, trunk, Fwd{});
  Tensor self_info = mul(probs, log_probs(probs));
  return scale(sum(self_info), 1.0 / target_x.rows);
}

Tensor l_ent(Graph& g, const Mlp& f, const Mlp& c, const Mat& target_x) {
  check_batch_x(target_x, f.in_dim(), "l_ent");
  Tensor probs = c.forward(g, f.forward(g, g.constant(target_x), Fwd{}), Fwd{});
  Tensor self_info = mul(probs, log_probs(probs));
  return scale(sum(self_info), -1.0 / target_x.rows);
}

VatTerm l_vir(Graph& g, const Mlp& f, const Mlp& c, const Mat& source_x,
              const Mat& target_x, double epsilon, double rho, Rng& rng) {
  check_batch_x(source_x, f.in_dim(), "l_vir source");
  check_batch_x(target_x, f.in_dim(), "l_vir target");
  VatTerm out;
  if (epsilon == 0.0) {
    out.value = g.constant(Mat::scalar(0.0));
    out.r_source = Mat::zeros(source_x.rows, source_x.cols);
    out.r_target = Mat::zeros(target_x.rows, target_x.cols);
    return out;
  }
  out.r_source = vat_direction(f, c, source_x, epsilon, rng);
  out.r_target = vat_direction(f, c, target_x, epsilon, rng);
  out.value = l_vir_at(g, f, c, source_x, out.r_source,
                       c.forward_plain(f.forward_plain(source_x)), target_x,
                       out.r_target, c.forward_plain(f.forward_plain(target_x)), rho);
  return out;
}

Tensor l_vir_at(Graph& g, const Mlp& f, const Mlp& c, const Mat& source_x,
                const Mat& r_source, const Mat& p_source_clean,
                const Mat& target_x, const Mat& r_target,
                const Mat& p_target_clean, double rho) {
  if (!source_x.same_shape(r_source) || !target_x.same_shape(r_target)) {
    throw DimensionError("l_vir_at: perturbations " + shape_str(r_source) + " / " +
                         shape_str(r_target) + " do not match batches " +
                         shape_str(source_x) + " / " + shape_str(target_x));
  }
  auto smoothness = [&](const Mat& x, const Mat& r, const Mat& p_clean) {
    if (p_clean.rows != x.rows || p_clean.cols != c.out_dim()) {
      throw DimensionError("l_vir_at: clean distribution " + shape_str(p_clean) +
                           " does not match batch " + shape_str(x));
    }
    Mat shifted = x;
    for (int i = 0; i < x.rows * x.cols; ++i) shifted.a[i] += r.a[i];
    Tensor q = c.forward(g, f.forward(g, g.constant(shifted), Fwd{}), Fwd{});
    return kl_mean(g, p_clean, q);
  };
  Tensor value = smoothness(source_x, r_source, p_source_clean);
  if (rho != 0.0) {
    value = add(value, scale(smoothness(target_x, r_target, p_target_clean), rho));
  }
  return value;
}

ClusteringTerms clustering_loss(Graph& g, const Mlp& u1, const Mlp& u2,
                                const Mat& centroids, const Mat& target_x,
                                const Mlp& f, const Mlp& c, double t_dof,
                                double kl_sign, const Mat* sharpened) {
  Mat v = meta_input(target_x, f, c);
  int n = v.rows;
  Tensor input = g.constant(v);
  Tensor z = u1.forward(g, input, Fwd{});
  Tensor rebuilt = u2.forward(g, z, Fwd{});

  ClusteringTerms terms;
  terms.reconstruction = scale(sse(rebuilt, input), 1.0 / n);

  Tensor q = soft_assign_graph(g, z, g.constant(centroids), t_dof);
  Mat p = sharpened ? *sharpened
                    : target_distribution(soft_assign(z.value(), centroids, t_dof));
  if (p.rows != n || p.cols != centroids.rows) {
    throw DimensionError("clustering_loss: sharpened distribution " + shape_str(p) +
                         " does not match batch of " + std::to_string(n) + " rows");
  }
  Mat log_p(p.rows, p.cols);
  for (int i = 0; i < p.rows * p.cols; ++i) {
    double pv = p.a[i];
    if (pv < kProbClampLo) pv = kProbClampLo;
    log_p.a[i] = std::log(pv);
  }
  Tensor gap = sub(g.constant(log_p), log_probs(q));
  terms.kl = scale(sum(mul(g.constant(p), gap)), 1.0 / n);
  terms.total = add(terms.reconstruction, scale(terms.kl, kl_sign));
  return terms;
}

JointTerms joint_objective(Graph& g, const StreamNets& nets, const SourceBatch& src,
                           const TargetBatch& tgt, const HyperParams& hp, int iter,
                           int max_iter, Rng& vat_rng) {
  if (nets.mode != Mode::kJoint) {
    throw ContractError("joint_objective: bundle was built for alternating updates");
  }
  check_batch_x(src.x, nets.f->in_dim(), "joint_objective source");
  check_batch_x(tgt.x, nets.f->in_dim(), "joint_objective target");

  JointTerms terms;
  terms.gamma = hp.gamma_at(iter, max_iter);

  Tensor feat_s = nets.f->forward(g, g.constant(src.x), Fwd{});
  Tensor feat_t = nets.f->forward(g, g.constant(tgt.x), Fwd{});
  Tensor ce = cross_entropy(g, nets, feat_s, src);

  // Both adversarial heads read reversed features, and the combined head term
  // is reversed once more: one plain descent step then ascends the heads while
  // the double reversal cancels on the feature extractor, which descends.
  Tensor trunk_s = nets.d_trunk->forward(g, grad_reverse(feat_s, 1.0), Fwd{});
  Tensor trunk_t = nets.d_trunk->forward(g, grad_reverse(feat_t, 1.0), Fwd{});
  Tensor adv = adversarial_term(g, nets, trunk_s, trunk_t, hp.lambda);

  bool with_meta = !tgt.group.empty() && terms.gamma != 0.0;
  Tensor head_sum = adv;
  if (with_meta) {
    Tensor mt = sub_target_term(g, nets, trunk_t, tgt);
    head_sum = add(adv, scale(mt, terms.gamma));
    terms.v_mt = mt;
  }
  Tensor minimax = grad_reverse(head_sum, 1.0);

  terms.v_st = add(adv, ce);
  Tensor total = add(ce, minimax);
  if (hp.beta != 0.0) {
    terms.l_ent = l_ent(g, *nets.f, *nets.c, tgt.x);
    total = add(total, scale(terms.l_ent, hp.beta));
  }
  if (hp.epsilon != 0.0) {
    VatTerm vat = l_vir(g, *nets.f, *nets.c, src.x, tgt.x, hp.epsilon, hp.rho, vat_rng);
    terms.l_vir = vat.value;
    total = add(total, vat.value);
  }
  terms.total = total;
  return terms;
}

DiscriminatorTerms alternating_discriminator_objective(Graph& g,
                                                       const StreamNets& nets,
                                                       const SourceBatch& src,
                                                       const TargetBatch& tgt) {
  if (nets.mode != Mode::kAlternating) {
    throw ContractError(
        "alternating_discriminator_objective: bundle was built for joint updates");
  }
  check_batch_x(src.x, nets.f->in_dim(), "discriminator phase source");
  check_batch_x(tgt.x, nets.f->in_dim(), "discriminator phase target");

  // Features are cut off from the gradient flow, and the supervised term is
  // carried at zero weight, so the phase value matches the full objective
  // while only discriminator parameters move. The sub-target stream is
  // skipped when the batch carries no group tags.
  Tensor feat_s = grad_reverse(nets.f->forward(g, g.constant(src.x), Fwd{}), 0.0);
  Tensor feat_t = grad_reverse(nets.f->forward(g, g.constant(tgt.x), Fwd{}), 0.0);
  Tensor trunk_s = nets.d_trunk->forward(g, feat_s, Fwd{});
  Tensor trunk_t = nets.d_trunk->forward(g, feat_t, Fwd{});

  DiscriminatorTerms terms;
  Tensor adv = adversarial_term(g, nets, trunk_s, trunk_t, 1.0);
  Tensor ce = grad_reverse(cross_entropy(g, nets, feat_s, src), 0.0);
  terms.v_st = add(adv, ce);
  Tensor ascent = adv;
  if (!tgt.group.empty()) {
    terms.v_mt = sub_target_term(g, nets, trunk_t, tgt);
    ascent = add(adv, terms.v_mt);
  }
  terms.total = add(grad_reverse(ascent, 1.0), ce);
  return terms;
}

GeneratorTerms alternating_generator_objective(Graph& g, const StreamNets& nets,
                                               const SourceBatch& src,
                                               const TargetBatch& tgt,
                                               const HyperParams& hp, int iter,
                                               int max_iter, Rng& vat_rng) {
  if (nets.mode != Mode::kAlternating) {
    throw ContractError(
        "alternating_generator_objective: bundle was built for joint updates");
  }
  check_batch_x(src.x, nets.f->in_dim(), "generator phase source");
  check_batch_x(tgt.x, nets.f->in_dim(), "generator phase target");

  GeneratorTerms terms;
  terms.gamma = hp.gamma_at(iter, max_iter);

  Fwd frozen;
  frozen.freeze = true;
  Tensor feat_s = nets.f->forward(g, g.constant(src.x), Fwd{});
  Tensor feat_t = nets.f->forward(g, g.constant(tgt.x), Fwd{});
  Tensor trunk_s = nets.d_trunk->forward(g, feat_s, frozen);
  Tensor trunk_t = nets.d_trunk->forward(g, feat_t, frozen);

  Tensor p_src = nets.d_st->forward(g, trunk_s, frozen);
  Tensor p_tgt = nets.d_st->forward(g, trunk_t, frozen);
  Tensor hit = mean(log_probs(p_src));
  Tensor miss = mean(log_probs(add_const(scale(p_tgt, -1.0), 1.0)));
  Tensor adv = scale(add(hit, miss), hp.lambda);
  Tensor ce = cross_entropy(g, nets, feat_s, src);
  terms.v_st = add(adv, ce);

  Tensor total = terms.v_st;
  if (terms.gamma != 0.0) {
    Tensor probs_mt = nets.d_mt->forward(g, trunk_t, frozen);
    terms.v_mt_confusion =
        scale(sum(mul(probs_mt, log_probs(probs_mt))), 1.0 / tgt.x.rows);
    total = add(total, scale(terms.v_mt_confusion, terms.gamma));
  }
  if (hp.beta != 0.0) {
    terms.l_ent = l_ent(g, *nets.f, *nets.c, tgt.x);
    total = add(total, scale(terms.l_ent, hp.beta));
  }
  if (hp.epsilon != 0.0) {
    VatTerm vat = l_vir(g, *nets.f, *nets.c, src.x, tgt.x, hp.epsilon, hp.rho, vat_rng);
    terms.l_vir = vat.value;
    total = add(total, vat.value);
  }
  terms.total = total;
  return terms;
}

}  // namespace amean
