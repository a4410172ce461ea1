// Model bundle for blended-target adaptation: feature extractor F, classifier
// C, a shared discriminator trunk with two heads (source-vs-target and
// sub-target), and the denoising autoencoder (U1 encoder / U2 decoder) whose
// embedding space hosts the sub-target clustering.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "amean/rng.hpp"
#include "amean/tensor.hpp"

namespace amean {

enum class Mode { kJoint, kAlternating };

enum class Activation { kLinear, kRelu, kLeakyRelu, kSigmoid, kSoftmax };

struct LayerSpec {
  int in_dim = 0;
  int out_dim = 0;
  Activation act = Activation::kRelu;
  double dropout = 0.0;  // applied only while training
};

// Options for a graph forward pass.
struct Fwd {
  bool train = false;     // enables dropout
  bool freeze = false;    // parameters contribute value but receive no gradient
  Rng* dropout_rng = nullptr;
};

struct DenseLayer {
  Param W;  // in x out
  Param b;  // 1 x out
  Activation act = Activation::kRelu;
  double dropout = 0.0;

  Tensor forward(Graph& g, Tensor x, const Fwd& o) const;
  Mat forward_plain(const Mat& x) const;  // dropout off
};

struct Mlp {
  std::vector<DenseLayer> layers;

  Tensor forward(Graph& g, Tensor x, const Fwd& o = {}) const;
  Mat forward_plain(const Mat& x) const;
  int in_dim() const { return layers.front().W.w.rows; }
  int out_dim() const { return layers.back().W.w.cols; }
  void collect_params(std::vector<Param*>& out);
};

// Builds an MLP from layer specs with zero biases and zero weights; callers
// init weights afterwards (build_bundle) or set them by hand (tests).
Mlp make_mlp(const std::string& name, const std::vector<LayerSpec>& specs);

// Uniform init on [-r, r] with r = sqrt(6 / (fan_in + fan_out)).
void glorot_init(Mlp& mlp, Rng& rng);
void glorot_init(DenseLayer& layer, Rng& rng);

struct ModelBundle {
  Mode mode = Mode::kJoint;
  int d = 0;      // input dim
  int m = 0;      // class count
  int k = 0;      // sub-target count
  int h = 0;      // feature dim
  int trunk = 0;  // discriminator trunk width

  Mlp f;            // d -> 100 -> h
  Mlp c;            // h -> 100 -> m (softmax)
  Mlp d_trunk;      // h -> trunk, shared by both heads
  DenseLayer d_st;  // trunk -> 2 softmax (joint) | trunk -> 1 sigmoid (alternating)
  DenseLayer d_mt;  // trunk -> k softmax
  Mlp u1;           // (d+h+m) -> 500 -> 1000 -> k
  Mlp u2;           // k -> 1000 -> 1000 -> (d+h+m)
  Param centroids;  // k x k

  std::vector<Param*> feature_params();
  std::vector<Param*> classifier_params();
  std::vector<Param*> discriminator_params();  // trunk + both heads
  std::vector<Param*> meta_params();           // u1 + u2 + centroids
  std::vector<Param*> all_params();            // every parameter, fixed order

  int meta_in_dim() const { return d + h + m; }
};

// Fresh bundle with deterministic init from (seed, "init"). k < 2 is a
// configuration error: a single sub-target leaves nothing to blend.
ModelBundle build_bundle(int d, int m, int k, int h, Mode mode, uint64_t seed,
                         int trunk = 100);

// Re-initializes the autoencoder and zeroes the centroids (cold start for a
// fresh sub-target discovery round).
void reinit_meta(ModelBundle& bundle, Rng& rng);

// Concatenates [x | feat | probs] and runs the encoder.
Tensor forward_meta(Graph& g, const Mlp& u1, Tensor x, Tensor feat, Tensor probs,
                    const Fwd& o = {});
Mat meta_input(const Mat& x, const Mlp& f, const Mlp& c);  // plain concat

// ---- checkpoint: textual shape manifest + flat little-endian doubles ----

void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace amean
