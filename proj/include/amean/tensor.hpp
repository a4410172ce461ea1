// Reverse-mode automatic differentiation on 2-D double tensors.
//
// A Graph is an append-only arena of nodes; every operation records its
// inputs, so creation order is already a topological order and backward() is
// a single reverse sweep. Tensors are cheap handles (graph pointer + index).
// All shapes are rows x cols; a scalar is 1x1.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "amean/common.hpp"

namespace amean {

class Graph;

// Named, persistent parameter. Lives outside any graph; each training step
// registers it as a leaf and reads its gradient back after backward().
struct Param {
  std::string name;
  Mat w;
};

struct Tensor {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  int rows() const;
  int cols() const;
  const Mat& value() const;
  const Mat& grad() const;
  // Value of a 1x1 tensor; ContractError otherwise.
  double scalar() const;
};

class Graph {
 public:
  // Leaf whose gradient nobody reads (inputs, masks, frozen values).
  Tensor constant(Mat v);
  // Leaf tied to a persistent parameter; value is copied in at registration.
  Tensor param(Param& p);
  // Free-standing differentiable leaf (e.g. a perturbation being optimized).
  Tensor leaf(Mat v);

  // Reverse sweep from a scalar node. Gradients accumulate; call zero_grads()
  // between passes that should not sum.
  void backward(Tensor loss);
  void zero_grads();

  size_t node_count() const { return nodes_.size(); }

  // Parameter leaves registered in this graph, in registration order.
  const std::vector<std::pair<int, Param*>>& param_leaves() const {
    return param_leaves_;
  }
  // Gradient currently accumulated for a registered parameter (zeros if the
  // parameter was registered but untouched by the swept subgraph).
  const Mat& grad_of(const Param& p) const;
  // Same, but nullptr when the parameter never entered this graph.
  const Mat* find_grad(const Param& p) const;

 private:
  friend struct Tensor;
  friend class OpBuilder;

  enum class Op : uint8_t {
    kLeaf,
    kMatMul,
    kAdd,
    kAddRow,
    kSub,
    kSubRow,
    kMul,
    kDiv,
    kDivCol,
    kScale,
    kAddConst,
    kRelu,
    kLeakyRelu,
    kSigmoid,
    kSoftmaxRows,
    kLog,
    kExp,
    kClamp,
    kSum,
    kMean,
    kSumRows,
    kConcatCols,
    kSse,
    kGradReverse,
  };

  struct Node {
    Mat val;
    Mat grad;
    Op op = Op::kLeaf;
    int in0 = -1;
    int in1 = -1;
    double p0 = 0.0;
    double p1 = 0.0;
  };

  int push(Node n);
  void backprop_node(int i);
  const Node& node(int i) const { return nodes_[i]; }
  Node& node(int i) { return nodes_[i]; }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param*>> param_leaves_;

  friend Tensor matmul(Tensor, Tensor);
  friend Tensor add(Tensor, Tensor);
  friend Tensor add_rowvec(Tensor, Tensor);
  friend Tensor sub(Tensor, Tensor);
  friend Tensor sub_rowvec(Tensor, Tensor);
  friend Tensor mul(Tensor, Tensor);
  friend Tensor div_elem(Tensor, Tensor);
  friend Tensor div_colvec(Tensor, Tensor);
  friend Tensor scale(Tensor, double);
  friend Tensor add_const(Tensor, double);
  friend Tensor relu(Tensor);
  friend Tensor leaky_relu(Tensor, double);
  friend Tensor sigmoid(Tensor);
  friend Tensor softmax_rows(Tensor);
  friend Tensor log_elem(Tensor);
  friend Tensor exp_elem(Tensor);
  friend Tensor clamp(Tensor, double, double);
  friend Tensor sum(Tensor);
  friend Tensor mean(Tensor);
  friend Tensor sum_rows(Tensor);
  friend Tensor concat_cols(Tensor, Tensor);
  friend Tensor sse(Tensor, Tensor);
  friend Tensor grad_reverse(Tensor, double);
};

// ---- primitive operations ----

Tensor matmul(Tensor a, Tensor b);        // (n×k)·(k×m)
Tensor add(Tensor a, Tensor b);           // same shape
Tensor add_rowvec(Tensor a, Tensor row);  // (n×d) + (1×d) broadcast over rows
Tensor sub(Tensor a, Tensor b);
Tensor sub_rowvec(Tensor a, Tensor row);
Tensor mul(Tensor a, Tensor b);           // elementwise
Tensor div_elem(Tensor a, Tensor b);      // elementwise
Tensor div_colvec(Tensor a, Tensor col);  // (n×d) / (n×1) broadcast over cols
Tensor scale(Tensor a, double s);
Tensor add_const(Tensor a, double c);
Tensor relu(Tensor a);
Tensor leaky_relu(Tensor a, double slope);
Tensor sigmoid(Tensor a);
Tensor softmax_rows(Tensor a);  // row-wise, max-shifted for stability
Tensor log_elem(Tensor a);      // DomainError on any entry <= 0
Tensor exp_elem(Tensor a);
Tensor clamp(Tensor a, double lo, double hi);  // gradient 0 on clamped entries
Tensor sum(Tensor a);                          // scalar
Tensor mean(Tensor a);                         // scalar
Tensor sum_rows(Tensor a);                     // (n×d) -> (n×1)
Tensor concat_cols(Tensor a, Tensor b);        // along the feature axis
Tensor sse(Tensor a, Tensor b);                // scalar sum of squared differences
// Identity forward; backward multiplies the upstream gradient by -s.
// s = 0 therefore acts as a gradient stop.
Tensor grad_reverse(Tensor a, double s);

// Probabilities are clamped into [kProbClampLo, kProbClampHi] before any log.
inline constexpr double kProbClampLo = 1e-12;
inline constexpr double kProbClampHi = 1.0 - 1e-12;

// log(clamp(p)): the only sanctioned way to take logs of probabilities.
inline Tensor log_probs(Tensor p) {
  return log_elem(clamp(p, kProbClampLo, kProbClampHi));
}

// ---- plain (graph-free) kernels shared with evaluation paths ----

// C = A * B. The same kernel backs the graph op so that graph and plain
// forwards agree bitwise.
void matmul_plain(const Mat& a, const Mat& b, Mat& out);
Mat softmax_rows_plain(const Mat& a);

}  // namespace amean
