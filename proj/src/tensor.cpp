#include "amean/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace amean {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

CMap emap(const Mat& m) { return CMap(m.a.data(), m.rows, m.cols); }
MMap emap(Mat& m) { return MMap(m.a.data(), m.rows, m.cols); }

[[noreturn]] void shape_fail(const char* op, const Mat& a, const Mat& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                       " and " + shape_str(b));
}

void check_same_graph(const char* op, Tensor a, Tensor b) {
  if (!a.valid() || !b.valid() || a.g != b.g) {
    throw ContractError(std::string(op) + ": tensors must belong to one graph");
  }
}

}  // namespace

// ---- kernels shared with plain forwards ----

void matmul_plain(const Mat& a, const Mat& b, Mat& out) {
  if (a.cols != b.rows) shape_fail("matmul", a, b);
  out = Mat(a.rows, b.cols);
  emap(out).noalias() = emap(a) * emap(b);
}

Mat softmax_rows_plain(const Mat& a) {
  Mat out(a.rows, a.cols);
  for (int r = 0; r < a.rows; ++r) {
    double mx = a.at(r, 0);
    for (int c = 1; c < a.cols; ++c) mx = std::max(mx, a.at(r, c));
    double s = 0.0;
    for (int c = 0; c < a.cols; ++c) {
      const double e = std::exp(a.at(r, c) - mx);
      out.at(r, c) = e;
      s += e;
    }
    for (int c = 0; c < a.cols; ++c) out.at(r, c) /= s;
  }
  return out;
}

// ---- Tensor accessors ----

int Tensor::rows() const { return g->node(id).val.rows; }
int Tensor::cols() const { return g->node(id).val.cols; }
const Mat& Tensor::value() const { return g->node(id).val; }
const Mat& Tensor::grad() const { return g->node(id).grad; }

double Tensor::scalar() const {
  const Mat& v = value();
  if (v.rows != 1 || v.cols != 1) {
    throw ContractError("scalar(): tensor has shape " + shape_str(v));
  }
  return v.a[0];
}

// ---- graph plumbing ----

int Graph::push(Node n) {
  n.grad = Mat::zeros(n.val.rows, n.val.cols);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::constant(Mat v) {
  Node n;
  n.val = std::move(v);
  return Tensor{this, push(std::move(n))};
}

Tensor Graph::leaf(Mat v) { return constant(std::move(v)); }

Tensor Graph::param(Param& p) {
  // Re-registering returns the existing leaf so that every use of a parameter
  // feeds one gradient accumulator, no matter how many forwards share it.
  for (const auto& [id, ptr] : param_leaves_) {
    if (ptr == &p) return Tensor{this, id};
  }
  Tensor t = constant(p.w);
  param_leaves_.emplace_back(t.id, &p);
  return t;
}

const Mat* Graph::find_grad(const Param& p) const {
  for (const auto& [id, ptr] : param_leaves_) {
    if (ptr == &p) return &nodes_[id].grad;
  }
  return nullptr;
}

const Mat& Graph::grad_of(const Param& p) const {
  const Mat* g = find_grad(p);
  if (!g) {
    throw ContractError("grad_of: parameter '" + p.name + "' not registered in this graph");
  }
  return *g;
}

void Graph::zero_grads() {
  for (auto& n : nodes_) {
    std::fill(n.grad.a.begin(), n.grad.a.end(), 0.0);
  }
}

void Graph::backward(Tensor loss) {
  if (loss.g != this || loss.id < 0 || loss.id >= static_cast<int>(nodes_.size())) {
    throw ContractError("backward: tensor does not belong to this graph");
  }
  const Mat& v = nodes_[loss.id].val;
  if (v.rows != 1 || v.cols != 1) {
    throw ContractError("backward: expected a scalar, got shape " + shape_str(v));
  }
  // Only leaf gradients survive between sweeps; interior nodes are scratch
  // space for the current sweep, and stale values would be re-propagated.
  for (Node& n : nodes_) {
    if (n.op != Op::kLeaf) {
      for (double& gv : n.grad.a) gv = 0.0;
    }
  }
  nodes_[loss.id].grad.a[0] += 1.0;
  for (int i = loss.id; i >= 0; --i) backprop_node(i);
}

// ---- forward ops ----

// Gives the file-local op builders access to the graph internals without
// widening the public surface.
class OpBuilder {
 public:
  using Op = Graph::Op;
  using Node = Graph::Node;
  static int push(Graph& g, Node n) { return g.push(std::move(n)); }
};

Tensor matmul(Tensor a, Tensor b) {
  check_same_graph("matmul", a, b);
  Graph::Node n;
  matmul_plain(a.value(), b.value(), n.val);
  n.op = Graph::Op::kMatMul;
  n.in0 = a.id;
  n.in1 = b.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

namespace {

Tensor binary_same_shape(const char* name, OpBuilder::Op op, Tensor a, Tensor b,
                         double (*fwd)(double, double)) {
  check_same_graph(name, a, b);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  if (!av.same_shape(bv)) shape_fail(name, av, bv);
  OpBuilder::Node n;
  n.val = Mat(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) n.val.a[i] = fwd(av.a[i], bv.a[i]);
  n.op = op;
  n.in0 = a.id;
  n.in1 = b.id;
  return Tensor{a.g, OpBuilder::push(*a.g, std::move(n))};
}

Tensor unary(const char* /*name*/, OpBuilder::Op op, Tensor a, double p0, double p1,
             double (*fwd)(double, double, double)) {
  const Mat& av = a.value();
  OpBuilder::Node n;
  n.val = Mat(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) n.val.a[i] = fwd(av.a[i], p0, p1);
  n.op = op;
  n.in0 = a.id;
  n.p0 = p0;
  n.p1 = p1;
  return Tensor{a.g, OpBuilder::push(*a.g, std::move(n))};
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
  return binary_same_shape("add", Graph::Op::kAdd, a, b,
                           [](double x, double y) { return x + y; });
}

Tensor sub(Tensor a, Tensor b) {
  return binary_same_shape("sub", Graph::Op::kSub, a, b,
                           [](double x, double y) { return x - y; });
}

Tensor mul(Tensor a, Tensor b) {
  return binary_same_shape("mul", Graph::Op::kMul, a, b,
                           [](double x, double y) { return x * y; });
}

Tensor div_elem(Tensor a, Tensor b) {
  return binary_same_shape("div_elem", Graph::Op::kDiv, a, b,
                           [](double x, double y) { return x / y; });
}

Tensor add_rowvec(Tensor a, Tensor row) {
  check_same_graph("add_rowvec", a, row);
  const Mat& av = a.value();
  const Mat& rv = row.value();
  if (rv.rows != 1 || rv.cols != av.cols) shape_fail("add_rowvec", av, rv);
  Graph::Node n;
  n.val = Mat(av.rows, av.cols);
  for (int r = 0; r < av.rows; ++r)
    for (int c = 0; c < av.cols; ++c) n.val.at(r, c) = av.at(r, c) + rv.at(0, c);
  n.op = Graph::Op::kAddRow;
  n.in0 = a.id;
  n.in1 = row.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor sub_rowvec(Tensor a, Tensor row) {
  check_same_graph("sub_rowvec", a, row);
  const Mat& av = a.value();
  const Mat& rv = row.value();
  if (rv.rows != 1 || rv.cols != av.cols) shape_fail("sub_rowvec", av, rv);
  Graph::Node n;
  n.val = Mat(av.rows, av.cols);
  for (int r = 0; r < av.rows; ++r)
    for (int c = 0; c < av.cols; ++c) n.val.at(r, c) = av.at(r, c) - rv.at(0, c);
  n.op = Graph::Op::kSubRow;
  n.in0 = a.id;
  n.in1 = row.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor div_colvec(Tensor a, Tensor col) {
  check_same_graph("div_colvec", a, col);
  const Mat& av = a.value();
  const Mat& cv = col.value();
  if (cv.cols != 1 || cv.rows != av.rows) shape_fail("div_colvec", av, cv);
  Graph::Node n;
  n.val = Mat(av.rows, av.cols);
  for (int r = 0; r < av.rows; ++r)
    for (int c = 0; c < av.cols; ++c) n.val.at(r, c) = av.at(r, c) / cv.at(r, 0);
  n.op = Graph::Op::kDivCol;
  n.in0 = a.id;
  n.in1 = col.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor scale(Tensor a, double s) {
  return unary("scale", Graph::Op::kScale, a, s, 0.0,
               [](double x, double p, double) { return x * p; });
}

Tensor add_const(Tensor a, double c) {
  return unary("add_const", Graph::Op::kAddConst, a, c, 0.0,
               [](double x, double p, double) { return x + p; });
}

Tensor relu(Tensor a) {
  return unary("relu", Graph::Op::kRelu, a, 0.0, 0.0,
               [](double x, double, double) { return x > 0.0 ? x : 0.0; });
}

Tensor leaky_relu(Tensor a, double slope) {
  return unary("leaky_relu", Graph::Op::kLeakyRelu, a, slope, 0.0,
               [](double x, double p, double) { return x > 0.0 ? x : p * x; });
}

Tensor sigmoid(Tensor a) {
  return unary("sigmoid", Graph::Op::kSigmoid, a, 0.0, 0.0,
               [](double x, double, double) {
                 return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                 : std::exp(x) / (1.0 + std::exp(x));
               });
}

Tensor exp_elem(Tensor a) {
  return unary("exp", Graph::Op::kExp, a, 0.0, 0.0,
               [](double x, double, double) { return std::exp(x); });
}

Tensor clamp(Tensor a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary("clamp", Graph::Op::kClamp, a, lo, hi,
               [](double x, double l, double h) { return x < l ? l : (x > h ? h : x); });
}

Tensor log_elem(Tensor a) {
  const Mat& av = a.value();
  for (size_t i = 0; i < av.size(); ++i) {
    if (!(av.a[i] > 0.0)) {
      throw DomainError("log: non-positive entry " + fmt17(av.a[i]) +
                        " at flat index " + std::to_string(i));
    }
  }
  return unary("log", Graph::Op::kLog, a, 0.0, 0.0,
               [](double x, double, double) { return std::log(x); });
}

Tensor softmax_rows(Tensor a) {
  Graph::Node n;
  n.val = softmax_rows_plain(a.value());
  n.op = Graph::Op::kSoftmaxRows;
  n.in0 = a.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor sum(Tensor a) {
  double s = 0.0;
  for (double x : a.value().a) s += x;
  Graph::Node n;
  n.val = Mat::scalar(s);
  n.op = Graph::Op::kSum;
  n.in0 = a.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor mean(Tensor a) {
  const size_t count = a.value().size();
  if (count == 0) throw ContractError("mean: empty tensor");
  double s = 0.0;
  for (double x : a.value().a) s += x;
  Graph::Node n;
  n.val = Mat::scalar(s / static_cast<double>(count));
  n.op = Graph::Op::kMean;
  n.in0 = a.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor sum_rows(Tensor a) {
  const Mat& av = a.value();
  Graph::Node n;
  n.val = Mat(av.rows, 1);
  for (int r = 0; r < av.rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < av.cols; ++c) s += av.at(r, c);
    n.val.at(r, 0) = s;
  }
  n.op = Graph::Op::kSumRows;
  n.in0 = a.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor concat_cols(Tensor a, Tensor b) {
  check_same_graph("concat_cols", a, b);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  if (av.rows != bv.rows) shape_fail("concat_cols", av, bv);
  Graph::Node n;
  n.val = Mat(av.rows, av.cols + bv.cols);
  for (int r = 0; r < av.rows; ++r) {
    for (int c = 0; c < av.cols; ++c) n.val.at(r, c) = av.at(r, c);
    for (int c = 0; c < bv.cols; ++c) n.val.at(r, av.cols + c) = bv.at(r, c);
  }
  n.op = Graph::Op::kConcatCols;
  n.in0 = a.id;
  n.in1 = b.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor sse(Tensor a, Tensor b) {
  check_same_graph("sse", a, b);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  if (!av.same_shape(bv)) shape_fail("sse", av, bv);
  double s = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = av.a[i] - bv.a[i];
    s += d * d;
  }
  Graph::Node n;
  n.val = Mat::scalar(s);
  n.op = Graph::Op::kSse;
  n.in0 = a.id;
  n.in1 = b.id;
  return Tensor{a.g, a.g->push(std::move(n))};
}

Tensor grad_reverse(Tensor a, double s) {
  Graph::Node n;
  n.val = a.value();  // identity forward, bit for bit
  n.op = Graph::Op::kGradReverse;
  n.in0 = a.id;
  n.p0 = s;
  return Tensor{a.g, a.g->push(std::move(n))};
}

// ---- backward rules ----

void Graph::backprop_node(int i) {
  Node& n = nodes_[i];
  const Mat& g = n.grad;
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatMul: {
      Node& a = nodes_[n.in0];
      Node& b = nodes_[n.in1];
      emap(a.grad).noalias() += emap(g) * emap(b.val).transpose();
      emap(b.grad).noalias() += emap(a.val).transpose() * emap(g);
      break;
    }
    case Op::kAdd: {
      Node& a = nodes_[n.in0];
      Node& b = nodes_[n.in1];
      for (size_t j = 0; j < g.size(); ++j) {
        a.grad.a[j] += g.a[j];
        b.grad.a[j] += g.a[j];
      }
      break;
    }
    case Op::kSub: {
      Node& a = nodes_[n.in0];
      Node& b = nodes_[n.in1];
      for (size_t j = 0; j < g.size(); ++j) {
        a.grad.a[j] += g.a[j];
        b.grad.a[j] -= g.a[j];
      }
      break;
    }
    case Op::kAddRow: {
      Node& a = nodes_[n.in0];
      Node& r = nodes_[n.in1];
      for (int rr = 0; rr < g.rows; ++rr)
        for (int c = 0; c < g.cols; ++c) {
          a.grad.at(rr, c) += g.at(rr, c);
          r.grad.at(0, c) += g.at(rr, c);
        }
      break;
    }
    case Op::kSubRow: {
      Node& a = nodes_[n.in0];
      Node& r = nodes_[n.in1];
      for (int rr = 0; rr < g.rows; ++rr)
        for (int c = 0; c < g.cols; ++c) {
          a.grad.at(rr, c) += g.at(rr, c);
          r.grad.at(0, c) -= g.at(rr, c);
        }
      break;
    }
    case Op::kMul: {
      Node& a = nodes_[n.in0];
      Node& b = nodes_[n.in1];
      for (size_t j = 0; j < g.size(); ++j) {
        a.grad.a[j] += g.a[j] * b.val.a[j];
        b.grad.a[j] += g.a[j] * a.val.a[j];
      }
      break;
    }
    case Op::kDiv: {
      // c = a / b: dc/da = 1/b, dc/db = -a/b^2 = -c/b
      Node& a = nodes_[n.in0];
      Node& b = nodes_[n.in1];
      for (size_t j = 0; j < g.size(); ++j) {
        a.grad.a[j] += g.a[j] / b.val.a[j];
        b.grad.a[j] -= g.a[j] * n.val.a[j] / b.val.a[j];
      }
      break;
    }
    case Op::kDivCol: {
      // c = a / col: dc/da_ij = 1/col_i, dc/dcol_i = -sum_j g_ij c_ij / col_i
      Node& a = nodes_[n.in0];
      Node& col = nodes_[n.in1];
      for (int rr = 0; rr < g.rows; ++rr) {
        const double inv = 1.0 / col.val.at(rr, 0);
        double acc = 0.0;
        for (int c = 0; c < g.cols; ++c) {
          a.grad.at(rr, c) += g.at(rr, c) * inv;
          acc += g.at(rr, c) * n.val.at(rr, c);
        }
        col.grad.at(rr, 0) -= acc * inv;
      }
      break;
    }
    case Op::kScale: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) a.grad.a[j] += n.p0 * g.a[j];
      break;
    }
    case Op::kAddConst: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) a.grad.a[j] += g.a[j];
      break;
    }
    case Op::kRelu: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) {
        if (a.val.a[j] > 0.0) a.grad.a[j] += g.a[j];
      }
      break;
    }
    case Op::kLeakyRelu: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) {
        a.grad.a[j] += (a.val.a[j] > 0.0 ? 1.0 : n.p0) * g.a[j];
      }
      break;
    }
    case Op::kSigmoid: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) {
        const double y = n.val.a[j];
        a.grad.a[j] += g.a[j] * y * (1.0 - y);
      }
      break;
    }
    case Op::kSoftmaxRows: {
      // da_i = y_i * (g_i - <g_i, y_i>) per row
      Node& a = nodes_[n.in0];
      for (int rr = 0; rr < g.rows; ++rr) {
        double dot = 0.0;
        for (int c = 0; c < g.cols; ++c) dot += g.at(rr, c) * n.val.at(rr, c);
        for (int c = 0; c < g.cols; ++c) {
          a.grad.at(rr, c) += n.val.at(rr, c) * (g.at(rr, c) - dot);
        }
      }
      break;
    }
    case Op::kLog: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) a.grad.a[j] += g.a[j] / a.val.a[j];
      break;
    }
    case Op::kExp: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) a.grad.a[j] += g.a[j] * n.val.a[j];
      break;
    }
    case Op::kClamp: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) {
        const double x = a.val.a[j];
        if (x >= n.p0 && x <= n.p1) a.grad.a[j] += g.a[j];
      }
      break;
    }
    case Op::kSum: {
      Node& a = nodes_[n.in0];
      const double gs = g.a[0];
      for (size_t j = 0; j < a.grad.size(); ++j) a.grad.a[j] += gs;
      break;
    }
    case Op::kMean: {
      Node& a = nodes_[n.in0];
      const double gs = g.a[0] / static_cast<double>(a.grad.size());
      for (size_t j = 0; j < a.grad.size(); ++j) a.grad.a[j] += gs;
      break;
    }
    case Op::kSumRows: {
      Node& a = nodes_[n.in0];
      for (int rr = 0; rr < a.grad.rows; ++rr) {
        const double gs = g.at(rr, 0);
        for (int c = 0; c < a.grad.cols; ++c) a.grad.at(rr, c) += gs;
      }
      break;
    }
    case Op::kConcatCols: {
      Node& a = nodes_[n.in0];
      Node& b = nodes_[n.in1];
      for (int rr = 0; rr < g.rows; ++rr) {
        for (int c = 0; c < a.grad.cols; ++c) a.grad.at(rr, c) += g.at(rr, c);
        for (int c = 0; c < b.grad.cols; ++c) {
          b.grad.at(rr, c) += g.at(rr, a.grad.cols + c);
        }
      }
      break;
    }
    case Op::kSse: {
      Node& a = nodes_[n.in0];
      Node& b = nodes_[n.in1];
      const double gs = 2.0 * g.a[0];
      for (size_t j = 0; j < a.grad.size(); ++j) {
        const double d = a.val.a[j] - b.val.a[j];
        a.grad.a[j] += gs * d;
        b.grad.a[j] -= gs * d;
      }
      break;
    }
    case Op::kGradReverse: {
      Node& a = nodes_[n.in0];
      for (size_t j = 0; j < g.size(); ++j) a.grad.a[j] -= n.p0 * g.a[j];
      break;
    }
  }
}

}  // namespace amean
