#include "doctest.h"

#include <cmath>
#include <vector>

#include "amean/rng.hpp"
#include "amean/tensor.hpp"
#include "fd_check.hpp"

using namespace amean;
using fdcheck::BuildOut;

namespace {

constexpr int kProbes = 24;
constexpr double kFdTol = 1e-4;

// Random matrix in [lo, hi]; entries with |v| < margin are re-drawn so finite
// differences never straddle a kink (relu) or a pole (division).
Mat probe_mat(Rng& rng, int r, int c, double lo, double hi, double margin = 0.0) {
  Mat m(r, c);
  for (double& v : m.a) {
    do {
      v = rng.uniform(lo, hi);
    } while (std::abs(v) < margin);
  }
  return m;
}

int dim(Rng& rng) { return static_cast<int>(rng.uniform_int(1, 5)); }

// Reduces `out` to a scalar with fixed random weights so every output entry
// contributes a distinct upstream gradient.
Tensor weigh(Graph& g, Tensor out, const Mat& w) { return sum(mul(out, g.constant(w))); }

}  // namespace

TEST_CASE("finite differences: elementwise binary ops") {
  Rng rng(100);
  for (int probe = 0; probe < kProbes; ++probe) {
    int r = dim(rng), c = dim(rng);
    Mat a = probe_mat(rng, r, c, -2, 2);
    Mat b = probe_mat(rng, r, c, -2, 2, 0.3);  // also safe as a divisor
    Mat w = probe_mat(rng, r, c, -1, 1);
    auto check_op = [&](auto op) {
      auto build = [&]() {
        Graph g;
        Tensor ta = g.leaf(a), tb = g.leaf(b);
        Tensor loss = weigh(g, op(ta, tb), w);
        g.backward(loss);
        return BuildOut{loss.scalar(), {ta.grad(), tb.grad()}};
      };
      CHECK(fdcheck::fd_check({&a, &b}, build, rng).max_rel < kFdTol);
    };
    check_op([](Tensor x, Tensor y) { return add(x, y); });
    check_op([](Tensor x, Tensor y) { return sub(x, y); });
    check_op([](Tensor x, Tensor y) { return mul(x, y); });
    check_op([](Tensor x, Tensor y) { return div_elem(x, y); });
  }
}

TEST_CASE("finite differences: matmul") {
  Rng rng(101);
  for (int probe = 0; probe < kProbes; ++probe) {
    int n = dim(rng), k = dim(rng), m = dim(rng);
    Mat a = probe_mat(rng, n, k, -2, 2);
    Mat b = probe_mat(rng, k, m, -2, 2);
    Mat w = probe_mat(rng, n, m, -1, 1);
    auto build = [&]() {
      Graph g;
      Tensor ta = g.leaf(a), tb = g.leaf(b);
      Tensor loss = weigh(g, matmul(ta, tb), w);
      g.backward(loss);
      return BuildOut{loss.scalar(), {ta.grad(), tb.grad()}};
    };
    CHECK(fdcheck::fd_check({&a, &b}, build, rng).max_rel < kFdTol);
  }
}

TEST_CASE("finite differences: row and column broadcasts") {
  Rng rng(102);
  for (int probe = 0; probe < kProbes; ++probe) {
    int n = dim(rng), d = dim(rng);
    Mat a = probe_mat(rng, n, d, -2, 2);
    Mat row = probe_mat(rng, 1, d, -2, 2);
    Mat col = probe_mat(rng, n, 1, -2, 2, 0.3);
    Mat w = probe_mat(rng, n, d, -1, 1);
    auto check_op = [&](Mat& other, auto op) {
      auto build = [&]() {
        Graph g;
        Tensor ta = g.leaf(a), to = g.leaf(other);
        Tensor loss = weigh(g, op(ta, to), w);
        g.backward(loss);
        return BuildOut{loss.scalar(), {ta.grad(), to.grad()}};
      };
      CHECK(fdcheck::fd_check({&a, &other}, build, rng).max_rel < kFdTol);
    };
    check_op(row, [](Tensor x, Tensor y) { return add_rowvec(x, y); });
    check_op(row, [](Tensor x, Tensor y) { return sub_rowvec(x, y); });
    check_op(col, [](Tensor x, Tensor y) { return div_colvec(x, y); });
  }
}

TEST_CASE("finite differences: scalar-parameter ops") {
  Rng rng(103);
  for (int probe = 0; probe < kProbes; ++probe) {
    int r = dim(rng), c = dim(rng);
    Mat a = probe_mat(rng, r, c, -2, 2);
    Mat w = probe_mat(rng, r, c, -1, 1);
    double s = rng.uniform(-2, 2);
    auto check_op = [&](auto op) {
      auto build = [&]() {
        Graph g;
        Tensor ta = g.leaf(a);
        Tensor loss = weigh(g, op(ta), w);
        g.backward(loss);
        return BuildOut{loss.scalar(), {ta.grad()}};
      };
      CHECK(fdcheck::fd_check({&a}, build, rng).max_rel < kFdTol);
    };
    check_op([&](Tensor x) { return scale(x, s); });
    check_op([&](Tensor x) { return add_const(x, s); });
  }
}

TEST_CASE("finite differences: nonlinearities") {
  Rng rng(104);
  for (int probe = 0; probe < kProbes; ++probe) {
    int r = dim(rng), c = dim(rng);
    Mat kinky = probe_mat(rng, r, c, -2, 2, 0.05);  // away from the relu kink
    Mat smooth = probe_mat(rng, r, c, -4, 4);
    Mat positive = probe_mat(rng, r, c, 0.05, 3);
    Mat w = probe_mat(rng, r, c, -1, 1);
    auto check_on = [&](Mat& input, auto op) {
      auto build = [&]() {
        Graph g;
        Tensor ta = g.leaf(input);
        Tensor loss = weigh(g, op(ta), w);
        g.backward(loss);
        return BuildOut{loss.scalar(), {ta.grad()}};
      };
      CHECK(fdcheck::fd_check({&input}, build, rng).max_rel < kFdTol);
    };
    check_on(kinky, [](Tensor x) { return relu(x); });
    check_on(kinky, [](Tensor x) { return leaky_relu(x, 0.1); });
    check_on(smooth, [](Tensor x) { return sigmoid(x); });
    check_on(smooth, [](Tensor x) { return softmax_rows(x); });
    check_on(smooth, [](Tensor x) { return exp_elem(x); });
    check_on(positive, [](Tensor x) { return log_elem(x); });
  }
}

TEST_CASE("finite differences: clamp passes gradients only inside the window") {
  Rng rng(105);
  const double lo = -0.75, hi = 0.85;
  for (int probe = 0; probe < kProbes; ++probe) {
    int r = dim(rng), c = dim(rng);
    Mat a(r, c);
    for (double& v : a.a) {
      // Keep entries clear of the window edges so the difference quotient
      // sees a locally linear function (some entries land outside: good,
      // their gradient must be exactly zero).
      do {
        v = rng.uniform(-2, 2);
      } while (std::abs(v - lo) < 0.05 || std::abs(v - hi) < 0.05);
    }
    Mat w = probe_mat(rng, r, c, -1, 1);
    auto build = [&]() {
      Graph g;
      Tensor ta = g.leaf(a);
      Tensor loss = weigh(g, clamp(ta, lo, hi), w);
      g.backward(loss);
      return BuildOut{loss.scalar(), {ta.grad()}};
    };
    CHECK(fdcheck::fd_check({&a}, build, rng).max_rel < kFdTol);
  }
}

TEST_CASE("finite differences: reductions and concatenation") {
  Rng rng(106);
  for (int probe = 0; probe < kProbes; ++probe) {
    int n = dim(rng), c1 = dim(rng), c2 = dim(rng);
    Mat a = probe_mat(rng, n, c1, -2, 2);
    Mat b = probe_mat(rng, n, c2, -2, 2);
    double s = rng.uniform(0.5, 2);

    auto scalar_build = [&](auto op) {
      return [&, op]() {
        Graph g;
        Tensor ta = g.leaf(a);
        Tensor loss = scale(op(ta), s);  // non-unit upstream gradient
        g.backward(loss);
        return BuildOut{loss.scalar(), {ta.grad()}};
      };
    };
    CHECK(fdcheck::fd_check({&a}, scalar_build([](Tensor x) { return sum(x); }), rng)
              .max_rel < kFdTol);
    CHECK(fdcheck::fd_check({&a}, scalar_build([](Tensor x) { return mean(x); }), rng)
              .max_rel < kFdTol);

    Mat wr = probe_mat(rng, n, 1, -1, 1);
    auto rows_build = [&]() {
      Graph g;
      Tensor ta = g.leaf(a);
      Tensor loss = weigh(g, sum_rows(ta), wr);
      g.backward(loss);
      return BuildOut{loss.scalar(), {ta.grad()}};
    };
    CHECK(fdcheck::fd_check({&a}, rows_build, rng).max_rel < kFdTol);

    Mat wc = probe_mat(rng, n, c1 + c2, -1, 1);
    auto concat_build = [&]() {
      Graph g;
      Tensor ta = g.leaf(a), tb = g.leaf(b);
      Tensor loss = weigh(g, concat_cols(ta, tb), wc);
      g.backward(loss);
      return BuildOut{loss.scalar(), {ta.grad(), tb.grad()}};
    };
    CHECK(fdcheck::fd_check({&a, &b}, concat_build, rng).max_rel < kFdTol);

    Mat b1 = probe_mat(rng, n, c1, -2, 2);
    auto sse_build = [&]() {
      Graph g;
      Tensor ta = g.leaf(a), tb = g.leaf(b1);
      Tensor loss = scale(sse(ta, tb), s);
      g.backward(loss);
      return BuildOut{loss.scalar(), {ta.grad(), tb.grad()}};
    };
    CHECK(fdcheck::fd_check({&a, &b1}, sse_build, rng).max_rel < kFdTol);
  }
}

TEST_CASE("finite differences: clamped log of probabilities") {
  Rng rng(107);
  for (int probe = 0; probe < kProbes; ++probe) {
    int r = dim(rng), c = dim(rng);
    Mat p = probe_mat(rng, r, c, 0.1, 0.9);
    Mat w = probe_mat(rng, r, c, -1, 1);
    auto build = [&]() {
      Graph g;
      Tensor tp = g.leaf(p);
      Tensor loss = weigh(g, log_probs(tp), w);
      g.backward(loss);
      return BuildOut{loss.scalar(), {tp.grad()}};
    };
    CHECK(fdcheck::fd_check({&p}, build, rng).max_rel < kFdTol);
  }
}

TEST_CASE("gradient reversal: identity forward, exactly -s times the upstream gradient") {
  Rng rng(108);
  for (double s : {0.0, 0.5, 1.0}) {
    CAPTURE(s);
    Mat x = rng.gaussian_mat(4, 3);
    Mat w = rng.gaussian_mat(4, 3);
    Graph g;
    Tensor tx = g.leaf(x);
    Tensor ty = grad_reverse(tx, s);
    REQUIRE(ty.value().a == x.a);  // bitwise identity
    g.backward(sum(mul(ty, g.constant(w))));
    for (size_t i = 0; i < x.size(); ++i) {
      CHECK(tx.grad().a[i] == -s * w.a[i]);  // exact, not approximate
    }
  }
}

TEST_CASE("gradient reversal: double reversal restores the plain gradient") {
  Rng rng(109);
  Mat x = rng.gaussian_mat(3, 3);
  Mat w = rng.gaussian_mat(3, 3);
  Graph g;
  Tensor tx = g.leaf(x);
  g.backward(sum(mul(grad_reverse(grad_reverse(tx, 1.0), 1.0), g.constant(w))));
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(tx.grad().a[i] == w.a[i]);
  }
}

TEST_CASE("gradient reversal with s=0 stops gradients dead") {
  Rng rng(110);
  Mat x = rng.gaussian_mat(3, 4);
  Graph g;
  Tensor tx = g.leaf(x);
  Tensor stopped = grad_reverse(tx, 0.0);
  Tensor live = mul(tx, tx);
  g.backward(add(sum(stopped), sum(live)));
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(tx.grad().a[i] == doctest::Approx(2.0 * x.a[i]).epsilon(1e-12));
  }
}

TEST_CASE("re-registering a parameter reuses one leaf and sums both branch gradients") {
  Rng rng(111);
  Param p{"shared", rng.gaussian_mat(3, 3)};
  Mat a = rng.gaussian_mat(2, 3);
  Mat b = rng.gaussian_mat(4, 3);

  {
    Graph g;
    CHECK(g.param(p).id == g.param(p).id);
    CHECK(g.param_leaves().size() == 1);
  }

  auto build = [&]() {
    Graph g;
    Tensor w1 = g.param(p);
    Tensor branch1 = sum(matmul(g.constant(a), w1));
    Tensor w2 = g.param(p);  // same storage, must reuse the same leaf
    Tensor branch2 = sum(sigmoid(matmul(g.constant(b), w2)));
    Tensor loss = add(branch1, branch2);
    g.backward(loss);
    return BuildOut{loss.scalar(), {g.grad_of(p)}};
  };
  CHECK(fdcheck::fd_check({&p.w}, build, rng).max_rel < kFdTol);
}

TEST_CASE("a tensor used by two consumers accumulates both gradients") {
  Rng rng(112);
  Mat x = probe_mat(rng, 3, 2, 0.2, 2);
  auto build = [&]() {
    Graph g;
    Tensor tx = g.leaf(x);
    Tensor shared = log_elem(tx);
    Tensor loss = add(sum(mul(shared, shared)), mean(shared));
    g.backward(loss);
    return BuildOut{loss.scalar(), {tx.grad()}};
  };
  CHECK(fdcheck::fd_check({&x}, build, rng).max_rel < kFdTol);
}

TEST_CASE("backward accumulates until zero_grads resets") {
  Rng rng(113);
  Param p{"acc", rng.gaussian_mat(2, 2)};
  Graph g;
  Tensor tw = g.param(p);
  Tensor loss = sum(mul(tw, tw));
  g.backward(loss);
  Mat once = g.grad_of(p);
  g.backward(loss);
  for (size_t i = 0; i < once.size(); ++i) {
    CHECK(g.grad_of(p).a[i] == doctest::Approx(2.0 * once.a[i]).epsilon(1e-12));
  }
  g.zero_grads();
  for (double v : g.grad_of(p).a) CHECK(v == 0.0);
  g.backward(loss);
  for (size_t i = 0; i < once.size(); ++i) {
    CHECK(g.grad_of(p).a[i] == once.a[i]);
  }
}

TEST_CASE("hand-checked forward values") {
  Graph g;
  Tensor a = g.constant(Mat(2, 2, {1, 2, 3, 4}));
  Tensor b = g.constant(Mat(2, 2, {5, 6, 7, 8}));

  Mat mm = matmul(a, b).value();
  CHECK(mm.at(0, 0) == 19);
  CHECK(mm.at(0, 1) == 22);
  CHECK(mm.at(1, 0) == 43);
  CHECK(mm.at(1, 1) == 50);

  CHECK(sse(a, b).scalar() == 64);  // four squared gaps of 4
  CHECK(mean(a).scalar() == 2.5);
  CHECK(sum(a).scalar() == 10);

  Mat sr = sum_rows(g.constant(Mat(2, 3, {1, 2, 3, 4, 5, 6}))).value();
  CHECK(sr.rows == 2);
  CHECK(sr.cols == 1);
  CHECK(sr.at(0, 0) == 6);
  CHECK(sr.at(1, 0) == 15);

  Mat cc = concat_cols(a, b).value();
  CHECK(cc.cols == 4);
  CHECK(cc.at(0, 0) == 1);
  CHECK(cc.at(0, 2) == 5);
  CHECK(cc.at(1, 1) == 4);
  CHECK(cc.at(1, 3) == 8);

  CHECK(sigmoid(g.constant(Mat::scalar(0))).scalar() == 0.5);

  // softmax([0, ln 3]) = [1/4, 3/4]
  Mat sm = softmax_rows(g.constant(Mat(1, 2, {0.0, std::log(3.0)}))).value();
  CHECK(sm.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sm.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  Mat cl = clamp(g.constant(Mat(1, 3, {-5, 0.3, 5})), -1, 1).value();
  CHECK(cl.at(0, 0) == -1);
  CHECK(cl.at(0, 1) == 0.3);
  CHECK(cl.at(0, 2) == 1);
}

TEST_CASE("softmax rows survive large logits and sum to one") {
  Graph g;
  Mat big(2, 3, {1000, 1001, 1002, -1000, -999, -998});
  Mat sm = softmax_rows(g.constant(big)).value();
  for (int r = 0; r < 2; ++r) {
    double total = 0;
    for (int c = 0; c < 3; ++c) {
      double v = sm.at(r, c);
      CHECK(std::isfinite(v));
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Both rows have the same logit gaps, so identical softmax values.
  for (int c = 0; c < 3; ++c) {
    CHECK(sm.at(0, c) == doctest::Approx(sm.at(1, c)).epsilon(1e-12));
  }
}

TEST_CASE("clamped log accepts hard zeros and ones") {
  Graph g;
  Tensor lp = log_probs(g.constant(Mat(1, 2, {0.0, 1.0})));
  CHECK(lp.value().at(0, 0) == doctest::Approx(std::log(kProbClampLo)).epsilon(1e-12));
  CHECK(lp.value().at(0, 1) == doctest::Approx(std::log(kProbClampHi)).epsilon(1e-12));
}

TEST_CASE("plain kernels agree bitwise with the graph ops") {
  Rng rng(114);
  Mat a = rng.gaussian_mat(5, 4);
  Mat b = rng.gaussian_mat(4, 6);
  Graph g;
  Mat via_graph = matmul(g.constant(a), g.constant(b)).value();
  Mat plain;
  matmul_plain(a, b, plain);
  REQUIRE(plain.same_shape(via_graph));
  CHECK(plain.a == via_graph.a);

  Mat logits = rng.gaussian_mat(5, 3);
  Mat sm_graph = softmax_rows(g.constant(logits)).value();
  Mat sm_plain = softmax_rows_plain(logits);
  REQUIRE(sm_plain.same_shape(sm_graph));
  CHECK(sm_plain.a == sm_graph.a);
}

TEST_CASE("shape and domain violations are rejected") {
  Graph g;
  Tensor a = g.constant(Mat(2, 3));
  Tensor b = g.constant(Mat(2, 2));
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(sub(a, b), DimensionError);
  CHECK_THROWS_AS(mul(a, b), DimensionError);
  CHECK_THROWS_AS(div_elem(a, b), DimensionError);
  CHECK_THROWS_AS(add_rowvec(a, g.constant(Mat(1, 2))), DimensionError);
  CHECK_THROWS_AS(div_colvec(a, g.constant(Mat(3, 1))), DimensionError);
  CHECK_THROWS_AS(concat_cols(a, g.constant(Mat(3, 3))), DimensionError);
  CHECK_THROWS_AS(sse(a, b), DimensionError);

  CHECK_THROWS_AS(log_elem(g.constant(Mat(1, 1, {0.0}))), DomainError);
  CHECK_THROWS_AS(log_elem(g.constant(Mat(1, 1, {-0.5}))), DomainError);
  CHECK_THROWS_AS(clamp(a, 2.0, 1.0), ContractError);

  CHECK_THROWS_AS(a.scalar(), ContractError);
  CHECK_THROWS_AS(g.backward(a), ContractError);

  Param never{"never-registered", Mat(2, 2)};
  CHECK(g.find_grad(never) == nullptr);
  CHECK_THROWS_AS(g.grad_of(never), ContractError);
}

TEST_CASE("tensors from different graphs cannot be combined") {
  Graph g1, g2;
  Tensor a = g1.constant(Mat(2, 2));
  Tensor b = g2.constant(Mat(2, 2));
  CHECK_THROWS_AS(add(a, b), ContractError);
  CHECK_THROWS_AS(g1.backward(sum(b)), ContractError);
}
