#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <set>
#include <string>

#include "amean/networks.hpp"
#include "amean/rng.hpp"
#include "amean/tensor.hpp"
#include "fd_check.hpp"

using namespace amean;

namespace {

std::string temp_path(const char* stem) {
  return std::string("nets_") + stem + ".bin";
}

}  // namespace

TEST_CASE("make_mlp wires shapes and names") {
  Mlp mlp = make_mlp("probe", {{4, 8, Activation::kRelu, 0.0},
                               {8, 3, Activation::kSoftmax, 0.0}});
  REQUIRE(mlp.layers.size() == 2);
  CHECK(mlp.in_dim() == 4);
  CHECK(mlp.out_dim() == 3);
  CHECK(mlp.layers[0].W.w.rows == 4);
  CHECK(mlp.layers[0].W.w.cols == 8);
  CHECK(mlp.layers[0].b.w.rows == 1);
  CHECK(mlp.layers[0].b.w.cols == 8);
  CHECK(mlp.layers[0].W.name.find("probe") != std::string::npos);
  CHECK(mlp.layers[0].W.name != mlp.layers[1].W.name);
  for (double v : mlp.layers[0].W.w.a) CHECK(v == 0.0);

  std::vector<Param*> ps;
  mlp.collect_params(ps);
  CHECK(ps.size() == 4);  // two layers, W and b each
}

TEST_CASE("glorot init stays inside its fan bound and is not degenerate") {
  Mlp mlp = make_mlp("glorot", {{30, 20, Activation::kRelu, 0.0}});
  Rng rng(5);
  glorot_init(mlp, rng);
  double r = std::sqrt(6.0 / (30 + 20));
  double spread = 0.0;
  std::set<double> distinct;
  for (double v : mlp.layers[0].W.w.a) {
    CHECK(std::abs(v) <= r);
    spread = std::max(spread, std::abs(v));
    distinct.insert(v);
  }
  CHECK(spread > 0.5 * r);          // actually uses the range
  CHECK(distinct.size() > 500);     // 600 draws, essentially all unique
  for (double v : mlp.layers[0].b.w.a) CHECK(v == 0.0);  // biases stay zero
}

TEST_CASE("graph forward and plain forward agree bitwise in eval mode") {
  Rng rng(6);
  Mlp mlp = make_mlp("agree", {{5, 7, Activation::kLeakyRelu, 0.3},
                               {7, 4, Activation::kSigmoid, 0.0},
                               {4, 3, Activation::kSoftmax, 0.0}});
  glorot_init(mlp, rng);
  Mat x = rng.gaussian_mat(6, 5);
  Graph g;
  Mat via_graph = mlp.forward(g, g.constant(x)).value();  // train=false: no dropout
  Mat plain = mlp.forward_plain(x);
  REQUIRE(plain.same_shape(via_graph));
  CHECK(plain.a == via_graph.a);
}

TEST_CASE("every activation differentiates correctly through a layer") {
  Rng rng(7);
  for (Activation act : {Activation::kLinear, Activation::kRelu,
                         Activation::kLeakyRelu, Activation::kSigmoid,
                         Activation::kSoftmax}) {
    Mlp mlp = make_mlp("fd", {{4, 3, act, 0.0}});
    glorot_init(mlp, rng);
    Mat x = rng.gaussian_mat(5, 4);
    Mat w = rng.gaussian_mat(5, 3);
    auto build = [&]() {
      Graph g;
      Tensor out = mlp.forward(g, g.constant(x));
      Tensor loss = sum(mul(out, g.constant(w)));
      g.backward(loss);
      return fdcheck::BuildOut{loss.scalar(),
                               {g.grad_of(mlp.layers[0].W), g.grad_of(mlp.layers[0].b)}};
    };
    fdcheck::FdReport rep =
        fdcheck::fd_check({&mlp.layers[0].W.w, &mlp.layers[0].b.w}, build, rng);
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_CASE("dropout fires only in training mode and scales survivors") {
  Rng rng(8);
  Mlp mlp = make_mlp("drop", {{4, 50, Activation::kLinear, 0.5}});
  glorot_init(mlp, rng);
  Mat x = rng.gaussian_mat(3, 4);

  Graph ge;
  Mat eval_out = mlp.forward(ge, ge.constant(x), Fwd{}).value();
  CHECK(eval_out.a == mlp.forward_plain(x).a);

  Rng drop_rng(99);
  Graph gt;
  Mat train_out = mlp.forward(gt, gt.constant(x), Fwd{true, false, &drop_rng}).value();
  Mat plain = mlp.forward_plain(x);
  int zeroed = 0, scaled = 0;
  for (size_t i = 0; i < train_out.size(); ++i) {
    if (train_out.a[i] == 0.0) {
      ++zeroed;
    } else {
      // Inverted dropout: survivors are divided by the keep probability.
      CHECK(train_out.a[i] == doctest::Approx(plain.a[i] / 0.5).epsilon(1e-12));
      ++scaled;
    }
  }
  CHECK(zeroed > 20);  // 150 entries at p=0.5: both counts far from zero
  CHECK(scaled > 20);
}

TEST_CASE("frozen forwards contribute value but zero gradient") {
  Rng rng(9);
  Mlp mlp = make_mlp("freeze", {{3, 4, Activation::kSigmoid, 0.0}});
  glorot_init(mlp, rng);
  Mat x = rng.gaussian_mat(4, 3);

  Graph g;
  Tensor out = mlp.forward(g, g.constant(x), Fwd{false, true, nullptr});
  g.backward(mean(out));
  // Frozen parameters still register (their value flows) but the gradient
  // stop keeps every accumulated entry at exactly zero.
  const Mat* gw = g.find_grad(mlp.layers[0].W);
  const Mat* gb = g.find_grad(mlp.layers[0].b);
  REQUIRE(gw != nullptr);
  REQUIRE(gb != nullptr);
  for (double v : gw->a) CHECK(v == 0.0);
  for (double v : gb->a) CHECK(v == 0.0);

  Graph g2;
  Mat frozen = mlp.forward(g2, g2.constant(x), Fwd{false, true, nullptr}).value();
  CHECK(frozen.a == mlp.forward_plain(x).a);
}

TEST_CASE("build_bundle shapes the five networks consistently") {
  ModelBundle b = build_bundle(6, 4, 3, 16, Mode::kJoint, 42, 50);
  CHECK(b.d == 6);
  CHECK(b.m == 4);
  CHECK(b.k == 3);
  CHECK(b.h == 16);
  CHECK(b.trunk == 50);
  CHECK(b.f.in_dim() == 6);
  CHECK(b.f.out_dim() == 16);
  CHECK(b.c.in_dim() == 16);
  CHECK(b.c.out_dim() == 4);
  CHECK(b.d_trunk.in_dim() == 16);
  CHECK(b.d_trunk.out_dim() == 50);
  CHECK(b.d_st.W.w.rows == 50);
  CHECK(b.d_st.W.w.cols == 2);  // joint: two-way softmax head
  CHECK(b.d_mt.W.w.rows == 50);
  CHECK(b.d_mt.W.w.cols == 3);
  CHECK(b.meta_in_dim() == 6 + 16 + 4);
  CHECK(b.u1.in_dim() == 26);
  CHECK(b.u1.out_dim() == 3);
  CHECK(b.u2.in_dim() == 3);
  CHECK(b.u2.out_dim() == 26);
  CHECK(b.centroids.w.rows == 3);
  CHECK(b.centroids.w.cols == 3);

  ModelBundle alt = build_bundle(6, 4, 3, 16, Mode::kAlternating, 42, 50);
  CHECK(alt.d_st.W.w.cols == 1);  // alternating: sigmoid head
  CHECK(alt.d_st.act == Activation::kSigmoid);
}

TEST_CASE("build_bundle is deterministic in the seed and rejects k < 2") {
  ModelBundle a = build_bundle(4, 3, 2, 8, Mode::kJoint, 7);
  ModelBundle b = build_bundle(4, 3, 2, 8, Mode::kJoint, 7);
  ModelBundle c = build_bundle(4, 3, 2, 8, Mode::kJoint, 8);
  CHECK(a.f.layers[0].W.w.a == b.f.layers[0].W.w.a);
  CHECK(a.u2.layers[1].W.w.a == b.u2.layers[1].W.w.a);
  CHECK(a.f.layers[0].W.w.a != c.f.layers[0].W.w.a);
  CHECK_THROWS_AS(build_bundle(4, 3, 1, 8, Mode::kJoint, 7), ConfigError);
}

TEST_CASE("parameter groups partition the bundle") {
  ModelBundle b = build_bundle(5, 3, 2, 8, Mode::kJoint, 11);
  std::vector<Param*> all = b.all_params();
  std::set<Param*> seen(all.begin(), all.end());
  CHECK(seen.size() == all.size());  // no duplicates

  std::set<Param*> grouped;
  for (Param* p : b.feature_params()) grouped.insert(p);
  for (Param* p : b.classifier_params()) grouped.insert(p);
  for (Param* p : b.discriminator_params()) grouped.insert(p);
  for (Param* p : b.meta_params()) grouped.insert(p);
  CHECK(grouped == seen);  // groups cover everything exactly once

  bool centroids_in_meta = false;
  for (Param* p : b.meta_params()) centroids_in_meta |= (p == &b.centroids);
  CHECK(centroids_in_meta);
}

TEST_CASE("reinit_meta resets the autoencoder but not the task networks") {
  ModelBundle b = build_bundle(5, 3, 2, 8, Mode::kJoint, 11);
  Mat f_before = b.f.layers[0].W.w;
  Mat u1_before = b.u1.layers[0].W.w;
  b.centroids.w = Mat::full(2, 2, 3.5);
  Rng rng(77);
  reinit_meta(b, rng);
  CHECK(b.f.layers[0].W.w.a == f_before.a);
  CHECK(b.u1.layers[0].W.w.a != u1_before.a);
  for (double v : b.centroids.w.a) CHECK(v == 0.0);
}

TEST_CASE("forward_meta concatenates input, features, and class probabilities") {
  ModelBundle b = build_bundle(4, 3, 2, 6, Mode::kJoint, 21);
  Rng rng(1);
  Mat x = rng.gaussian_mat(5, 4);
  Mat mi = meta_input(x, b.f, b.c);
  REQUIRE(mi.rows == 5);
  REQUIRE(mi.cols == b.meta_in_dim());
  Mat feat = b.f.forward_plain(x);
  Mat probs = b.c.forward_plain(feat);
  for (int r = 0; r < 5; ++r) {
    for (int j = 0; j < 4; ++j) CHECK(mi.at(r, j) == x.at(r, j));
    for (int j = 0; j < 6; ++j) CHECK(mi.at(r, 4 + j) == feat.at(r, j));
    for (int j = 0; j < 3; ++j) CHECK(mi.at(r, 10 + j) == probs.at(r, j));
  }

  Graph g;
  Tensor tf = b.f.forward(g, g.constant(x));
  Tensor tp = b.c.forward(g, tf);
  Tensor z = forward_meta(g, b.u1, g.constant(x), tf, tp);
  CHECK(z.value().a == b.u1.forward_plain(mi).a);
}

TEST_CASE("checkpoints round-trip every parameter bit for bit") {
  ModelBundle b = build_bundle(5, 4, 3, 8, Mode::kAlternating, 33, 20);
  b.centroids.w = Mat(3, 3, {1.5, -2, 0.25, 3, 4, -5, 6.5, 7, 8.125});
  std::string path = temp_path("roundtrip");
  save_checkpoint(b, path);
  ModelBundle r = load_checkpoint(path);
  CHECK(r.mode == b.mode);
  CHECK(r.d == b.d);
  CHECK(r.m == b.m);
  CHECK(r.k == b.k);
  CHECK(r.h == b.h);
  CHECK(r.trunk == b.trunk);
  std::vector<Param*> pb = b.all_params();
  std::vector<Param*> pr = r.all_params();
  REQUIRE(pb.size() == pr.size());
  for (size_t i = 0; i < pb.size(); ++i) {
    CHECK(pr[i]->name == pb[i]->name);
    REQUIRE(pr[i]->w.same_shape(pb[i]->w));
    CHECK(pr[i]->w.a == pb[i]->w.a);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loading rejects corrupted manifests by name") {
  ModelBundle b = build_bundle(4, 3, 2, 6, Mode::kJoint, 44);
  std::string path = temp_path("corrupt");
  save_checkpoint(b, path);

  // Bump one shape number in the first param manifest line so the declared
  // shape no longer matches the model rebuilt from the dims line.
  FILE* fp = std::fopen(path.c_str(), "rb");
  REQUIRE(fp != nullptr);
  std::fseek(fp, 0, SEEK_END);
  long n = std::ftell(fp);
  std::fseek(fp, 0, SEEK_SET);
  std::string blob(static_cast<size_t>(n), '\0');
  REQUIRE(std::fread(blob.data(), 1, blob.size(), fp) == blob.size());
  std::fclose(fp);

  size_t pos = blob.find("\nparam ");
  REQUIRE(pos != std::string::npos);
  size_t eol = blob.find('\n', pos + 1);
  REQUIRE(eol != std::string::npos);
  std::istringstream pline(blob.substr(pos + 1, eol - pos - 1));
  std::string tag, name;
  int r = 0, c = 0;
  pline >> tag >> name >> r >> c;
  REQUIRE(tag == "param");
  std::string swapped =
      tag + " " + name + " " + std::to_string(r + 1) + " " + std::to_string(c);
  blob = blob.substr(0, pos + 1) + swapped + blob.substr(eol);

  fp = std::fopen(path.c_str(), "wb");
  REQUIRE(fp != nullptr);
  std::fwrite(blob.data(), 1, blob.size(), fp);
  std::fclose(fp);

  CHECK_THROWS_WITH_AS(load_checkpoint(path),
                       doctest::Contains(name.c_str()), ParseError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("no-such-checkpoint.bin"), IoError);
}
