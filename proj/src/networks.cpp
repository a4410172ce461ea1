#include "amean/networks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace amean {

namespace {

Tensor apply_activation(Tensor z, Activation act) {
  switch (act) {
    case Activation::kLinear: return z;
    case Activation::kRelu: return relu(z);
    case Activation::kLeakyRelu: return leaky_relu(z, 0.1);
    case Activation::kSigmoid: return sigmoid(z);
    case Activation::kSoftmax: return softmax_rows(z);
  }
  throw ContractError("unknown activation");
}

void apply_activation_plain(Mat& z, Activation act) {
  switch (act) {
    case Activation::kLinear: return;
    case Activation::kRelu:
      for (auto& x : z.a) x = x > 0.0 ? x : 0.0;
      return;
    case Activation::kLeakyRelu:
      for (auto& x : z.a) x = x > 0.0 ? x : 0.1 * x;
      return;
    case Activation::kSigmoid:
      for (auto& x : z.a) {
        x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      }
      return;
    case Activation::kSoftmax:
      z = softmax_rows_plain(z);
      return;
  }
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky-relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

Activation activation_from_name(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  if (s == "leaky-relu") return Activation::kLeakyRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "softmax") return Activation::kSoftmax;
  throw ParseError("unknown activation name '" + s + "'");
}

}  // namespace

// ---- layers ----

Tensor DenseLayer::forward(Graph& g, Tensor x, const Fwd& o) const {
  if (x.cols() != W.w.rows) {
    throw DimensionError("dense layer '" + W.name + "': input has " +
                         std::to_string(x.cols()) + " features, weights expect " +
                         std::to_string(W.w.rows));
  }
  // Param registration is non-const bookkeeping on the graph only.
  Tensor w = g.param(const_cast<Param&>(W));
  Tensor bias = g.param(const_cast<Param&>(b));
  if (o.freeze) {
    w = grad_reverse(w, 0.0);
    bias = grad_reverse(bias, 0.0);
  }
  Tensor z = add_rowvec(matmul(x, w), bias);
  Tensor y = apply_activation(z, act);
  if (o.train && dropout > 0.0) {
    if (o.dropout_rng == nullptr) {
      throw ContractError("dense layer '" + W.name +
                          "': dropout requires an RNG in training mode");
    }
    const double keep = 1.0 - dropout;
    Mat mask(y.rows(), y.cols());
    for (auto& v : mask.a) v = (o.dropout_rng->uniform() < keep) ? 1.0 / keep : 0.0;
    y = mul(y, g.constant(std::move(mask)));
  }
  return y;
}

Mat DenseLayer::forward_plain(const Mat& x) const {
  if (x.cols != W.w.rows) {
    throw DimensionError("dense layer '" + W.name + "': input has " +
                         std::to_string(x.cols) + " features, weights expect " +
                         std::to_string(W.w.rows));
  }
  Mat z;
  matmul_plain(x, W.w, z);
  for (int r = 0; r < z.rows; ++r)
    for (int c = 0; c < z.cols; ++c) z.at(r, c) += b.w.at(0, c);
  apply_activation_plain(z, act);
  return z;
}

Tensor Mlp::forward(Graph& g, Tensor x, const Fwd& o) const {
  Tensor y = x;
  for (const auto& layer : layers) y = layer.forward(g, y, o);
  return y;
}

Mat Mlp::forward_plain(const Mat& x) const {
  Mat y = x;
  for (const auto& layer : layers) y = layer.forward_plain(y);
  return y;
}

void Mlp::collect_params(std::vector<Param*>& out) {
  for (auto& layer : layers) {
    out.push_back(&layer.W);
    out.push_back(&layer.b);
  }
}

Mlp make_mlp(const std::string& name, const std::vector<LayerSpec>& specs) {
  Mlp mlp;
  for (size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.in_dim < 1 || s.out_dim < 1) {
      throw ConfigError("mlp '" + name + "': layer " + std::to_string(i) +
                        " has non-positive dimensions");
    }
    if (i > 0 && specs[i - 1].out_dim != s.in_dim) {
      throw ConfigError("mlp '" + name + "': layer " + std::to_string(i) +
                        " input dim does not chain");
    }
    DenseLayer layer;
    const std::string stem = name + ".l" + std::to_string(i);
    layer.W = Param{stem + ".W", Mat::zeros(s.in_dim, s.out_dim)};
    layer.b = Param{stem + ".b", Mat::zeros(1, s.out_dim)};
    layer.act = s.act;
    layer.dropout = s.dropout;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

void glorot_init(DenseLayer& layer, Rng& rng) {
  const double fan_in = layer.W.w.rows;
  const double fan_out = layer.W.w.cols;
  const double r = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : layer.W.w.a) v = rng.uniform(-r, r);
  for (auto& v : layer.b.w.a) v = 0.0;
}

void glorot_init(Mlp& mlp, Rng& rng) {
  for (auto& layer : mlp.layers) glorot_init(layer, rng);
}

// ---- bundle ----

std::vector<Param*> ModelBundle::feature_params() {
  std::vector<Param*> out;
  f.collect_params(out);
  return out;
}

std::vector<Param*> ModelBundle::classifier_params() {
  std::vector<Param*> out;
  c.collect_params(out);
  return out;
}

std::vector<Param*> ModelBundle::discriminator_params() {
  std::vector<Param*> out;
  d_trunk.collect_params(out);
  out.push_back(&d_st.W);
  out.push_back(&d_st.b);
  out.push_back(&d_mt.W);
  out.push_back(&d_mt.b);
  return out;
}

std::vector<Param*> ModelBundle::meta_params() {
  std::vector<Param*> out;
  u1.collect_params(out);
  u2.collect_params(out);
  out.push_back(&centroids);
  return out;
}

std::vector<Param*> ModelBundle::all_params() {
  std::vector<Param*> out = feature_params();
  for (auto* p : classifier_params()) out.push_back(p);
  for (auto* p : discriminator_params()) out.push_back(p);
  for (auto* p : meta_params()) out.push_back(p);
  return out;
}

ModelBundle build_bundle(int d, int m, int k, int h, Mode mode, uint64_t seed,
                         int trunk) {
  if (d < 1) throw ConfigError("build_bundle: input dim must be >= 1");
  if (m < 2) throw ConfigError("build_bundle: class count must be >= 2");
  if (k < 2) {
    throw ConfigError("build_bundle: sub-target count must be >= 2, got " +
                      std::to_string(k));
  }
  if (h < 1 || trunk < 1) throw ConfigError("build_bundle: widths must be >= 1");

  ModelBundle bd;
  bd.mode = mode;
  bd.d = d;
  bd.m = m;
  bd.k = k;
  bd.h = h;
  bd.trunk = trunk;

  bd.f = make_mlp("f", {{d, 100, Activation::kRelu}, {100, h, Activation::kRelu}});
  bd.c = make_mlp("c", {{h, 100, Activation::kRelu}, {100, m, Activation::kSoftmax}});
  bd.d_trunk = make_mlp("d.trunk", {{h, trunk, Activation::kRelu}});
  {
    const int st_out = (mode == Mode::kJoint) ? 2 : 1;
    const Activation st_act =
        (mode == Mode::kJoint) ? Activation::kSoftmax : Activation::kSigmoid;
    bd.d_st = DenseLayer{Param{"d.st.W", Mat::zeros(trunk, st_out)},
                         Param{"d.st.b", Mat::zeros(1, st_out)}, st_act, 0.0};
    bd.d_mt = DenseLayer{Param{"d.mt.W", Mat::zeros(trunk, k)},
                         Param{"d.mt.b", Mat::zeros(1, k)}, Activation::kSoftmax, 0.0};
  }
  const int meta_in = d + h + m;
  bd.u1 = make_mlp("u1", {{meta_in, 500, Activation::kRelu},
                          {500, 1000, Activation::kRelu},
                          {1000, k, Activation::kRelu}});
  bd.u2 = make_mlp("u2", {{k, 1000, Activation::kRelu},
                          {1000, 1000, Activation::kRelu},
                          {1000, meta_in, Activation::kRelu}});
  bd.centroids = Param{"meta.centroids", Mat::zeros(k, k)};

  Rng rng = Rng::stream(seed, "init");
  glorot_init(bd.f, rng);
  glorot_init(bd.c, rng);
  glorot_init(bd.d_trunk, rng);
  glorot_init(bd.d_st, rng);
  glorot_init(bd.d_mt, rng);
  glorot_init(bd.u1, rng);
  glorot_init(bd.u2, rng);
  return bd;
}

void reinit_meta(ModelBundle& bundle, Rng& rng) {
  glorot_init(bundle.u1, rng);
  glorot_init(bundle.u2, rng);
  for (auto& v : bundle.centroids.w.a) v = 0.0;
}

Tensor forward_meta(Graph& g, const Mlp& u1, Tensor x, Tensor feat, Tensor probs,
                    const Fwd& o) {
  Tensor joined = concat_cols(concat_cols(x, feat), probs);
  if (joined.cols() != u1.in_dim()) {
    throw DimensionError("forward_meta: concatenated width " +
                         std::to_string(joined.cols()) + " does not match encoder input " +
                         std::to_string(u1.in_dim()));
  }
  return u1.forward(g, joined, o);
}

Mat meta_input(const Mat& x, const Mlp& f, const Mlp& c) {
  const Mat feat = f.forward_plain(x);
  const Mat probs = c.forward_plain(feat);
  Mat out(x.rows, x.cols + feat.cols + probs.cols);
  for (int r = 0; r < x.rows; ++r) {
    int j = 0;
    for (int ccol = 0; ccol < x.cols; ++ccol) out.at(r, j++) = x.at(r, ccol);
    for (int ccol = 0; ccol < feat.cols; ++ccol) out.at(r, j++) = feat.at(r, ccol);
    for (int ccol = 0; ccol < probs.cols; ++ccol) out.at(r, j++) = probs.at(r, ccol);
  }
  return out;
}

// ---- checkpoint io ----

namespace {

void write_le_doubles(std::ofstream& out, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  for (double x : v) {
    uint64_t bits;
    std::memcpy(&bits, &x, 8);
    unsigned char raw[8];
    for (int i = 0; i < 8; ++i) raw[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(raw), 8);
  }
}

void read_le_doubles(std::ifstream& in, std::vector<double>& v) {
  for (double& x : v) {
    unsigned char raw[8];
    in.read(reinterpret_cast<char*>(raw), 8);
    if (!in) throw ParseError("checkpoint: binary payload truncated");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(raw[i]) << (8 * i);
    std::memcpy(&x, &bits, 8);
  }
}

struct LayerDesc {
  std::string mlp;
  LayerSpec spec;
};

// Serialize each MLP's layer structure so load can rebuild without guessing.
void describe_mlp(std::ostream& os, const std::string& tag, const Mlp& mlp) {
  for (const auto& layer : mlp.layers) {
    os << "layer " << tag << ' ' << layer.W.w.rows << ' ' << layer.W.w.cols << ' '
       << activation_name(layer.act) << ' ' << fmt17(layer.dropout) << '\n';
  }
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);

  std::ostringstream head;
  head << "amean-checkpoint 1\n";
  head << "mode " << (bundle.mode == Mode::kJoint ? "joint" : "alternating") << '\n';
  head << "dims " << bundle.d << ' ' << bundle.m << ' ' << bundle.k << ' ' << bundle.h
       << ' ' << bundle.trunk << '\n';
  describe_mlp(head, "f", bundle.f);
  describe_mlp(head, "c", bundle.c);
  describe_mlp(head, "d.trunk", bundle.d_trunk);
  head << "layer d.st " << bundle.d_st.W.w.rows << ' ' << bundle.d_st.W.w.cols << ' '
       << activation_name(bundle.d_st.act) << " 0\n";
  head << "layer d.mt " << bundle.d_mt.W.w.rows << ' ' << bundle.d_mt.W.w.cols << ' '
       << activation_name(bundle.d_mt.act) << " 0\n";
  describe_mlp(head, "u1", bundle.u1);
  describe_mlp(head, "u2", bundle.u2);

  auto params = const_cast<ModelBundle&>(bundle).all_params();
  for (const Param* p : params) {
    head << "param " << p->name << ' ' << p->w.rows << ' ' << p->w.cols << '\n';
  }
  head << "end\n";
  out << head.str();
  for (const Param* p : params) write_le_doubles(out, p->w.a);
  if (!out) throw IoError("checkpoint write failed: " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  std::string line;
  if (!std::getline(in, line) || line != "amean-checkpoint 1") {
    throw ParseError("checkpoint: bad magic line in " + path);
  }
  Mode mode = Mode::kJoint;
  int d = 0, m = 0, k = 0, h = 0, trunk = 0;
  std::vector<std::pair<std::string, std::pair<int, int>>> manifest;

  while (std::getline(in, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "mode") {
      std::string v;
      ls >> v;
      if (v == "joint") {
        mode = Mode::kJoint;
      } else if (v == "alternating") {
        mode = Mode::kAlternating;
      } else {
        throw ParseError("checkpoint: unknown mode '" + v + "'");
      }
    } else if (tag == "dims") {
      ls >> d >> m >> k >> h >> trunk;
      if (!ls) throw ParseError("checkpoint: malformed dims line");
    } else if (tag == "layer") {
      // informational; the rebuild below derives layers from dims
      std::string rest;
      std::getline(ls, rest);
    } else if (tag == "param") {
      std::string name;
      int r = 0, cc = 0;
      ls >> name >> r >> cc;
      if (!ls || r < 1 || cc < 1) {
        throw ParseError("checkpoint: malformed param line '" + line + "'");
      }
      manifest.emplace_back(name, std::make_pair(r, cc));
    } else if (!tag.empty()) {
      throw ParseError("checkpoint: unknown manifest tag '" + tag + "'");
    }
  }
  if (line != "end") throw ParseError("checkpoint: manifest missing 'end'");

  ModelBundle bundle = build_bundle(d, m, k, h, mode, /*seed=*/0, trunk);
  auto params = bundle.all_params();
  if (params.size() != manifest.size()) {
    throw ParseError("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                     " tensors, model has " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, shape] = manifest[i];
    if (params[i]->name != name) {
      throw ParseError("checkpoint: tensor order mismatch at '" + name +
                       "' (expected '" + params[i]->name + "')");
    }
    if (params[i]->w.rows != shape.first || params[i]->w.cols != shape.second) {
      throw ParseError("checkpoint: shape manifest differs at layer '" + name +
                       "': file has " + std::to_string(shape.first) + "x" +
                       std::to_string(shape.second) + ", model expects " +
                       shape_str(params[i]->w));
    }
  }
  for (Param* p : params) read_le_doubles(in, p->w.a);
  return bundle;
}

}  // namespace amean
