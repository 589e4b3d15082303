#pragma once

// Network models with hand-written forward and backward passes:
//   * one-hidden-layer rectifier MLP,
//   * a piriform-inspired three-layer network with a feedback branch,
//   * a two-layer linear network in mean-field parameterization,
// plus the cross-entropy and hinge losses and a JSON checkpoint format.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "overtrain/core.hpp"

namespace overtrain {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossValue {
  double loss;
  double grad;  // d loss / d output
};

enum class LossKind { cross_entropy, hinge };

struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
  double C = 1.0;  // hinge margin
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

/// Binary cross-entropy of a single logit against y in {0, 1}.
inline LossValue ce_loss(double logit, int label) {
  const double y = label == 1 ? 1.0 : 0.0;
  // -(y ln s(z) + (1-y) ln(1-s(z))): softplus(-z) for y=1, softplus(z) for y=0
  return {label == 1 ? softplus(-logit) : softplus(logit), sigmoid(logit) - y};
}

/// max(0, C - y f) with subgradient 0 at the kink.
inline LossValue hinge_loss(double f, int label, double C = 1.0) {
  require(C > 0, ErrorKind::invalid_parameter, "hinge margin C must be positive");
  const double y = label > 0 ? 1.0 : -1.0;
  const double slack = C - y * f;
  if (slack > 0) return {slack, -y};
  return {0.0, 0.0};
}

/// Loss for a signed label (+1 target, -1 nontarget). Cross-entropy maps the
/// sign onto {0, 1}.
inline LossValue signed_loss(const LossSpec& spec, double output, double signed_label) {
  if (spec.kind == LossKind::cross_entropy) return ce_loss(output, signed_label > 0 ? 1 : 0);
  return hinge_loss(output, signed_label > 0 ? 1 : -1, spec.C);
}

/// Classification threshold: logit > 0 (equivalently sigmoid > 0.5).
inline bool predicts_target(double output) { return output > 0.0; }

// ---------------------------------------------------------------------------
// Tensor helpers
// ---------------------------------------------------------------------------

using TensorVisitor = std::function<void(const std::string& name, Eigen::Ref<Matrix>)>;
using ConstTensorVisitor = std::function<void(const std::string& name, const Matrix&)>;

inline Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }
inline Matrix relu_mask(const Matrix& z) { return (z.array() > 0.0).cast<double>().matrix(); }

inline constexpr double kLeakySlope = 0.01;

inline Matrix leaky_relu(const Matrix& z) {
  return z.unaryExpr([](double v) { return v > 0 ? v : kLeakySlope * v; });
}
inline Matrix leaky_relu_slope(const Matrix& z) {
  return z.unaryExpr([](double v) { return v > 0 ? 1.0 : kLeakySlope; });
}

inline void check_finite(const Matrix& m, const std::string& layer) {
  if (!m.allFinite())
    throw Error(ErrorKind::numeric_overflow, "non-finite activation in layer " + layer);
}

// Row-broadcast affine map: rows of X are examples.
inline Matrix affine(const Matrix& X, const Matrix& W, const Vector& b) {
  Matrix Z = X * W.transpose();
  Z.rowwise() += b.transpose();
  return Z;
}

// Wraps a scalar parameter so it can be visited as a 1x1 tensor.
struct Scalar1 {
  Matrix m = Matrix::Zero(1, 1);
  double& value() { return m(0, 0); }
  double value() const { return m(0, 0); }
};

// ---------------------------------------------------------------------------
// One-hidden-layer MLP
// ---------------------------------------------------------------------------

struct MlpParams {
  Matrix W1;  // h x d
  Vector b1;  // h
  Vector w2;  // h
  double b2 = 0.0;

  int hidden() const { return static_cast<int>(W1.rows()); }
  int input_dim() const { return static_cast<int>(W1.cols()); }

  /// Gaussian(0, scale^2 / fan_in) weights, zero biases.
  static MlpParams init(int h, int d, Rng& rng, double scale = 1.0) {
    require(h >= 1 && d >= 1, ErrorKind::invalid_parameter, "MLP widths must be positive");
    MlpParams p;
    p.W1 = rng.normal_matrix(h, d, scale / std::sqrt(static_cast<double>(d)));
    p.b1 = Vector::Zero(h);
    p.w2 = rng.normal_vector(h, scale / std::sqrt(static_cast<double>(h)));
    p.b2 = 0.0;
    return p;
  }

  static MlpParams zeros_like(const MlpParams& o) {
    return {Matrix::Zero(o.W1.rows(), o.W1.cols()), Vector::Zero(o.b1.size()),
            Vector::Zero(o.w2.size()), 0.0};
  }

  void for_each(const TensorVisitor& f) {
    f("W1", W1);
    f("b1", b1);
    f("w2", w2);
    Eigen::Map<Matrix> b(&b2, 1, 1);
    f("b2", b);
  }

  void axpy(double alpha, const MlpParams& g) {
    W1 += alpha * g.W1;
    b1 += alpha * g.b1;
    w2 += alpha * g.w2;
    b2 += alpha * g.b2;
  }

  bool finite() const { return W1.allFinite() && b1.allFinite() && w2.allFinite() && std::isfinite(b2); }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    return a.W1 == b.W1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
  }
};

struct MlpPass {
  Matrix pre;     // examples x h
  Matrix hidden;  // examples x h, rectified
  Vector logits;  // examples
};

inline MlpPass mlp_forward_batch(const MlpParams& p, const Matrix& X) {
  require(X.cols() == p.input_dim(), ErrorKind::invalid_parameter,
          "MLP input has " + std::to_string(X.cols()) + " columns, expected " +
              std::to_string(p.input_dim()));
  MlpPass pass;
  pass.pre = affine(X, p.W1, p.b1);
  pass.hidden = relu(pass.pre);
  check_finite(pass.hidden, "hidden");
  pass.logits = (pass.hidden * p.w2).array() + p.b2;
  check_finite(pass.logits, "output");
  return pass;
}

struct MlpOutput {
  Vector hidden;
  double logit;
};

inline MlpOutput mlp_forward(const MlpParams& p, const Vector& x) {
  MlpPass pass = mlp_forward_batch(p, x.transpose());
  return {pass.hidden.row(0).transpose(), pass.logits(0)};
}

/// Sum over examples of dlogits(i) * d logit_i / d theta.
inline MlpParams mlp_gradient(const MlpParams& p, const Matrix& X, const MlpPass& pass,
                              const Vector& dlogits) {
  MlpParams g;
  g.w2 = pass.hidden.transpose() * dlogits;
  g.b2 = dlogits.sum();
  Matrix dpre = (dlogits * p.w2.transpose()).cwiseProduct(relu_mask(pass.pre));
  g.W1 = dpre.transpose() * X;
  g.b1 = dpre.colwise().sum().transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Piriform-inspired network
// ---------------------------------------------------------------------------
//
//   a1 = drop_0.2(relu(W1 x + b1))                        input layer, h1 wide
//   a2 = relu(A a1 + a) + relu(B a1 + bf)                 associative layer with
//                                                         feedback branch (skip sum)
//   a3 = drop_0.3(leaky(C a2 + c))                        modulatory layer, h3 < h1
//   out = r . a3 + r0
//
// In train mode Gaussian noise of std `noise_std` is added to every
// pre-activation and inverted dropout is applied.

inline constexpr double kBioDropout1 = 0.2;
inline constexpr double kBioDropout3 = 0.3;

struct BioNetParams {
  Matrix W1;  // h1 x d
  Vector b1;
  Matrix A;  // h1 x h1, main path
  Vector a;
  Matrix B;  // h1 x h1, feedback path
  Vector bf;
  Matrix C;  // h3 x h1
  Vector c;
  Vector r;  // h3
  double r0 = 0.0;
  double noise_std = 0.1;

  int h1() const { return static_cast<int>(W1.rows()); }
  int h3() const { return static_cast<int>(C.rows()); }
  int input_dim() const { return static_cast<int>(W1.cols()); }

  static BioNetParams init(int h1, int h3, int d, Rng& rng, double scale = 1.0,
                           double noise_std = 0.1) {
    require(h1 >= 1 && h3 >= 1 && d >= 1, ErrorKind::invalid_parameter,
            "bio network widths must be positive");
    require(h3 < h1, ErrorKind::invalid_parameter, "bio network requires h3 < h1");
    require(noise_std >= 0, ErrorKind::invalid_parameter, "forward noise std must be >= 0");
    auto sd = [&](int fan_in) { return scale / std::sqrt(static_cast<double>(fan_in)); };
    BioNetParams p;
    p.W1 = rng.normal_matrix(h1, d, sd(d));
    p.b1 = Vector::Zero(h1);
    p.A = rng.normal_matrix(h1, h1, sd(h1));
    p.a = Vector::Zero(h1);
    p.B = rng.normal_matrix(h1, h1, sd(h1));
    p.bf = Vector::Zero(h1);
    p.C = rng.normal_matrix(h3, h1, sd(h1));
    p.c = Vector::Zero(h3);
    p.r = rng.normal_vector(h3, sd(h3));
    p.r0 = 0.0;
    p.noise_std = noise_std;
    return p;
  }

  static BioNetParams zeros_like(const BioNetParams& o) {
    BioNetParams z = o;
    z.for_each([](const std::string&, Eigen::Ref<Matrix> t) { t.setZero(); });
    return z;
  }

  void for_each(const TensorVisitor& f) {
    f("W1", W1);
    f("b1", b1);
    f("A", A);
    f("a", a);
    f("B", B);
    f("bf", bf);
    f("C", C);
    f("c", c);
    f("r", r);
    Eigen::Map<Matrix> bias(&r0, 1, 1);
    f("r0", bias);
  }

  void axpy(double alpha, const BioNetParams& g) {
    W1 += alpha * g.W1;
    b1 += alpha * g.b1;
    A += alpha * g.A;
    a += alpha * g.a;
    B += alpha * g.B;
    bf += alpha * g.bf;
    C += alpha * g.C;
    c += alpha * g.c;
    r += alpha * g.r;
    r0 += alpha * g.r0;
  }

  bool finite() const {
    return W1.allFinite() && b1.allFinite() && A.allFinite() && a.allFinite() && B.allFinite() &&
           bf.allFinite() && C.allFinite() && c.allFinite() && r.allFinite() && std::isfinite(r0);
  }

  friend bool operator==(const BioNetParams& x, const BioNetParams& y) {
    return x.W1 == y.W1 && x.b1 == y.b1 && x.A == y.A && x.a == y.a && x.B == y.B &&
           x.bf == y.bf && x.C == y.C && x.c == y.c && x.r == y.r && x.r0 == y.r0 &&
           x.noise_std == y.noise_std;
  }
};

struct BioPass {
  Matrix z1, mask1, a1;
  Matrix zm, zf, a2;
  Matrix z3, mask3, a3;
  Vector logits;
};

struct BioOptions {
  Mode mode = Mode::eval;
  // Train mode without dropout (all units kept); noise still applies.
  bool keep_all = false;
};

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix m(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.bernoulli(1.0 - p) ? keep_scale : 0.0;
  return m;
}

inline BioPass bio_forward_batch(const BioNetParams& p, const Matrix& X, BioOptions opts,
                                 Rng* rng = nullptr) {
  require(X.cols() == p.input_dim(), ErrorKind::invalid_parameter,
          "bio network input has " + std::to_string(X.cols()) + " columns, expected " +
              std::to_string(p.input_dim()));
  const bool train = opts.mode == Mode::train;
  require(!train || rng != nullptr, ErrorKind::invalid_parameter,
          "train-mode forward pass requires an rng");
  const Eigen::Index n = X.rows();
  auto noisy = [&](Matrix z) {
    if (train && p.noise_std > 0) z += rng->normal_matrix(z.rows(), z.cols(), p.noise_std);
    return z;
  };
  auto mask = [&](Eigen::Index cols, double rate) {
    if (!train || opts.keep_all) return Matrix(Matrix::Ones(n, cols));
    return dropout_mask(n, cols, rate, *rng);
  };

  BioPass s;
  s.z1 = noisy(affine(X, p.W1, p.b1));
  s.mask1 = mask(p.h1(), kBioDropout1);
  s.a1 = relu(s.z1).cwiseProduct(s.mask1);
  check_finite(s.a1, "layer1");

  s.zm = noisy(affine(s.a1, p.A, p.a));
  s.zf = noisy(affine(s.a1, p.B, p.bf));
  s.a2 = relu(s.zm) + relu(s.zf);
  check_finite(s.a2, "layer2");

  s.z3 = noisy(affine(s.a2, p.C, p.c));
  s.mask3 = mask(p.h3(), kBioDropout3);
  s.a3 = leaky_relu(s.z3).cwiseProduct(s.mask3);
  check_finite(s.a3, "layer3");

  s.logits = (s.a3 * p.r).array() + p.r0;
  check_finite(s.logits, "output");
  return s;
}

inline BioNetParams bio_gradient(const BioNetParams& p, const Matrix& X, const BioPass& s,
                                 const Vector& dlogits) {
  BioNetParams g = BioNetParams::zeros_like(p);
  g.r = s.a3.transpose() * dlogits;
  g.r0 = dlogits.sum();
  Matrix dz3 = (dlogits * p.r.transpose()).cwiseProduct(s.mask3).cwiseProduct(leaky_relu_slope(s.z3));
  g.C = dz3.transpose() * s.a2;
  g.c = dz3.colwise().sum().transpose();
  Matrix da2 = dz3 * p.C;
  Matrix dzm = da2.cwiseProduct(relu_mask(s.zm));
  Matrix dzf = da2.cwiseProduct(relu_mask(s.zf));
  g.A = dzm.transpose() * s.a1;
  g.a = dzm.colwise().sum().transpose();
  g.B = dzf.transpose() * s.a1;
  g.bf = dzf.colwise().sum().transpose();
  Matrix dz1 = (dzm * p.A + dzf * p.B).cwiseProduct(s.mask1).cwiseProduct(relu_mask(s.z1));
  g.W1 = dz1.transpose() * X;
  g.b1 = dz1.colwise().sum().transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Two-layer linear network, f(x) = readout . (W1 x) / (N gamma0)
// ---------------------------------------------------------------------------

enum class Phase { original, reversal };

struct Linear2Params {
  Matrix W1;  // N x d
  Vector w2;  // N, original readout
  Vector v;   // N, reversal readout
  double gamma0 = 1.0;

  int width() const { return static_cast<int>(W1.rows()); }
  int input_dim() const { return static_cast<int>(W1.cols()); }

  /// Standard normal W1, w2, v (mean-field parameterization keeps the
  /// 1/(N gamma0) factor in the readout).
  static Linear2Params init(int N, int d, double gamma0, Rng& rng) {
    require(N >= 1 && d >= 1, ErrorKind::invalid_parameter, "linear network widths must be positive");
    require(gamma0 > 0, ErrorKind::invalid_parameter, "gamma0 must be positive");
    Linear2Params p;
    p.W1 = rng.normal_matrix(N, d);
    p.w2 = rng.normal_vector(N);
    p.v = rng.normal_vector(N);
    p.gamma0 = gamma0;
    return p;
  }

  const Vector& readout(Phase phase) const { return phase == Phase::original ? w2 : v; }

  void for_each(const TensorVisitor& f) {
    f("W1", W1);
    f("w2", w2);
    f("v", v);
    Eigen::Map<Matrix> g(&gamma0, 1, 1);
    f("gamma0", g);
  }
};

inline double linear2_forward(const Linear2Params& p, const Vector& x, Phase phase) {
  require(x.size() == p.input_dim(), ErrorKind::invalid_parameter, "linear network input dimension mismatch");
  return p.readout(phase).dot(p.W1 * x) / (p.width() * p.gamma0);
}

/// Outputs for every row of X.
inline Vector linear2_outputs(const Linear2Params& p, const Matrix& X, Phase phase) {
  return (X * p.W1.transpose()) * p.readout(phase) / (p.width() * p.gamma0);
}

/// Hidden representations, rows of X mapped to rows of h = W1 x.
inline Matrix linear2_hidden(const Linear2Params& p, const Matrix& X) {
  return X * p.W1.transpose();
}

/// K[i,j] = h(x_i) . h(x_j) / N.
inline Matrix hidden_kernel(const Linear2Params& p, const Matrix& X) {
  const Matrix H = linear2_hidden(p, X);
  Matrix K = H * H.transpose() / static_cast<double>(p.width());
  return (K + K.transpose()) / 2.0;
}

/// Gradient of L = 1/2 |target - f|^2 over the rows of X for the readout of
/// `phase` and W1; the other readout and gamma0 get zero.
inline Linear2Params linear2_gradient(const Linear2Params& p, const Matrix& X, const Vector& target, Phase phase) {
  const double scale = static_cast<double>(p.width()) * p.gamma0;
  const Matrix H = linear2_hidden(p, X);
  const Vector& a = p.readout(phase);
  const Vector resid = target - H * a / scale;
  Linear2Params g;
  g.gamma0 = 0.0;
  g.W1 = -a * (resid.transpose() * X) / scale;
  g.w2 = Vector::Zero(p.width());
  g.v = Vector::Zero(p.width());
  (phase == Phase::original ? g.w2 : g.v) = -H.transpose() * resid / scale;
  return g;
}

inline double linear2_loss(const Linear2Params& p, const Matrix& X, const Vector& target, Phase phase) {
  return 0.5 * (target - linear2_outputs(p, X, phase)).squaredNorm();
}

/// Label projection y^T K y / |y|^2.
inline double label_alignment(const Matrix& K, const Vector& y) {
  return y.dot(K * y) / y.squaredNorm();
}

// ---------------------------------------------------------------------------
// Checkpoints: {"<name>": {"shape": [rows, cols], "data": [row-major values]}}
// ---------------------------------------------------------------------------

inline nlohmann::json tensor_to_json(const Matrix& m) {
  nlohmann::json t;
  t["shape"] = {m.rows(), m.cols()};
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  t["data"] = std::move(data);
  return t;
}

inline Matrix tensor_from_json(const nlohmann::json& t) {
  const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
  require(shape.size() == 2, ErrorKind::parse, "tensor shape must have two entries");
  const auto data = t.at("data").get<std::vector<double>>();
  require(static_cast<Eigen::Index>(data.size()) == shape[0] * shape[1], ErrorKind::parse,
          "tensor data length does not match its shape");
  Matrix m(shape[0], shape[1]);
  for (Eigen::Index i = 0; i < shape[0]; ++i)
    for (Eigen::Index j = 0; j < shape[1]; ++j) m(i, j) = data[static_cast<std::size_t>(i * shape[1] + j)];
  return m;
}

template <typename Params>
nlohmann::json save_checkpoint(Params params) {
  nlohmann::json j = nlohmann::json::object();
  params.for_each([&](const std::string& name, Eigen::Ref<Matrix> t) { j[name] = tensor_to_json(t); });
  return j;
}

/// Loads into `params`, whose tensors must already have the stored shapes.
template <typename Params>
void load_checkpoint(const nlohmann::json& j, Params& params) {
  try {
    params.for_each([&](const std::string& name, Eigen::Ref<Matrix> t) {
      require(j.contains(name), ErrorKind::parse, "checkpoint is missing tensor " + name);
      Matrix m = tensor_from_json(j.at(name));
      require(m.rows() == t.rows() && m.cols() == t.cols(), ErrorKind::parse,
              "checkpoint tensor " + name + " has the wrong shape");
      t = m;
    });
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("checkpoint JSON: ") + e.what());
  }
}

/// Named arrays without a parameter struct (used for snapshots).
inline nlohmann::json named_arrays_to_json(const std::vector<std::pair<std::string, Matrix>>& arrays) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, m] : arrays) j[name] = tensor_to_json(m);
  return j;
}

}  // namespace overtrain
