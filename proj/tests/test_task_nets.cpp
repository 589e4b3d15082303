#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "overtrain/nets.hpp"
#include "overtrain/odortask.hpp"

using namespace overtrain;

namespace {

TaskDataset small_task(std::uint64_t seed, std::map<int, int> probes = {{1, 20}, {2, 20}, {3, 20}}) {
  Rng rng(seed);
  return gen_task(100, 10, 200, probes, rng);
}

}  // namespace

// ---------------------------------------------------------------- odortask

TEST(OdorVector, SortsAndValidates) {
  OdorVector o(10, {7, 2, 5});
  EXPECT_EQ(o.odorants(), (std::vector<int>{2, 5, 7}));
  EXPECT_EQ(o.n(), 3);
  EXPECT_THROW(OdorVector(10, {1, 1}), Error);
  EXPECT_THROW(OdorVector(10, {10}), Error);
  EXPECT_THROW(OdorVector(10, {-1}), Error);
}

TEST(OdorVector, OverlapAndHamming) {
  OdorVector a(13, {0, 1, 2}), b(13, {2, 3, 4});
  EXPECT_EQ(overlap(a, b), 1);
  EXPECT_EQ(hamming(a, b), 4);
  EXPECT_EQ(overlap(a, a), 3);
  EXPECT_EQ(hamming(a, a), 0);
  const Vector bits = a.bits();
  EXPECT_EQ(bits.sum(), 3.0);
  EXPECT_EQ(bits(2), 1.0);
}

TEST(GenTask, PaperConfiguration) {
  Rng rng(7);
  const auto ds = gen_task(100, 10, 200, {{1, 20}}, rng);
  EXPECT_EQ(ds.nontargets.size(), 200u);
  ASSERT_EQ(ds.probes.at(1).size(), 20u);
}

TEST(GenTask, OverlapInvariants) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = small_task(seed);
    std::set<OdorVector> seen{ds.target};
    for (const auto& o : ds.nontargets) {
      EXPECT_EQ(overlap(ds.target, o), 0);
      EXPECT_EQ(o.n(), 10);
      EXPECT_TRUE(seen.insert(o).second) << "duplicate nontarget";
    }
    for (const auto& [j, list] : ds.probes) {
      std::set<OdorVector> level;
      for (const auto& p : list) {
        EXPECT_EQ(overlap(ds.target, p), j);
        EXPECT_TRUE(level.insert(p).second) << "duplicate probe";
      }
    }
  }
}

TEST(GenTask, ProbeAtFullOverlapIsTarget) {
  Rng rng(3);
  const auto ds = gen_task(20, 4, 5, {{4, 1}}, rng);
  EXPECT_EQ(ds.probes.at(4).front(), ds.target);
}

TEST(GenTask, CapacityErrors) {
  Rng rng(1);
  // C(k - n, n) = C(2, 2) = 1 nontarget possible.
  EXPECT_NO_THROW(gen_task(4, 2, 1, {}, rng));
  try {
    gen_task(4, 2, 2, {}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::capacity);
  }
  // Level 1 with k=6, n=3: C(3,1) * C(3,2) = 9 distinct probes.
  EXPECT_NO_THROW(gen_task(6, 3, 1, {{1, 9}}, rng));
  EXPECT_THROW(gen_task(6, 3, 1, {{1, 10}}, rng), Error);
}

TEST(GenTask, DeterministicPerSeed) {
  EXPECT_EQ(small_task(11), small_task(11));
  EXPECT_NE(small_task(11).target, small_task(12).target);
}

TEST(GenTask, JsonRoundTrip) {
  const auto ds = small_task(5);
  const auto back = task_from_json(nlohmann::json::parse(to_json(ds).dump()));
  EXPECT_EQ(back, ds);
  auto j = to_json(ds);
  j["nontargets"][0] = j["target"];
  EXPECT_THROW(task_from_json(j), Error);
}

TEST(Embed, DimensionAndMismatch) {
  const ProjectionMap proj(50, 100, 1);
  EXPECT_EQ(proj.matrix().rows(), 50);
  OdorVector o(100, {1, 2, 3});
  EXPECT_EQ(embed(o, proj).size(), 50);
  EXPECT_THROW(embed(OdorVector(99, {1}), proj), Error);
  // Linear in the bit vector.
  const Vector e = embed(o, proj);
  const Vector manual = proj.matrix().col(1) + proj.matrix().col(2) + proj.matrix().col(3);
  EXPECT_LT((e - manual).norm(), 1e-12);
}

TEST(Embed, IsometryInExpectation) {
  // E |P(a - b)|^2 = d_embed * hamming / k for entries N(0, 1/k).
  const int k = 100, d = 50, seeds = 10000;
  OdorVector a(k, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  OdorVector b(k, {0, 11, 12, 13, 14, 15, 16, 17, 18, 19});
  const Vector diff = a.bits() - b.bits();
  double sum = 0.0;
  for (int s = 0; s < seeds; ++s) sum += embed(diff, ProjectionMap(d, k, static_cast<std::uint64_t>(s))).squaredNorm();
  const double expected = static_cast<double>(d) * hamming(a, b) / k;
  EXPECT_NEAR(sum / seeds, expected, 0.05 * expected);
}

TEST(Embed, ProbeCloserThanNontargetOnAverage) {
  double probe = 0.0, nontarget = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng rng(s);
    const auto ds = gen_task(100, 10, 5, {{1, 1}}, rng);
    const ProjectionMap proj(50, 100, s + 17);
    const Vector t = embed(ds.target, proj);
    probe += (embed(ds.probes.at(1).front(), proj) - t).squaredNorm();
    nontarget += (embed(ds.nontargets.front(), proj) - t).squaredNorm();
  }
  EXPECT_LT(probe, nontarget);
}

TEST(EmbedTask, RowLayout) {
  const auto ds = small_task(2);
  const ProjectionMap proj(50, 100, 9);
  const auto task = embed_task(ds, proj);
  EXPECT_EQ(task.train_count(), 201);
  EXPECT_EQ(task.labels(0), 1.0);
  EXPECT_EQ((task.labels.array() < 0).count(), 200);
  EXPECT_EQ(task.probe_count(), 60);
  EXPECT_LT((task.train_inputs.row(0).transpose() - embed(ds.target, proj)).norm(), 1e-15);
}

// ---------------------------------------------------------------- losses

TEST(Loss, CrossEntropyValuesAndStability) {
  EXPECT_NEAR(ce_loss(0.0, 1).loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(ce_loss(0.0, 1).grad, -0.5, 1e-15);
  EXPECT_GT(ce_loss(30.0, 1).loss, 0.0);  // never exactly zero for finite logits
  EXPECT_TRUE(std::isfinite(ce_loss(-800.0, 1).loss));
  EXPECT_NEAR(ce_loss(-800.0, 1).loss, 800.0, 1e-9);
  EXPECT_NEAR(ce_loss(800.0, 0).grad, 1.0, 1e-15);
  for (double z : {-5.0, -0.3, 0.0, 2.0, 40.0}) EXPECT_GT(ce_loss(z, 1).loss, 0.0);
}

TEST(Loss, CrossEntropyGradientMatchesDifference) {
  for (double z : {-3.0, -0.2, 0.4, 5.0})
    for (int y : {0, 1}) {
      const double h = 1e-6;
      const double fd = (ce_loss(z + h, y).loss - ce_loss(z - h, y).loss) / (2 * h);
      EXPECT_NEAR(ce_loss(z, y).grad, fd, 1e-8);
    }
}

TEST(Loss, HingeKinkAndZero) {
  EXPECT_EQ(hinge_loss(1.0, 1).loss, 0.0);
  EXPECT_EQ(hinge_loss(1.0, 1).grad, 0.0);
  EXPECT_EQ(hinge_loss(2.0, 1).loss, 0.0);
  EXPECT_EQ(hinge_loss(0.5, 1).loss, 0.5);
  EXPECT_EQ(hinge_loss(0.5, 1).grad, -1.0);
  EXPECT_EQ(hinge_loss(0.5, -1).loss, 1.5);
  EXPECT_EQ(hinge_loss(0.5, -1).grad, 1.0);
  EXPECT_EQ(hinge_loss(0.5, 1, 2.0).loss, 1.5);
}

// ---------------------------------------------------------------- MLP

TEST(Mlp, ZeroInputGivesBias) {
  Rng rng(1);
  MlpParams p = MlpParams::init(16, 5, rng);
  p.b2 = 0.7;
  const auto out = mlp_forward(p, Vector::Zero(5));
  EXPECT_EQ(out.hidden, Vector::Zero(16));
  EXPECT_EQ(out.logit, 0.7);
}

TEST(Mlp, IdentitySlicePassesNonnegativeInput) {
  MlpParams p;
  p.W1 = Matrix::Identity(3, 5);
  p.b1 = Vector::Zero(3);
  p.w2 = Vector::Ones(3);
  Vector x(5);
  x << 0.5, 2.0, 0.0, 3.0, 1.0;
  const auto out = mlp_forward(p, x);
  EXPECT_EQ(out.hidden, x.head(3));
  EXPECT_EQ(out.logit, 2.5);
  EXPECT_THROW(mlp_forward(p, Vector::Zero(4)), Error);
}

TEST(Mlp, NonFiniteActivationNamesLayer) {
  Rng rng(2);
  MlpParams p = MlpParams::init(4, 2, rng);
  p.W1(0, 0) = std::numeric_limits<double>::infinity();
  try {
    mlp_forward(p, Vector::Ones(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric_overflow);
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos);
  }
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    MlpParams p = MlpParams::init(12, 6, rng);
    p.b1 = rng.normal_vector(12, 0.1);
    p.b2 = 0.3;
    const Matrix X = rng.normal_matrix(7, 6);
    Vector y(7);
    for (int i = 0; i < 7; ++i) y(i) = i % 2 ? 1.0 : -1.0;
    for (LossKind kind : {LossKind::cross_entropy, LossKind::hinge}) {
      const LossSpec spec{kind, 1.0};
      auto loss = [&](const MlpParams& q) {
        const Vector f = mlp_forward_batch(q, X).logits;
        double l = 0;
        for (int i = 0; i < 7; ++i) l += signed_loss(spec, f(i), y(i)).loss;
        return l;
      };
      const MlpPass pass = mlp_forward_batch(p, X);
      Vector d(7);
      for (int i = 0; i < 7; ++i) d(i) = signed_loss(spec, pass.logits(i), y(i)).grad;
      const auto report = oracle::finite_difference(p, mlp_gradient(p, X, pass, d), loss);
      EXPECT_LT(report.worst_relative, 1e-4) << "seed " << seed << " at " << report.worst_name;
    }
  }
}

TEST(Mlp, HiddenNonnegative) {
  Rng rng(4);
  const MlpParams p = MlpParams::init(64, 10, rng);
  const auto pass = mlp_forward_batch(p, rng.normal_matrix(30, 10));
  EXPECT_GE(pass.hidden.minCoeff(), 0.0);
}

// ---------------------------------------------------------------- bio network

TEST(Bio, InitRequiresNarrowerLayer3) {
  Rng rng(1);
  EXPECT_THROW(BioNetParams::init(8, 8, 4, rng), Error);
  EXPECT_NO_THROW(BioNetParams::init(8, 4, 4, rng));
}

TEST(Bio, EvalModeDeterministic) {
  Rng rng(3);
  const auto p = BioNetParams::init(32, 8, 6, rng);
  const Matrix X = rng.normal_matrix(5, 6);
  const auto a = bio_forward_batch(p, X, {Mode::eval});
  const auto b = bio_forward_batch(p, X, {Mode::eval});
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_GE(a.a1.minCoeff(), 0.0);
  EXPECT_GE(a.a2.minCoeff(), 0.0);
  EXPECT_THROW(bio_forward_batch(p, X, {Mode::train}), Error);  // needs an rng
}

TEST(Bio, DropoutRates) {
  Rng rng(5);
  const Matrix m = dropout_mask(200, 500, kBioDropout1, rng);
  const double kept = static_cast<double>((m.array() > 0).count()) / static_cast<double>(m.size());
  EXPECT_NEAR(kept, 0.8, 0.01);
  EXPECT_NEAR(m.mean(), 1.0, 0.02);  // inverted dropout keeps the mean
}

TEST(Bio, GradientMatchesFiniteDifferencesEval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    BioNetParams p = BioNetParams::init(10, 4, 5, rng);
    p.b1 = rng.normal_vector(10, 0.1);
    p.a = rng.normal_vector(10, 0.1);
    p.bf = rng.normal_vector(10, 0.1);
    p.c = rng.normal_vector(4, 0.1);
    const Matrix X = rng.normal_matrix(6, 5);
    Vector y(6);
    for (int i = 0; i < 6; ++i) y(i) = i % 3 ? -1.0 : 1.0;
    auto loss = [&](const BioNetParams& q) {
      const Vector f = bio_forward_batch(q, X, {Mode::eval}).logits;
      double l = 0;
      for (int i = 0; i < 6; ++i) l += ce_loss(f(i), y(i) > 0).loss;
      return l;
    };
    const auto pass = bio_forward_batch(p, X, {Mode::eval});
    Vector d(6);
    for (int i = 0; i < 6; ++i) d(i) = ce_loss(pass.logits(i), y(i) > 0).grad;
    const auto report = oracle::finite_difference(p, bio_gradient(p, X, pass, d), loss);
    EXPECT_LT(report.worst_relative, 1e-4) << "seed " << seed << " at " << report.worst_name;
  }
}

TEST(Bio, GradientMatchesFiniteDifferencesTrainMode) {
  // Fixed masks and noise: re-seed the stream for every forward pass.
  Rng rng(9);
  BioNetParams p = BioNetParams::init(12, 5, 4, rng);
  const Matrix X = rng.normal_matrix(5, 4);
  const Vector y = (Vector(5) << 1, -1, -1, 1, -1).finished();
  auto forward = [&](const BioNetParams& q) {
    Rng r(123);
    return bio_forward_batch(q, X, {Mode::train}, &r);
  };
  auto loss = [&](const BioNetParams& q) {
    const Vector f = forward(q).logits;
    double l = 0;
    for (int i = 0; i < 5; ++i) l += ce_loss(f(i), y(i) > 0).loss;
    return l;
  };
  const auto pass = forward(p);
  Vector d(5);
  for (int i = 0; i < 5; ++i) d(i) = ce_loss(pass.logits(i), y(i) > 0).grad;
  const auto report = oracle::finite_difference(p, bio_gradient(p, X, pass, d), loss);
  EXPECT_LT(report.worst_relative, 1e-4) << report.worst_name;
}

// ---------------------------------------------------------------- linear network

TEST(Linear2, DoublingGammaHalvesOutput) {
  Rng rng(1);
  Linear2Params p = Linear2Params::init(100, 4, 1.0, rng);
  const Vector x = Vector::Unit(4, 2);
  const double f1 = linear2_forward(p, x, Phase::original);
  p.gamma0 = 2.0;
  EXPECT_NEAR(linear2_forward(p, x, Phase::original), f1 / 2.0, 1e-15);
}

TEST(Linear2, KernelSymmetricPsd) {
  Rng rng(2);
  const Linear2Params p = Linear2Params::init(300, 6, 1.0, rng);
  const Matrix X = rng.normal_matrix(8, 6);
  const Matrix K = hidden_kernel(p, X);
  EXPECT_LT((K - K.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  Eigen::SelfAdjointEigenSolver<Matrix> es(K);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
  // Direct definition.
  const Vector h0 = p.W1 * X.row(0).transpose(), h3 = p.W1 * X.row(3).transpose();
  EXPECT_NEAR(K(0, 3), h0.dot(h3) / 300.0, 1e-10);
}

TEST(Linear2, InitialAlignmentNearOne) {
  // Whitened inputs: K = W1 W1' / N restricted to 4 directions -> identity.
  double total = 0;
  const int reps = 20;
  for (int s = 0; s < reps; ++s) {
    Rng rng(static_cast<std::uint64_t>(s));
    const Linear2Params p = Linear2Params::init(2000, 4, 1.0, rng);
    const Vector y = (Vector(4) << 1, 1, -1, -1).finished();
    const double Ky = label_alignment(hidden_kernel(p, Matrix::Identity(4, 4)), y);
    EXPECT_NEAR(Ky, 1.0, 0.1);
    total += Ky;
  }
  EXPECT_NEAR(total / reps, 1.0, 0.03);
}

TEST(Linear2, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (Phase phase : {Phase::original, Phase::reversal}) {
    const Linear2Params p = Linear2Params::init(40, 4, 1.5, rng);
    const Matrix X = rng.normal_matrix(4, 4);
    const Vector t = rng.normal_vector(4);
    // gamma0 is held fixed: both sides see a zero derivative for it.
    auto loss = [&](const Linear2Params& r) {
      Linear2Params fixed = r;
      fixed.gamma0 = p.gamma0;
      return linear2_loss(fixed, X, t, phase);
    };
    const auto report = oracle::finite_difference(p, linear2_gradient(p, X, t, phase), loss);
    EXPECT_LT(report.worst_relative, 1e-4) << report.worst_name;
  }
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripExact) {
  Rng rng(8);
  const MlpParams p = MlpParams::init(7, 3, rng);
  MlpParams q = MlpParams::init(7, 3, rng);
  load_checkpoint(nlohmann::json::parse(save_checkpoint(p).dump()), q);
  EXPECT_TRUE(p == q);
  MlpParams wrong = MlpParams::init(6, 3, rng);
  EXPECT_THROW(load_checkpoint(save_checkpoint(p), wrong), Error);
}

TEST(Checkpoint, TensorLayoutRowMajor) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const auto j = tensor_to_json(m);
  EXPECT_EQ(j["shape"], nlohmann::json({2, 3}));
  EXPECT_EQ(j["data"], nlohmann::json({1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
  EXPECT_EQ(tensor_from_json(j), m);
}
