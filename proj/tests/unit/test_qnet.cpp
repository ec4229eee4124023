#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "morphdose/error.hpp"
#include "morphdose/qnet.hpp"

using namespace morphdose;

namespace {

Eigen::VectorXd random_state(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::VectorXd::NullaryExpr(dim, [&] { return n(rng); });
}

}  // namespace

TEST(QNet, DefaultShapeAndParameterCount) {
  const auto p = QParams::initialize(QNetShape{}, 1);
  // 19*64+64 + 64*64+64 + 64*32+32 + 32+1 + 64*32+32 + 32*14+14
  EXPECT_EQ(p.weights.parameter_count(), 1280u + 4160u + 2080u + 33u + 2080u + 462u);
  EXPECT_EQ(p.weights[kTrunk1].weight.rows(), 64);
  EXPECT_EQ(p.weights[kTrunk1].weight.cols(), 19);
  EXPECT_EQ(p.weights[kAdvantageOut].weight.rows(), 14);
  EXPECT_EQ(p.weights[kValueOut].weight.rows(), 1);
}

TEST(QNet, InitializationBoundedAndSeeded) {
  const auto a = QParams::initialize(QNetShape{}, 5);
  const auto b = QParams::initialize(QNetShape{}, 5);
  const auto c = QParams::initialize(QNetShape{}, 6);
  EXPECT_TRUE(bitwise_equal(a.weights, b.weights));
  EXPECT_FALSE(bitwise_equal(a.weights, c.weights));
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(a.weights[l].weight.cols()));
    EXPECT_LE(a.weights[l].weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(a.weights[l].bias.cwiseAbs().maxCoeff(), bound);
  }
}

TEST(QNet, ZeroNetworkGivesZeroQ) {
  const auto p = QParams::zeros(QNetShape{});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto q = q_values(p, random_state(rng, 19));
    ASSERT_EQ(q.size(), 14);
    EXPECT_EQ(q.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(QNet, WrongInputDimensionRejected) {
  const auto p = QParams::zeros(QNetShape{});
  try {
    (void)q_values(p, Eigen::VectorXd::Zero(18));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
  }
}

TEST(QNet, AdvantageBiasShiftLeavesQUnchanged) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = QParams::initialize(QNetShape{}, 100 + static_cast<std::uint64_t>(trial));
    Eigen::MatrixXd states(19, 5);
    for (int j = 0; j < 5; ++j) states.col(j) = random_state(rng, 19);
    const Eigen::MatrixXd before = forward(p, states).q;
    p.weights[kAdvantageOut].bias.array() += 3.7 * (trial + 1);
    const Eigen::MatrixXd after = forward(p, states).q;
    EXPECT_LE((after - before).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(QNet, MeanAdvantageIdentity) {
  // mean_k Q(s,k) = V(s) exactly, whatever the advantage stream outputs.
  std::mt19937_64 rng(5);
  const auto p = QParams::initialize(QNetShape{}, 9);
  Eigen::MatrixXd states(19, 8);
  for (int j = 0; j < 8; ++j) states.col(j) = random_state(rng, 19);
  const auto out = forward(p, states);
  for (int j = 0; j < 8; ++j) {
    EXPECT_NEAR(out.q.col(j).mean(), out.value(j), 1e-12);
    const Eigen::VectorXd centered = out.advantage.col(j).array() - out.advantage.col(j).mean();
    EXPECT_LE((out.q.col(j).array() - out.value(j) - centered.array()).abs().maxCoeff(), 1e-12);
  }
}

TEST(QNet, BatchedForwardMatchesColumnwise) {
  std::mt19937_64 rng(6);
  const auto p = QParams::initialize(QNetShape{}, 10);
  Eigen::MatrixXd states(19, 4);
  for (int j = 0; j < 4; ++j) states.col(j) = random_state(rng, 19);
  const auto batch = forward(p, states);
  for (int j = 0; j < 4; ++j) EXPECT_LE((batch.q.col(j) - q_values(p, states.col(j))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QNet, TinyHandComputedNetwork) {
  // 2 inputs, 2 hidden, 2 stream units, 2 actions; identity-like weights.
  QNetShape shape{2, 2, 2, 2, 0.01};
  auto p = QParams::zeros(shape);
  p.weights[kTrunk1].weight << 1, 0, 0, 1;
  p.weights[kTrunk2].weight << 1, 0, 0, 1;
  p.weights[kValueHidden].weight << 1, 1, 0, 0;
  p.weights[kValueOut].weight << 2, 0;
  p.weights[kValueOut].bias << 0.5;
  p.weights[kAdvantageHidden].weight << 1, 0, 0, 1;
  p.weights[kAdvantageOut].weight << 1, 0, 0, -1;
  p.weights[kAdvantageOut].bias << 0.1, 0.2;

  Eigen::VectorXd x(2);
  x << 1.0, -2.0;
  // h1 = (1, -0.02), h2 = (1, -0.0002); value hidden = 0.9998; V = 2*0.9998 + 0.5 = 2.4996
  // advantage hidden = (1, -0.000002); A = (1.1, 0.200002); mean A = 0.650001
  const auto out = forward(p, x);
  EXPECT_NEAR(out.value(0), 2.4996, 1e-14);
  EXPECT_NEAR(out.advantage(0, 0), 1.1, 1e-14);
  EXPECT_NEAR(out.advantage(1, 0), 0.200002, 1e-14);
  EXPECT_NEAR(out.q(0, 0), 2.4996 + 1.1 - 0.650001, 1e-14);
  EXPECT_NEAR(out.q(1, 0), 2.4996 + 0.200002 - 0.650001, 1e-14);
}

TEST(QNet, TdLossSquaredAndHuber) {
  EXPECT_DOUBLE_EQ(td_loss(0.5, 1.0, LossKind::Squared), 0.125);
  EXPECT_DOUBLE_EQ(td_loss(3.0, 1.0, LossKind::Squared), 4.5);
  EXPECT_DOUBLE_EQ(td_loss(0.5, 1.0, LossKind::Huber), 0.125);
  EXPECT_DOUBLE_EQ(td_loss(3.0, 1.0, LossKind::Huber), 2.5);
  EXPECT_DOUBLE_EQ(td_loss(-3.0, 0.5, LossKind::Huber), 1.25);
  EXPECT_DOUBLE_EQ(td_loss(1.0, 1.0, LossKind::Huber), 0.5);
}

TEST(QNetGradient, MatchesFiniteDifferencesSquared) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = gradcheck::random_case(seed, 5, LossKind::Squared);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_LT(r.max_abs_error_small, 1e-9) << "seed " << seed;
  }
}

TEST(QNetGradient, MatchesFiniteDifferencesHuber) {
  for (std::uint64_t seed = 21; seed <= 40; ++seed) {
    const auto r = gradcheck::random_case(seed, 5, LossKind::Huber);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_LT(r.max_abs_error_small, 1e-9) << "seed " << seed;
  }
}

TEST(QNetGradient, SingleSampleMatchesFiniteDifferencesOnFullNetwork) {
  std::mt19937_64 rng(8);
  auto p = QParams::initialize(QNetShape{}, 77);
  gradcheck::Sample s{random_state(rng, 19), 5, 1.3, 0.7};
  const auto r = gradcheck::check(p, {s}, LossKind::Squared);
  EXPECT_EQ(r.checked, p.weights.parameter_count());
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_LT(r.max_abs_error_small, 1e-9);
}

TEST(QNetGradient, ZeroTdErrorGivesZeroGradient) {
  std::mt19937_64 rng(9);
  const auto p = QParams::initialize(QNetShape{}, 11);
  const auto out = forward(p, random_state(rng, 19));
  const auto g = backward(p, out, 3, 0.0, 1.0);
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(QNetGradient, ScalesLinearlyWithImportanceWeight) {
  std::mt19937_64 rng(10);
  const auto p = QParams::initialize(QNetShape{}, 12);
  const auto out = forward(p, random_state(rng, 19));
  const auto g1 = backward(p, out, 2, 0.4, 1.0, LossKind::Huber);
  auto g2 = backward(p, out, 2, 0.4, 2.0, LossKind::Huber);
  g2.scale(0.5);
  EXPECT_TRUE(bitwise_equal(g1, g2));
}

TEST(QNetGradient, HuberClipsLargeErrors) {
  std::mt19937_64 rng(11);
  const auto p = QParams::initialize(QNetShape{}, 13);
  const auto out = forward(p, random_state(rng, 19));
  const auto at_one = backward(p, out, 1, 1.0, 1.0, LossKind::Huber);
  const auto at_ten = backward(p, out, 1, 10.0, 1.0, LossKind::Huber);
  EXPECT_TRUE(bitwise_equal(at_one, at_ten));
}

TEST(QNetGradient, StaleCacheRejected) {
  std::mt19937_64 rng(12);
  auto p = QParams::initialize(QNetShape{}, 14);
  const auto out = forward(p, random_state(rng, 19));
  auto g = backward(p, out, 0, 0.5, 1.0);
  adam_update(p, g, AdamConfig{});
  try {
    (void)backward(p, out, 0, 0.5, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Internal);
  }
  const auto other = copy_params(p);
  EXPECT_THROW((void)backward(other, forward(p, random_state(rng, 19)), 0, 0.5, 1.0), Error);
}

TEST(QNetGradient, BatchMismatchRejected) {
  const auto p = QParams::initialize(QNetShape{}, 15);
  const auto out = forward(p, Eigen::MatrixXd::Zero(19, 2));
  const int actions[] = {0};
  const double td[] = {1.0};
  const double w[] = {1.0};
  EXPECT_THROW((void)backward(p, out, actions, td, w), Error);
}

TEST(Adam, ZeroGradientLeavesWeightsUnchanged) {
  auto p = QParams::initialize(QNetShape{}, 16);
  const auto before = p.weights;
  for (int i = 0; i < 5; ++i) adam_update(p, LayerSet::zeros(p.shape), AdamConfig{});
  EXPECT_TRUE(bitwise_equal(before, p.weights));
  EXPECT_EQ(p.adam.step, 5);
  EXPECT_EQ(p.version, 5u);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  auto p = QParams::zeros(QNetShape{2, 2, 2, 2, 0.01});
  auto g = LayerSet::zeros(p.shape);
  g[kTrunk1].weight << 0.3, -5.0, 1e-3, 0.0;
  AdamConfig cfg;
  adam_update(p, g, cfg);
  const auto& w = p.weights[kTrunk1].weight;
  // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(w(0, 0), -cfg.lr * 0.3 / (0.3 + cfg.epsilon), 1e-18);
  EXPECT_NEAR(w(0, 1), cfg.lr * 5.0 / (5.0 + cfg.epsilon), 1e-18);
  EXPECT_NEAR(w(1, 0), -cfg.lr * 1e-3 / (1e-3 + cfg.epsilon), 1e-18);
  EXPECT_EQ(w(1, 1), 0.0);
  EXPECT_NEAR(std::abs(w(0, 0)), cfg.lr, 1e-10);
}

TEST(Adam, ThreeStepsMatchHandRecurrence) {
  auto p = QParams::zeros(QNetShape{1, 1, 1, 1, 0.01});
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  const double grads[] = {0.5, -1.0, 2.0};
  double theta = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    auto gs = LayerSet::zeros(p.shape);
    gs[kValueOut].bias(0) = g;
    adam_update(p, gs, cfg);
    EXPECT_NEAR(p.weights[kValueOut].bias(0), theta, 1e-15) << "step " << t;
    EXPECT_NEAR(p.adam.first_moment[kValueOut].bias(0), m, 1e-15);
    EXPECT_NEAR(p.adam.second_moment[kValueOut].bias(0), v, 1e-15);
  }
}

TEST(Adam, RejectsNonFiniteGradient) {
  auto p = QParams::zeros(QNetShape{});
  auto g = LayerSet::zeros(p.shape);
  g[kTrunk2].bias(3) = std::nan("");
  try {
    adam_update(p, g, AdamConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
}

TEST(Adam, FitsTwoParameterRegression) {
  // With zero advantage weights Q = V = w*x + b along an all-positive path; fit w and b.
  QNetShape shape{1, 1, 1, 2, 0.01};
  auto p = QParams::zeros(shape);
  p.weights[kTrunk1].weight << 1;
  p.weights[kTrunk2].weight << 1;
  p.weights[kValueHidden].weight << 1;
  Eigen::MatrixXd xs(1, 4);
  xs << 0.5, 1.0, 1.5, 2.0;
  const Eigen::RowVectorXd ys = 3.0 * xs.array() - 1.0;
  AdamConfig cfg{0.05, 0.9, 0.999, 1e-8};
  const int actions[] = {0, 0, 0, 0};
  const double w[] = {1, 1, 1, 1};
  double loss = 0.0;
  for (int step = 0; step < 1000; ++step) {
    const auto out = forward(p, xs);
    double td[4];
    loss = 0.0;
    for (int i = 0; i < 4; ++i) {
      td[i] = ys(i) - out.q(0, i);
      loss += 0.25 * td_loss(td[i], 1.0, LossKind::Squared);
    }
    auto g = backward(p, out, actions, td, w, LossKind::Squared);
    // Freeze everything except the value output layer.
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      if (l == kValueOut) continue;
      g[l].weight.setZero();
      g[l].bias.setZero();
    }
    adam_update(p, g, cfg);
  }
  EXPECT_LT(loss, 1e-6);
  EXPECT_NEAR(p.weights[kValueOut].weight(0, 0), 3.0, 1e-2);
  EXPECT_NEAR(p.weights[kValueOut].bias(0), -1.0, 1e-2);
}

TEST(CopyParams, DeepCopyWithFreshOptimizerAndLineage) {
  auto p = QParams::initialize(QNetShape{}, 17);
  auto g = LayerSet::zeros(p.shape);
  g[kTrunk1].bias.setConstant(0.1);
  adam_update(p, g, AdamConfig{});
  const auto c = copy_params(p);
  EXPECT_TRUE(bitwise_equal(c.weights, p.weights));
  EXPECT_NE(c.lineage, p.lineage);
  EXPECT_EQ(c.adam.step, 0);
  EXPECT_EQ(c.adam.first_moment.max_abs(), 0.0);
  adam_update(p, g, AdamConfig{});
  EXPECT_FALSE(bitwise_equal(c.weights, p.weights));
}
