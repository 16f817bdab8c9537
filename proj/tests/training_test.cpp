// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ciar/rng.hpp"
#include "ciar/training.hpp"

namespace ciar {
namespace {

Vec vec(std::initializer_list<double> v) {
  return Eigen::Map<const Vec>(v.begin(), static_cast<Eigen::Index>(v.size()));
}

InterHeadParams zero_head(std::size_t n, std::size_t d) {
  return InterHeadParams{Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)),
                         Vec::Zero(static_cast<Eigen::Index>(n)),
                         Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)),
                         Vec::Zero(static_cast<Eigen::Index>(n))};
}

// Random head and batch with rows of the cloud matrix on the simplex.
struct Instance {
  InterHeadParams head;
  TrainingBatch batch;
};

Instance random_instance(std::size_t n, std::size_t d, std::size_t N, std::uint64_t seed) {
  Rng rng = make_rng({seed, 77});
  std::normal_distribution<double> g(0.0, 1.0);
  auto fill = [&](Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  };
  Instance in;
  in.head = zero_head(n, d);
  fill(in.head.w_center);
  fill(in.head.w_radius);
  in.head.w_radius *= 0.5;
  for (Eigen::Index i = 0; i < in.head.b_center.size(); ++i) {
    in.head.b_center[i] = g(rng);
    in.head.b_radius[i] = 0.5 * g(rng);
  }
  in.batch.hiddens = Mat(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
  fill(in.batch.hiddens);
  in.batch.cloud_dists = Mat(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(n));
  for (Eigen::Index s = 0; s < in.batch.cloud_dists.rows(); ++s) {
    Vec logits(static_cast<Eigen::Index>(n));
    for (double& x : logits) x = 2.0 * g(rng);
    in.batch.cloud_dists.row(s) = softmax(logits).transpose();
  }
  return in;
}

std::vector<TrainingBatch> synthetic_dataset(std::size_t n, std::size_t d, std::size_t N, std::size_t batches,
                                             std::uint64_t seed) {
  // Cloud distributions come from a hidden linear teacher.
  Rng rng = make_rng({seed, 99});
  std::normal_distribution<double> g(0.0, 1.0);
  Mat teacher(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < teacher.size(); ++i) teacher.data()[i] = g(rng);
  std::vector<TrainingBatch> out;
  for (std::size_t b = 0; b < batches; ++b) {
    TrainingBatch batch{Mat(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d)),
                        Mat(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(n))};
    for (Eigen::Index s = 0; s < batch.hiddens.rows(); ++s) {
      for (Eigen::Index j = 0; j < batch.hiddens.cols(); ++j) batch.hiddens(s, j) = g(rng);
      batch.cloud_dists.row(s) = softmax(teacher * batch.hiddens.row(s).transpose()).transpose();
    }
    out.push_back(std::move(batch));
  }
  return out;
}

TEST(BoundDistributions, TwoTokenExample) {
  InterHeadParams ih = zero_head(2, 1);
  ih.w_radius(0, 0) = 0.0;
  // radius = softplus(b_r): pick b_r so that r = (1, ~0).
  ih.b_radius = vec({softplus_inverse(1.0), -1000.0});
  const BoundDistributions b = bound_distributions(ih, Vec::Zero(1));
  EXPECT_NEAR(b.upper[0], 0.7311, 5e-5);
  EXPECT_NEAR(b.upper[1], 0.2689, 5e-5);
  EXPECT_NEAR(b.lower[0], 0.2689, 5e-5);
  EXPECT_NEAR(b.lower[1], 0.7311, 5e-5);
  EXPECT_NEAR(b.mid[0], 0.5, 1e-15);
  for (const Vec* p : {&b.lower, &b.mid, &b.upper}) EXPECT_NEAR(p->sum(), 1.0, 1e-9);
}

TEST(BoundDistributions, ZeroRadiusCollapses) {
  InterHeadParams ih = random_inter_head(6, 3, 1, 1.0);
  ih.w_radius.setZero();
  ih.b_radius.setConstant(-1000.0);
  const BoundDistributions b = bound_distributions(ih, Vec::Constant(3, 0.4));
  EXPECT_LT((b.lower - b.mid).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((b.upper - b.mid).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AnchorLoss, Examples) {
  const Vec uniform = Vec::Constant(4, 0.25);
  EXPECT_NEAR(anchor_loss(uniform, uniform, 1.0, 1.0), std::log(4.0), 1e-11);
  EXPECT_NEAR(anchor_loss(uniform, uniform, 1.0, 1.0), 1.3863, 5e-5);
  EXPECT_EQ(anchor_loss(vec({0.1, 0.9}), vec({0.7, 0.3}), 0.0, 0.0), 0.0);
  EXPECT_NEAR(anchor_loss(vec({0.5, 0.5}), vec({1.0, 0.0}), 1.0, 0.0), 1.0, 1e-15);
}

TEST(DroWeights, Examples) {
  const Vec eq = dro_weights(vec({1.0, 1.0}), 3.0);
  EXPECT_NEAR(eq[0], 0.5, 1e-15);
  EXPECT_NEAR(eq[1], 0.5, 1e-15);
  const Vec u = dro_weights(vec({0.3, 5.0, 2.0, 1.0}), 0.0);
  for (double w : u) EXPECT_NEAR(w, 0.25, 1e-15);
  const Vec w = dro_weights(vec({2.0, 0.0}), 1.0);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(w[0], e2 / (e2 + 1.0), 1e-15);
  EXPECT_NEAR(w[1], 1.0 / (e2 + 1.0), 1e-15);
  EXPECT_NEAR(w[0], 0.8808, 5e-5);
  // Large alpha times large losses must not overflow.
  EXPECT_NEAR(dro_weights(vec({1000.0, 0.0}), 100.0).sum(), 1.0, 1e-12);
}

TEST(DroLoss, Examples) {
  EXPECT_NEAR(dro_loss(vec({0.7, 0.7, 0.7}), 5.0), 0.7, 1e-15);
  EXPECT_NEAR(dro_loss(vec({2.0, 0.0}), 100.0), 2.0, 1e-3);
  EXPECT_NEAR(dro_loss(vec({2.0, 0.0}), 0.0), 1.0, 1e-15);
  double prev = 0.0;
  for (double a : {0.0, 0.5, 1.0, 2.0, 10.0}) {
    const double l = dro_loss(vec({2.0, 0.0, 0.5}), a);
    EXPECT_GE(l, prev);
    prev = l;
  }
}

TEST(KlAlign, Examples) {
  const Vec q = vec({0.2, 0.3, 0.5});
  EXPECT_NEAR(kl_align(q, q), 0.0, 1e-15);
  EXPECT_NEAR(kl_align(vec({1.0, 0.0}), vec({0.5, 0.5})), std::log(2.0), 1e-11);
  EXPECT_NEAR(kl_align(vec({1.0, 0.0}), vec({0.5, 0.5})), 0.6931, 5e-5);
  Rng rng = make_rng({5});
  std::normal_distribution<double> g(0.0, 2.0);
  for (int k = 0; k < 100; ++k) {
    Vec a(5), b(5);
    for (double& x : a) x = g(rng);
    for (double& x : b) x = g(rng);
    EXPECT_GE(kl_align(softmax(a), softmax(b)), 0.0);
  }
}

TEST(InterDroLoss, CollapsedBoundsOnCloudPoint) {
  InterHeadParams ih = random_inter_head(5, 3, 4, 1.0);
  ih.w_radius.setZero();
  ih.b_radius.setConstant(-1000.0);
  Instance in = random_instance(5, 3, 6, 2);
  for (Eigen::Index s = 0; s < in.batch.hiddens.rows(); ++s) {
    in.batch.cloud_dists.row(s) = bound_distributions(ih, in.batch.hiddens.row(s).transpose()).mid.transpose();
  }
  const InterDroConfig cfg;
  const LossBreakdown l = inter_dro_loss(ih, in.batch, cfg);
  double entropy = 0.0;
  for (Eigen::Index s = 0; s < in.batch.cloud_dists.rows(); ++s) {
    const Vec q = in.batch.cloud_dists.row(s).transpose();
    entropy += cross_entropy(q, q);
  }
  entropy /= static_cast<double>(in.batch.size());
  EXPECT_NEAR(l.l_kl, 0.0, 1e-12);
  EXPECT_NEAR(l.l_center, cfg.lambda_p * entropy, 1e-12);
  EXPECT_NEAR(l.l_upper, l.l_center, 1e-12);
  EXPECT_NEAR(l.l_lower - l.l_dro, l.l_center, 1e-12);
  EXPECT_NEAR(l.total, l.l_center + l.l_upper + l.l_lower, 1e-12);

  // Cross-entropy, KL and the robust term all sit at a stationary point in the
  // centre weights. The L1 term has a kink there, so it is left out.
  InterDroConfig smooth = cfg;
  smooth.lambda_v = 0.0;
  const InterHeadGradient g = analytic_gradient(ih, in.batch, smooth);
  EXPECT_LT(g.w_center.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(g.b_center.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(InterDroLoss, ZeroWeightsLeaveMeanLowerCrossEntropy) {
  const Instance in = random_instance(5, 3, 4, 8);
  InterDroConfig cfg;
  cfg.lambda_v = cfg.lambda_p = cfg.lambda_beta = cfg.alpha = 0.0;
  const LossBreakdown l = inter_dro_loss(in.head, in.batch, cfg);
  double mean_ce = 0.0;
  for (Eigen::Index s = 0; s < in.batch.hiddens.rows(); ++s) {
    const BoundDistributions b = bound_distributions(in.head, in.batch.hiddens.row(s).transpose());
    mean_ce += cross_entropy(in.batch.cloud_dists.row(s).transpose(), b.lower);
  }
  mean_ce /= 4.0;
  EXPECT_NEAR(l.total, mean_ce, 1e-12);
  EXPECT_NEAR(l.l_dro, mean_ce, 1e-12);
}

TEST(InterDroLoss, MatchesPerSampleEvaluation) {
  const Instance in = random_instance(7, 4, 9, 3);
  InterDroConfig cfg;
  cfg.lambda_v = 0.7;
  cfg.lambda_p = 1.3;
  cfg.lambda_beta = 0.4;
  cfg.alpha = 2.0;
  const auto N = static_cast<double>(in.batch.size());
  double anchor_mid = 0, anchor_up = 0, anchor_lo = 0, kl = 0;
  Vec ce(static_cast<Eigen::Index>(in.batch.size()));
  for (Eigen::Index s = 0; s < in.batch.hiddens.rows(); ++s) {
    const Vec q = in.batch.cloud_dists.row(s).transpose();
    const BoundDistributions b = bound_distributions(in.head, in.batch.hiddens.row(s).transpose());
    anchor_mid += anchor_loss(b.mid, q, cfg.lambda_v, cfg.lambda_p) / N;
    anchor_up += anchor_loss(b.upper, q, cfg.lambda_v, cfg.lambda_p) / N;
    anchor_lo += anchor_loss(b.lower, q, cfg.lambda_v, cfg.lambda_p) / N;
    kl += kl_align(q, b.mid) / N;
    ce[s] = cross_entropy(q, b.lower);
  }
  const LossBreakdown l = inter_dro_loss(in.head, in.batch, cfg);
  EXPECT_NEAR(l.l_kl, cfg.lambda_beta * kl, 1e-12);
  EXPECT_NEAR(l.l_dro, dro_loss(ce, cfg.alpha), 1e-12);
  EXPECT_NEAR(l.l_center, anchor_mid + cfg.lambda_beta * kl, 1e-12);
  EXPECT_NEAR(l.l_upper, anchor_up, 1e-12);
  EXPECT_NEAR(l.l_lower, anchor_lo + dro_loss(ce, cfg.alpha), 1e-12);
  EXPECT_NEAR(l.total, l.l_center + l.l_upper + l.l_lower, 1e-12);
  EXPECT_GE(l.total, 0.0);
}

TEST(Gradient, ShapesMatchParameters) {
  const Instance in = random_instance(5, 3, 4, 0);
  const InterHeadGradient g = analytic_gradient(in.head, in.batch, InterDroConfig{});
  EXPECT_EQ(g.w_center.rows(), 5);
  EXPECT_EQ(g.w_center.cols(), 3);
  EXPECT_EQ(g.w_radius.rows(), 5);
  EXPECT_EQ(g.w_radius.cols(), 3);
  EXPECT_EQ(g.b_center.size(), 5);
  EXPECT_EQ(g.b_radius.size(), 5);
}

TEST(Gradient, MatchesCentralDifferences) {
  const double h = 1e-5;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const Instance in = random_instance(5, 3, 4, seed);
    InterDroConfig cfg;
    cfg.alpha = 1.5;
    // Hold the DRO weights at their base-point values.
    Vec ce(4);
    for (Eigen::Index s = 0; s < 4; ++s) {
      const BoundDistributions b = bound_distributions(in.head, in.batch.hiddens.row(s).transpose());
      ce[s] = cross_entropy(in.batch.cloud_dists.row(s).transpose(), b.lower);
    }
    const Vec frozen = dro_weights(ce, cfg.alpha);
    const InterHeadGradient g = analytic_gradient(in.head, in.batch, cfg);

    auto check = [&](auto member, const auto& analytic, const char* name) {
      InterHeadParams p = in.head;
      auto& arr = p.*member;
      for (Eigen::Index i = 0; i < arr.size(); ++i) {
        const double keep = arr.data()[i];
        arr.data()[i] = keep + h;
        const double up = inter_dro_loss(p, in.batch, cfg, frozen).total;
        arr.data()[i] = keep - h;
        const double down = inter_dro_loss(p, in.batch, cfg, frozen).total;
        arr.data()[i] = keep;
        EXPECT_NEAR(analytic.data()[i], (up - down) / (2 * h), 1e-5) << name << "[" << i << "] seed " << seed;
      }
    };
    check(&InterHeadParams::w_center, g.w_center, "w_center");
    check(&InterHeadParams::b_center, g.b_center, "b_center");
    check(&InterHeadParams::w_radius, g.w_radius, "w_radius");
    check(&InterHeadParams::b_radius, g.b_radius, "b_radius");
  }
}

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  const auto data = synthetic_dataset(8, 4, 16, 3, 1);
  InterDroConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.steps = 10;
  const InterHeadParams init = random_inter_head(8, 4, 0);
  const TrainResult r = train(init, data, cfg);
  ASSERT_EQ(r.history.size(), 10u);
  for (const LossBreakdown& l : r.history) EXPECT_EQ(l.total, r.history.front().total);
  EXPECT_EQ(r.head.w_center, init.w_center);
}

TEST(Train, ZeroStepsIsIdentity) {
  const auto data = synthetic_dataset(8, 4, 16, 1, 1);
  InterDroConfig cfg;
  cfg.steps = 0;
  const InterHeadParams init = random_inter_head(8, 4, 3);
  const TrainResult r = train(init, data, cfg);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.head.w_center, init.w_center);
  EXPECT_EQ(r.head.b_center, init.b_center);
  EXPECT_EQ(r.head.w_radius, init.w_radius);
  EXPECT_EQ(r.head.b_radius, init.b_radius);
}

TEST(Train, Deterministic) {
  const auto data = synthetic_dataset(8, 4, 16, 2, 4);
  InterDroConfig cfg;
  cfg.steps = 25;
  const TrainResult a = train(random_inter_head(8, 4, 1), data, cfg);
  const TrainResult b = train(random_inter_head(8, 4, 1), data, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].total, b.history[i].total);
  EXPECT_EQ(a.head.w_center, b.head.w_center);
}

TEST(Train, ReducesCenterKlOnHarvestedPairs) {
  const SceneSpec scene;
  const ModelParams params = make_model_params(scene.n, 32, 0);
  const auto data = harvest_training_data(scene, params, 256, 256, 0);
  ASSERT_EQ(data.size(), 1u);
  InterDroConfig cfg;
  cfg.steps = 1000;
  const InterHeadParams init = random_inter_head(scene.n, 32, 0);
  const double before = mean_center_kl(init, data);
  const TrainResult r = train(init, data, cfg);
  EXPECT_LE(mean_center_kl(r.head, data), 0.5 * before);
  EXPECT_LT(r.history.back().total, r.history.front().total);
}

TEST(Train, DivergenceNamesStep) {
  // Saturated softmax gradients vanish, so a large step size alone stays
  // finite. Overflowing the logits is what makes the loss non-finite.
  auto data = synthetic_dataset(8, 4, 16, 1, 1);
  data[0].hiddens *= 1e10;
  InterHeadParams init = random_inter_head(8, 4, 0);
  init.w_center *= 1e300;
  InterDroConfig cfg;
  cfg.steps = 10;
  try {
    train(init, data, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsBadInput) {
  InterDroConfig cfg;
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = InterDroConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  TrainingBatch bad{Mat::Zero(2, 3), Mat::Constant(2, 4, 0.5)};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  const auto data = synthetic_dataset(8, 4, 16, 1, 1);
  EXPECT_THROW(train(random_inter_head(8, 5, 0), data, InterDroConfig{}), std::invalid_argument);
}

TEST(Harvest, ShapesAndDeterminism) {
  SceneSpec scene;
  scene.height = 8;
  scene.width = 8;
  const ModelParams params = make_model_params(scene.n, 16, 2);
  const auto a = harvest_training_data(scene, params, 300, 128, 5);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].size(), 128u);
  EXPECT_EQ(a[2].size(), 44u);
  for (const TrainingBatch& b : a) {
    EXPECT_NO_THROW(b.validate());
    EXPECT_EQ(b.hiddens.cols(), 16);
  }
  const auto b = harvest_training_data(scene, params, 300, 128, 5);
  EXPECT_EQ(a[1].hiddens, b[1].hiddens);
  EXPECT_EQ(a[1].cloud_dists, b[1].cloud_dists);
  const auto c = harvest_training_data(scene, params, 300, 128, 6);
  EXPECT_NE(a[0].cloud_dists, c[0].cloud_dists);
}

}  // namespace
}  // namespace ciar
