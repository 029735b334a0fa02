// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "deepbound/attack.hpp"
#include "deepbound/classify.hpp"
#include "deepbound/dataset.hpp"
#include "deepbound/metrics.hpp"

namespace deepbound {
namespace {

TEST(BinarySearch, LandsWithinResolutionOfRandomThresholds) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const double lo = 0.0, hi = 0.05 + u(rng), threshold = lo + (hi - lo) * u(rng);
    const std::size_t probes = 8 + static_cast<std::size_t>(t % 12);
    bool warn = true;
    const double s = binary_search_step([&](double x) { return x <= threshold; }, lo, hi, probes, &warn);
    EXPECT_FALSE(warn);
    EXPECT_LE(s, threshold);
    EXPECT_LE(threshold - s, (hi - lo) / std::ldexp(1.0, static_cast<int>(probes)));
  }
}

TEST(BinarySearch, EdgeCases) {
  bool warn = false;
  EXPECT_EQ(binary_search_step([](double) { return true; }, 0.0, 0.5, 10, &warn), 0.5);
  EXPECT_FALSE(warn);
  EXPECT_EQ(binary_search_step([](double) { return false; }, 0.1, 0.5, 10, &warn), 0.1);
  EXPECT_TRUE(warn);
}

class AttackFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new Model(Model::initialized(ModelSpec::res_cnn(), 21));
    data_ = new LabeledDataset(generate_dataset(31, 7));
    const auto planes = enumerate_planes(model_->graph);
    profiles_ = new std::vector<PlaneProfile>(
        profile_planes(*model_, *data_, std::vector<Plane>{plane_by_name(planes, res_block::sum)}));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete data_;
    delete profiles_;
  }

  static Objective objective(const Tensor& x) {
    return {AttackMode::untargeted, argmax(predict_logits(*model_, x).values()), 5};
  }

  static AttackConfig config(const Tensor& x) {
    AttackConfig cfg;
    cfg.objective = objective(x);
    cfg.epsilon = {0.2};
    cfg.step = 2e-3;
    cfg.max_iterations = 15;
    cfg.patience = 100;
    return cfg;
  }

  static Model* model_;
  static LabeledDataset* data_;
  static std::vector<PlaneProfile>* profiles_;
};

Model* AttackFixture::model_ = nullptr;
LabeledDataset* AttackFixture::data_ = nullptr;
std::vector<PlaneProfile>* AttackFixture::profiles_ = nullptr;

TEST_F(AttackFixture, D2bStaysFeasibleAndRecordsOneRowPerIteration) {
  const Tensor& x = data_->images[3];
  const AttackConfig cfg = config(x);
  const AttackResult r = d2b_attack(x, {*model_, *model_}, *profiles_, cfg);
  EXPECT_EQ(r.trace.size(), r.iterations);
  EXPECT_LE(r.iterations, cfg.max_iterations);
  EXPECT_TRUE(r.consistent);
  EXPECT_FALSE(r.aborted);
  EXPECT_TRUE(r.feasible);
  EXPECT_LE(r.occupancy, 1.0);
  for (float v : r.x_adv.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  EXPECT_NE(r.x_adv, x);
  ASSERT_EQ(r.occupancies.size(), 1u);
  const auto& plane = profiles_->front().plane;
  const double qd = quantile_distance(profiles_->front(), gather_plane(forward(model_->graph, model_->params, x), plane),
                                      gather_plane(forward(model_->graph, model_->params, r.x_adv), plane));
  EXPECT_LE(qd, 0.2 + 1.0 / 1024.0);
}

TEST_F(AttackFixture, D2bIsDeterministicAndSeparateModelsMatchShared) {
  const Tensor& x = data_->images[5];
  const AttackConfig cfg = config(x);
  const Model copy = *model_;
  const AttackResult a = d2b_attack(x, {*model_, *model_}, *profiles_, cfg);
  const AttackResult b = d2b_attack(x, {*model_, *model_}, *profiles_, cfg);
  const AttackResult c = d2b_attack(x, {copy, *model_}, *profiles_, cfg);
  EXPECT_EQ(a.x_adv, b.x_adv);
  EXPECT_EQ(a.x_adv, c.x_adv);
  EXPECT_EQ(a.iterations, c.iterations);
}

TEST_F(AttackFixture, ZeroIterationsReturnsTheNaturalInput) {
  const Tensor& x = data_->images[0];
  AttackConfig cfg = config(x);
  cfg.max_iterations = 0;
  cfg.step = 0.0;
  const AttackResult r = d2b_attack(x, {*model_, *model_}, *profiles_, cfg);
  EXPECT_EQ(r.x_adv, x);
  EXPECT_EQ(r.iterations, 0u);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.occupancy, 0.0);
}

TEST_F(AttackFixture, StepSearchFindsAFeasibleStep) {
  const Tensor& x = data_->images[8];
  AttackConfig cfg = config(x);
  cfg.step = 0.0;
  cfg.probes = 12;
  cfg.probe_iterations = 5;
  cfg.max_iterations = 5;
  const AttackResult r = d2b_attack(x, {*model_, *model_}, *profiles_, cfg);
  EXPECT_GT(r.step, 0.0);
  EXPECT_LE(r.step, cfg.step_hi);
  EXPECT_FALSE(r.step_warning);
  EXPECT_TRUE(r.feasible);
}

TEST_F(AttackFixture, BimRespectsThePixelBall) {
  const Tensor& x = data_->images[2];
  const AttackResult r = bim_attack(x, *model_, objective(x), 0.03, 0.005, 12, true);
  EXPECT_EQ(r.trace.size(), 12u);
  EXPECT_LE(pixel_distances(x, r.x_adv).linf, 0.03 + 1e-6);
  for (float v : r.x_adv.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST_F(AttackFixture, BaselinesAreFlaggedInconsistent) {
  const Tensor& x = data_->images[4];
  const AttackConfig cfg = config(x);
  const AttackResult clip = clipping_attack(x, *model_, *profiles_, cfg, 2.6e-3, 10);
  EXPECT_FALSE(clip.consistent);
  EXPECT_EQ(clip.iterations, 10u);
  TwoStepOptions opt;
  opt.outer = 3;
  opt.inner = 4;
  const AttackResult two = two_step_attack(x, *model_, *profiles_, cfg, opt);
  EXPECT_FALSE(two.consistent);
}

TEST_F(AttackFixture, CalibrationValidatesItsInputs) {
  std::vector<CalibrationSample> few;
  for (std::size_t i = 0; i < 5; ++i) few.push_back({data_->images[i], objective(data_->images[i])});
  EXPECT_THROW(calibrate_epsilon(*model_, *profiles_, *model_, few), UsageError);
  std::vector<CalibrationSample> enough;
  for (std::size_t i = 0; i < 10; ++i) enough.push_back({data_->images[i], objective(data_->images[i])});
  EXPECT_THROW(calibrate_epsilon(*model_, *profiles_, *model_, enough, 1e-7, 2), CalibrationError);
  EXPECT_THROW(calibrate_epsilon(*model_, {}, *model_, enough), UsageError);
}

TEST_F(AttackFixture, ProfilesMustMatchTheReferenceModel) {
  const Model plain = Model::initialized(ModelSpec::plain_cnn(), 1);
  const Tensor& x = data_->images[0];
  EXPECT_THROW(d2b_attack(x, {plain, plain}, *profiles_, config(x)), UsageError);
  EXPECT_THROW(d2b_attack(x, {*model_, *model_}, {}, config(x)), UsageError);
}

}  // namespace
}  // namespace deepbound
