#include <gtest/gtest.h>

#include "progclean/baselines.hpp"
#include "progclean/harness.hpp"

using namespace progclean;

namespace {

Trial trial(std::size_t n = 800) {
  ExperimentConfig cfg;
  cfg.benchmark.n = n;
  return prepare_trial(cfg, 1);
}

}  // namespace

TEST(Baselines, StrategyNamesRoundTrip) {
  for (StrategyId s : all_strategies()) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_EQ(parse_strategy("ac-d-i"), StrategyId::AC_D_I);
  EXPECT_THROW(parse_strategy("XYZ"), Error);
}

TEST(Baselines, ProgressiveMapping) {
  EXPECT_EQ(progressive_setup(StrategyId::AC).plan, PlanKind::estimator);
  EXPECT_EQ(progressive_setup(StrategyId::AC).detector, DetectorMode::known);
  EXPECT_EQ(progressive_setup(StrategyId::AC_D).detector, DetectorMode::none);
  EXPECT_EQ(progressive_setup(StrategyId::AC_D_I).plan, PlanKind::uniform);
  EXPECT_EQ(progressive_setup(StrategyId::AC_C).detector, DetectorMode::adaptive);
  EXPECT_EQ(progressive_setup(StrategyId::AL).plan, PlanKind::uncertainty);
  EXPECT_THROW(progressive_setup(StrategyId::SC), Error);
}

TEST(Baselines, SampleCleanUsesNestedPrefixes) {
  const Trial t = trial();
  const auto traj = sampleclean_run(t.train, t.spec, {50, 100, 200}, 3);
  ASSERT_EQ(traj.size(), 3u);
  EXPECT_EQ(traj[0].records_cleaned, 50u);
  EXPECT_EQ(traj[2].records_cleaned, 200u);
  const auto again = sampleclean_run(t.train, t.spec, {50, 100, 200}, 3);
  EXPECT_EQ(traj[1].theta, again[1].theta);
}

TEST(Baselines, StaticModels) {
  const Trial t = trial();
  EXPECT_EQ(full_clean_run(t.train, t.spec), t.theta_clean);
  EXPECT_EQ(no_clean_run(t.train, t.spec), t.theta_dirty);
  Detector d;
  d.mode = DetectorMode::known;
  const Theta disc = discard_dirty_run(t.train, t.spec, d);
  EXPECT_EQ(disc.size(), t.spec.theta_size());
  EXPECT_THROW(discard_dirty_run(t.train, t.spec, Detector{}), Error);
}

TEST(Baselines, PartialCleaningConsumesBudget) {
  const Trial t = trial();
  UpdateConfig u;
  u.batch_size = 20;
  u.budget = 100;
  std::size_t dirty = 0;
  for (const Record& r : t.train.records()) dirty += r.is_corrupted();
  ASSERT_LT(dirty, 100u);
  for (bool det : {false, true}) {
    const auto traj = partial_cleaning_run(t.train, t.spec, u, 2, det);
    EXPECT_EQ(traj.front().records_cleaned, 0u);
    EXPECT_EQ(traj.back().records_cleaned, det ? dirty : 100u);
  }
}

TEST(Baselines, RobustThresholdAndFiltering) {
  EXPECT_NEAR(robust_threshold(10, 1000), 4.0 * std::sqrt(std::log(10.0) / 1000 + std::log(1000.0) / 1000), 1e-15);
  EXPECT_THROW(robust_threshold(0, 10), Error);
  Rng rng(2);
  std::vector<Record> recs;
  for (int i = 0; i < 500; ++i) recs.push_back({i, {rng.normal(), rng.normal(), 1.0}, {0.0}, {}, {}, {}});
  recs[7].x[0] = 1e6;
  const auto keep = robust_inliers(recs, 3);
  EXPECT_FALSE(keep[7]);
  std::size_t kept = 0;
  for (bool k : keep) kept += k;
  EXPECT_GE(kept, 480u);
  ModelSpec spec = ModelSpec::make(LossKind::linear_regression, 3, 500);
  EXPECT_THROW(robust_logreg(recs, spec), Error);
}

TEST(Baselines, ActiveLearningNeedsClassifier) {
  const Trial t = trial(300);
  ModelSpec reg = t.spec;
  reg.thresholded = false;
  UpdateConfig u;
  EXPECT_THROW(active_learning_run(t.train, reg, u, 0), Error);
}
