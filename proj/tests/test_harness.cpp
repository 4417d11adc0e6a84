#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "progclean/harness.hpp"

using namespace progclean;

TEST(Harness, BenchmarkIsSeededAndSeparable) {
  BenchmarkSpec b;
  b.n = 500;
  const DatasetView a = synthetic_benchmark(b, 3);
  const DatasetView c = synthetic_benchmark(b, 3);
  ASSERT_EQ(a.size(), 500u);
  const Vector dir = benchmark_direction(b.d, b.concentration);
  EXPECT_NEAR(norm2(dir), 1.0, 1e-12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Record& r = a.records()[i];
    EXPECT_EQ(r.x, c.records()[i].x);
    EXPECT_TRUE(r.y[0] == 1.0 || r.y[0] == -1.0);
    EXPECT_GE(r.y[0] * dot(dir, r.x), *b.margin);
  }
  b.zero_one_labels = true;
  const DatasetView z = synthetic_benchmark(b, 1);
  for (const Record& r : z.records()) EXPECT_TRUE(r.y[0] == 0.0 || r.y[0] == 1.0);
}

TEST(Harness, SplitKeepsIdsAndIsDisjoint) {
  const DatasetView data = synthetic_benchmark(100, 3, Task::regression, 0);
  const TrainTestSplit s = split_train_test(data, 0.2, 7);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.train.size(), 80u);
  for (const Record& r : s.test) EXPECT_FALSE(s.train.contains(r.id));
  EXPECT_THROW(split_train_test(data, 1.0, 0), Error);
}

TEST(Harness, TrialHasCleanTestSetAndReferenceModels) {
  ExperimentConfig cfg;
  cfg.benchmark.n = 500;
  const Trial t = prepare_trial(cfg, 2);
  EXPECT_EQ(t.test.size(), 100u);
  for (const Record& r : t.test) EXPECT_FALSE(r.is_corrupted());
  std::size_t dirty = 0;
  for (const Record& r : t.train.records()) dirty += r.is_corrupted();
  EXPECT_GT(dirty, 0u);
  EXPECT_NE(t.theta_clean, t.theta_dirty);
}

TEST(Harness, CheckpointsDefaultToBatchMultiples) {
  ExperimentConfig cfg;
  cfg.update.batch_size = 40;
  cfg.update.budget = 100;
  EXPECT_EQ(cfg.resolved_checkpoints(), (std::vector<std::size_t>{0, 40, 80, 100}));
  cfg.checkpoints = {500};
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Harness, ExperimentReportHasRowsAndMedians) {
  ExperimentConfig cfg;
  cfg.benchmark.n = 600;
  cfg.update.budget = 100;
  cfg.seeds = {0, 1, 2};
  cfg.strategies = {StrategyId::AC, StrategyId::SC, StrategyId::NO_CLEAN};
  const Report rep = run_experiment(cfg);
  const std::size_t checkpoints = cfg.resolved_checkpoints().size();
  EXPECT_EQ(rep.rows.size(), 3 * 3 * checkpoints);
  EXPECT_EQ(rep.medians.size(), 3 * checkpoints);
  EXPECT_GE(rep.median(StrategyId::AC, 0).rel_model_error, rep.median(StrategyId::AC, 100).rel_model_error);
  std::ostringstream os;
  write_report_csv(os, rep);
  EXPECT_EQ(os.str().substr(0, 9), "strategy,");
  cfg.parallel = false;
  const Report serial = run_experiment(cfg);
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    EXPECT_EQ(rep.rows[i].rel_model_error, serial.rows[i].rel_model_error);
}

TEST(Harness, RecordsToTargetUsesFirstQualifyingCheckpoint) {
  const Theta star({1.0, 0.0});
  const Trajectory traj{{0, Theta({0.0, 0.0}), 0, 0}, {10, Theta({0.5, 0.0}), 0, 0}, {20, Theta({0.995, 0.0}), 0, 0}};
  EXPECT_EQ(records_to_target(traj, star, {0, 10, 20}, 0.01, 99), 20u);
  EXPECT_EQ(records_to_target(traj, star, {0, 10}, 0.01, 99), 99u);
}

TEST(Harness, SimpsonDemoMatchesExactLeastSquares) {
  const SimpsonReport rep = simpson_demo();
  EXPECT_NEAR(rep.clean_slope, oracle::ls_slope(rep.clean_points), 1e-9);
  EXPECT_NEAR(rep.dirty_slope, oracle::ls_slope(rep.dirty_points), 1e-9);
  EXPECT_NEAR(rep.mixed_slope, oracle::ls_slope(rep.mixed_points), 1e-9);
  EXPECT_GT(rep.clean_slope, 0);
  EXPECT_GT(rep.dirty_slope, 0);
  EXPECT_LT(rep.mixed_slope, 0);
  EXPECT_TRUE(rep.sign_flipped);
}

TEST(Harness, SweepRejectsRatesOutsideUnitInterval) {
  EXPECT_THROW(corruption_sweep(crossover_config(), {0.0}), Error);
  EXPECT_THROW(corruption_sweep(crossover_config(), {1.0}), Error);
}
