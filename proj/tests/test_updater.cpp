#include <gtest/gtest.h>

#include "progclean/harness.hpp"
#include "progclean/updater.hpp"

using namespace progclean;

namespace {

Trial small_trial(std::size_t n = 600, std::uint64_t seed = 0) {
  ExperimentConfig cfg;
  cfg.benchmark.n = n;
  return prepare_trial(cfg, seed);
}

UpdateConfig small_update(std::size_t b = 10, std::size_t k = 50) {
  UpdateConfig u;
  u.batch_size = b;
  u.budget = k;
  return u;
}

Detector known() {
  Detector d;
  d.mode = DetectorMode::known;
  return d;
}

}  // namespace

TEST(Updater, StepSchedules) {
  StepSchedule s{0.4, StepMode::inverse_time};
  EXPECT_DOUBLE_EQ(s.step(4, 10), 0.1);
  s.mode = StepMode::inverse_scaling;
  EXPECT_DOUBLE_EQ(s.step(4, 10), 0.01);
  s.mode = StepMode::constant;
  EXPECT_DOUBLE_EQ(s.step(4, 10), 0.4);
  EXPECT_THROW(s.step(0, 1), Error);
  EXPECT_THROW(parse_step_mode("linear"), Error);
}

TEST(Updater, CombineAndStepWeightsPartitions) {
  UpdateConfig cfg = small_update(1, 1);
  cfg.schedule = {1.0, StepMode::constant};
  // n_dirty 1, n_clean 3: g = 0.25 g_s + 0.75 g_c.
  const Theta next = combine_and_step(Theta({0.0}), Vector{4.0}, Vector{8.0}, 1, 3, 1, cfg);
  EXPECT_DOUBLE_EQ(next.values[0], -7.0);
  EXPECT_THROW(combine_and_step(Theta({0.0}), Vector{1}, Vector{1}, 0, 0, 1, cfg), Error);
  cfg.schedule.gamma0 = 1e308;
  EXPECT_THROW(combine_and_step(Theta({0.0}), Vector{1e308}, Vector{0}, 1, 0, 1, cfg), Error);
}

TEST(Updater, EstimateGsReweightsByProbability) {
  const ModelSpec spec = ModelSpec::make(LossKind::mean, 1, 1);
  const std::vector<SampledRecord> s{{{1.0}, {0.0}, 0.5}, {{3.0}, {0.0}, 0.25}};
  const GradientEstimate g = estimate_gs(s, Theta({0.0}), spec, 4);
  // (1/(2*4)) * (-2/0.5 - 6/0.25)
  EXPECT_DOUBLE_EQ(g.g[0], (-4.0 - 24.0) / 8.0);
  EXPECT_EQ(g.provenance, Provenance::sampled);
}

TEST(Updater, ValidateRejectsBadConfigs) {
  EXPECT_THROW(small_update(0, 10).validate(), Error);
  EXPECT_THROW(small_update(20, 10).validate(), Error);
  UpdateConfig u = small_update();
  u.floor_epsilon = 2;
  EXPECT_THROW(u.validate(), Error);
}

TEST(Updater, BudgetAndPartitionInvariants) {
  const Trial t = small_trial();
  SessionState s = make_session(t.train, t.spec, small_update(10, 20), PlanKind::estimator, known(), 1);
  ASSERT_GT(s.n_dirty(), 20u);
  OracleCleaner oc(t.train);
  std::size_t prev_cleaned = 0;
  while (run_iteration(s, oc)) {
    EXPECT_TRUE(s.data.partition_valid());
    EXPECT_EQ(s.budget_remaining + s.records_cleaned(), 20u);
    EXPECT_GE(s.records_cleaned(), prev_cleaned);
    EXPECT_EQ(oc.calls_made(), s.records_cleaned());
    for (std::int64_t id : s.cleaned) EXPECT_FALSE(s.data.dirty_ids().count(id));
    prev_cleaned = s.records_cleaned();
  }
  EXPECT_EQ(s.status, SessionStatus::done);
  EXPECT_EQ(s.budget_remaining, 0u);
  EXPECT_FALSE(run_iteration(s, oc));
}

TEST(Updater, RejectedBatchLeavesStateIntact) {
  const Trial t = small_trial();
  SessionState s = make_session(t.train, t.spec, small_update(), PlanKind::estimator, known(), 2);
  const auto ids = propose_batch(s);
  EXPECT_THROW(propose_batch(s), Error);
  OracleCleaner oc(t.train);
  std::vector<Repair> repairs = oracle_repairs(s, oc);
  const Theta before = s.theta;
  const std::size_t budget = s.budget_remaining;
  auto missing = repairs;
  missing.pop_back();
  EXPECT_THROW(apply_batch(s, missing), Error);
  auto dup = repairs;
  dup.push_back(repairs.front());
  EXPECT_THROW(apply_batch(s, dup), Error);
  auto nan = repairs;
  nan.front().x[0] = std::nan("");
  EXPECT_THROW(apply_batch(s, nan), Error);
  auto extra = repairs;
  for (const Record& r : t.train.records())
    if (std::find(ids.begin(), ids.end(), r.id) == ids.end()) {
      extra.push_back({r.id, r.x, r.y, 0});
      break;
    }
  EXPECT_THROW(apply_batch(s, extra), Error);
  EXPECT_EQ(s.theta, before);
  EXPECT_EQ(s.budget_remaining, budget);
  EXPECT_EQ(s.pending_ids(), ids);
  EXPECT_TRUE(s.cleaned.empty());
  apply_batch(s, repairs);
  EXPECT_EQ(s.records_cleaned(), ids.size());
}

TEST(Updater, SeededRunsAreReproducible) {
  const Trial t = small_trial();
  auto run = [&](std::uint64_t seed) {
    SessionState s = make_session(t.train, t.spec, small_update(), PlanKind::estimator, known(), seed);
    OracleCleaner oc(t.train);
    run_to_completion(s, oc);
    return s.theta;
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

TEST(Updater, AdaptiveBootstrapTakesNoStep) {
  const Trial t = small_trial();
  Detector d;
  d.mode = DetectorMode::adaptive;
  SessionState s = make_session(t.train, t.spec, small_update(), PlanKind::estimator, d, 3);
  EXPECT_EQ(s.n_dirty(), t.train.size());
  const Theta before = s.theta;
  propose_batch(s);
  // Tag every record clean: the detector still has no dirty class.
  std::vector<Repair> repairs;
  for (std::int64_t id : s.pending_ids()) repairs.push_back({id, s.data.record(id).x, s.data.record(id).y, 0});
  apply_batch(s, repairs);
  EXPECT_EQ(s.theta, before);
  EXPECT_EQ(s.t, 1u);
  EXPECT_TRUE(s.detector.falls_back_to_all());
}

TEST(Updater, RunToExhaustionThenPolishReachesCleanModel) {
  ExperimentConfig cfg;
  cfg.benchmark.task = Task::regression;
  cfg.benchmark.n = 300;
  cfg.thresholded = false;
  cfg.test_fraction = 0;
  cfg.reg_per_example = 1e-2;
  const Trial t = prepare_trial(cfg, 0);
  UpdateConfig u = cfg.update;
  u.budget = t.train.size();
  SessionState s = make_session(t.train, t.spec, u, PlanKind::estimator, known(), 0);
  OracleCleaner oc(t.train);
  run_to_completion(s, oc);
  EXPECT_TRUE(s.data.dirty_ids().empty());
  polish(s);
  EXPECT_LT(relative_model_error(s.theta, t.theta_clean), 1e-2);
}

TEST(Updater, UncertaintyPlanNeedsClassifier) {
  ExperimentConfig cfg;
  cfg.benchmark.task = Task::regression;
  cfg.benchmark.n = 200;
  cfg.thresholded = false;
  const Trial t = prepare_trial(cfg, 0);
  EXPECT_THROW(make_session(t.train, t.spec, small_update(), PlanKind::uncertainty, Detector{}, 0), Error);
}

TEST(Updater, HistoryRecordsEvaluatorMetrics) {
  const Trial t = small_trial();
  Evaluator e;
  e.reference = t.theta_clean;
  e.test = t.test;
  SessionState s = make_session(t.train, t.spec, small_update(), PlanKind::estimator, known(), 1, e);
  OracleCleaner oc(t.train);
  run_iteration(s, oc);
  ASSERT_EQ(s.history.size(), 1u);
  EXPECT_TRUE(s.history[0].relative_model_error.has_value());
  EXPECT_TRUE(s.history[0].test_accuracy.has_value());
  EXPECT_EQ(s.history[0].t, 1u);
  EXPECT_EQ(s.history[0].records_cleaned, s.records_cleaned());
}
