#pragma once

// Experiment runner: synthetic benchmarks, corrupted train/test trials,
// strategy trajectories at cleaned-record checkpoints, and the report,
// crossover and mixed-data demonstrations built on top of them.

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "progclean/baselines.hpp"
#include "progclean/common.hpp"
#include "progclean/dataset.hpp"
#include "progclean/detector.hpp"
#include "progclean/estimator.hpp"
#include "progclean/models.hpp"
#include "progclean/updater.hpp"

namespace progclean {

enum class Task { classification, regression };

inline std::string to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw Error("unknown task '" + s + "'");
}

/// Synthetic data. Classification: labels +/-1 with equal probability and
/// x = y * separation * a + N(0, I), rejecting points with y a.x < margin so
/// the classes are separable with that margin (no rejection when margin is
/// unset). Regression: x ~ N(0, I), y = weight_scale * a.x + noise * N(0, 1).
/// The direction a has entries proportional to 1 / (1 + concentration * i).
struct BenchmarkSpec {
  Task task = Task::classification;
  std::size_t n = 5000;
  std::size_t d = 10;
  double separation = 1.5;
  std::optional<double> margin = 0.5;
  double concentration = 3.0;
  double noise = 1.0;
  double weight_scale = 2.0;
  bool zero_one_labels = false;  // classification labels {0,1} instead of {-1,+1}
};

inline Vector benchmark_direction(std::size_t d, double concentration) {
  Vector a(d);
  for (std::size_t i = 0; i < d; ++i) a[i] = 1.0 / (1.0 + concentration * static_cast<double>(i));
  scale(a, 1.0 / norm2(a));
  return a;
}

inline DatasetView synthetic_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  if (spec.n < 100) throw Error("synthetic_benchmark: n must be >= 100");
  if (spec.d < 2) throw Error("synthetic_benchmark: d must be >= 2");
  Rng rng(seed);
  const Vector a = benchmark_direction(spec.d, spec.concentration);
  std::vector<Record> records;
  records.reserve(spec.n);
  while (records.size() < spec.n) {
    Record r;
    r.id = static_cast<std::int64_t>(records.size());
    r.x.resize(spec.d);
    if (spec.task == Task::classification) {
      const double label = rng.uniform() < 0.5 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < spec.d; ++i) r.x[i] = label * spec.separation * a[i] + rng.normal();
      if (spec.margin && label * dot(a, r.x) < *spec.margin) continue;
      r.y = {spec.zero_one_labels ? (label > 0 ? 1.0 : 0.0) : label};
    } else {
      for (double& v : r.x) v = rng.normal();
      r.y = {spec.weight_scale * dot(a, r.x) + spec.noise * rng.normal()};
    }
    r.clean_x = r.x;
    r.clean_y = r.y;
    records.push_back(std::move(r));
  }
  return DatasetView(std::move(records), spec.d, 1);
}

inline DatasetView synthetic_benchmark(std::size_t n, std::size_t d, Task task, std::uint64_t seed) {
  BenchmarkSpec spec;
  spec.n = n;
  spec.d = d;
  spec.task = task;
  return synthetic_benchmark(spec, seed);
}

struct TrainTestSplit {
  DatasetView train;
  std::vector<Record> test;
};

/// Holds out round(test_fraction * N) records chosen by a seeded shuffle.
/// Both parts keep their original ids and order.
inline TrainTestSplit split_train_test(const DatasetView& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw Error("test_fraction must be in [0, 1)");
  const std::size_t n = data.size();
  const std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed ^ 0x7e57);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<char> is_test(n, 0);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = 1;
  TrainTestSplit out;
  std::vector<Record> train;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.test : train).push_back(data.records()[i]);
  out.train = DatasetView(std::move(train), data.d(), data.l());
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::optional<std::string> csv_path;  // replaces the synthetic generator
  BenchmarkSpec benchmark;
  double test_fraction = 0.2;
  bool apply_corruption = true;
  CorruptionSpec corruption;
  LossKind loss = LossKind::linear_regression;
  bool thresholded = true;
  double reg_per_example = 1e-4;
  std::size_t classes = 2;
  UpdateConfig update;
  std::vector<StrategyId> strategies = {StrategyId::AC, StrategyId::AC_D, StrategyId::AC_D_I, StrategyId::AL,
                                        StrategyId::SC};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::size_t> checkpoints;  // empty: 0, b, 2b, ..., k
  double margin_threshold = 0.0;
  ClassifierOptions classifier;
  bool record_timing = false;
  bool parallel = true;

  std::vector<std::size_t> resolved_checkpoints() const {
    std::vector<std::size_t> c = checkpoints;
    if (c.empty())
      for (std::size_t v = 0; v <= update.budget; v += update.batch_size) c.push_back(v);
    if (c.empty() || c.back() != update.budget) {
      if (checkpoints.empty()) c.push_back(update.budget);
    }
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
  }

  void validate() const {
    update.validate();
    if (seeds.empty()) throw Error("experiment needs at least one seed");
    if (strategies.empty()) throw Error("experiment needs at least one strategy");
    for (std::size_t c : resolved_checkpoints())
      if (c > update.budget) throw Error("checkpoint " + std::to_string(c) + " exceeds the budget");
  }
};

/// One seed's corrupted training relation, clean test set and reference models.
struct Trial {
  DatasetView train;
  std::vector<Record> test;
  ModelSpec spec;
  Theta theta_clean;
  Theta theta_dirty;
  std::uint64_t seed = 0;
};

inline Trial prepare_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  DatasetView data;
  if (cfg.csv_path) {
    data = load_csv(*cfg.csv_path);
    std::vector<Record> recs = data.records();
    for (Record& r : recs)
      if (!r.has_ground_truth()) {
        r.clean_x = r.x;
        r.clean_y = r.y;
      }
    data = DatasetView(std::move(recs), data.d(), data.l());
  } else {
    BenchmarkSpec b = cfg.benchmark;
    if (cfg.loss == LossKind::logistic_regression) b.zero_one_labels = true;
    data = synthetic_benchmark(b, seed);
  }
  TrainTestSplit split = split_train_test(data, cfg.test_fraction, seed);
  Trial t;
  t.seed = seed;
  t.test = std::move(split.test);
  for (Record& r : t.test)
    if (r.has_ground_truth()) {
      r.x = *r.clean_x;
      r.y = *r.clean_y;
    }
  t.spec = ModelSpec::make(cfg.loss, data.d(), split.train.size(), cfg.reg_per_example);
  t.spec.thresholded = cfg.thresholded;
  t.spec.classes = cfg.classes;
  t.theta_clean = full_clean_run(split.train, t.spec);
  if (cfg.apply_corruption) {
    CorruptionSpec c = cfg.corruption;
    c.seed = cfg.corruption.seed ^ (seed * 0x9e3779b97f4a7c15ULL);
    t.train = corrupt(split.train, c, t.theta_clean.values);
  } else {
    t.train = std::move(split.train);
  }
  t.theta_dirty = no_clean_run(t.train, t.spec);
  return t;
}

inline Detector make_detector(DetectorMode mode, const ExperimentConfig& cfg) {
  Detector d;
  d.mode = mode;
  d.margin_threshold = cfg.margin_threshold;
  d.classifier_options = cfg.classifier;
  return d;
}

inline bool is_static(StrategyId s) {
  return s == StrategyId::DISCARD || s == StrategyId::ROBUST || s == StrategyId::NO_CLEAN ||
         s == StrategyId::FULL_CLEAN;
}

inline Trajectory run_strategy(const Trial& trial, const ExperimentConfig& cfg, StrategyId s) {
  const auto refs_of = [&](const DatasetView& d) { return example_refs(d); };
  auto static_point = [&](Theta th, std::size_t cleaned) {
    const auto refs = refs_of(trial.train);
    return Trajectory{{cleaned, th, mean_loss(trial.spec, refs, th), 0.0}};
  };
  if (is_progressive(s)) {
    const ProgressiveSetup setup = progressive_setup(s);
    if (s == StrategyId::AL && !trial.spec.is_classifier())
      throw Error("AL needs a classification model (set thresholded = true for linear regression)");
    return progressive_run(trial.train, trial.spec, cfg.update, setup.plan, make_detector(setup.detector, cfg),
                           trial.seed, cfg.record_timing);
  }
  switch (s) {
    case StrategyId::SC: {
      Trajectory out{{0, Theta::zeros(trial.spec), 0.0, 0.0}};
      std::vector<std::size_t> grid;
      for (std::size_t c : cfg.resolved_checkpoints())
        if (c > 0) grid.push_back(c);
      for (TrajectoryPoint& p : sampleclean_run(trial.train, trial.spec, grid, trial.seed)) out.push_back(std::move(p));
      return out;
    }
    case StrategyId::PC: return partial_cleaning_run(trial.train, trial.spec, cfg.update, trial.seed, false);
    case StrategyId::PC_D: return partial_cleaning_run(trial.train, trial.spec, cfg.update, trial.seed, true);
    case StrategyId::DISCARD:
      return static_point(discard_dirty_run(trial.train, trial.spec, make_detector(DetectorMode::known, cfg)), 0);
    case StrategyId::ROBUST: return static_point(robust_logreg(trial.train.records(), trial.spec), 0);
    case StrategyId::NO_CLEAN: return static_point(trial.theta_dirty, 0);
    case StrategyId::FULL_CLEAN: return static_point(trial.theta_clean, trial.train.size());
    default: break;
  }
  throw Error("unsupported strategy " + to_string(s));
}

/// Latest trajectory state with at most `checkpoint` records cleaned (the
/// first state when none qualifies). Static strategies have one state.
inline const TrajectoryPoint& state_at(const Trajectory& traj, std::size_t checkpoint) {
  if (traj.empty()) throw Error("empty trajectory");
  if (traj.size() == 1) return traj.front();
  const TrajectoryPoint* best = &traj.front();
  for (const TrajectoryPoint& p : traj)
    if (p.records_cleaned <= checkpoint) best = &p;
  return *best;
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string strategy;
  std::string seed;
  std::size_t checkpoint = 0;
  double records_cleaned = 0;
  double rel_model_error = 0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double training_loss = 0;
  double wall_ms = 0;
};

struct Report {
  std::vector<ReportRow> rows;     // per strategy, seed and checkpoint
  std::vector<ReportRow> medians;  // per strategy and checkpoint

  const ReportRow& median(StrategyId s, std::size_t checkpoint) const {
    for (const ReportRow& r : medians)
      if (r.strategy == to_string(s) && r.checkpoint == checkpoint) return r;
    throw Error("no median row for " + to_string(s) + " at " + std::to_string(checkpoint));
  }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end(), [](double a, double b) {
    if (std::isnan(a)) return false;
    if (std::isnan(b)) return true;
    return a < b;
  });
  while (!v.empty() && std::isnan(v.back())) v.pop_back();
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

namespace detail {

inline std::vector<ReportRow> trial_rows(const ExperimentConfig& cfg, std::uint64_t seed) {
  const Trial trial = prepare_trial(cfg, seed);
  const auto test_refs = example_refs(trial.test);
  std::vector<ReportRow> rows;
  for (StrategyId s : cfg.strategies) {
    const Trajectory traj = run_strategy(trial, cfg, s);
    double wall = 0.0;
    std::size_t next = 0;
    for (std::size_t c : cfg.resolved_checkpoints()) {
      const TrajectoryPoint& p = state_at(traj, c);
      for (; next < traj.size() && traj[next].records_cleaned <= c; ++next) wall += traj[next].wall_ms;
      ReportRow row;
      row.strategy = to_string(s);
      row.seed = std::to_string(seed);
      row.checkpoint = c;
      row.records_cleaned = static_cast<double>(p.records_cleaned);
      row.rel_model_error = relative_model_error(p.theta, trial.theta_clean);
      if (trial.spec.is_classifier() && !test_refs.empty())
        row.test_accuracy = evaluate(trial.spec, p.theta, test_refs).accuracy;
      row.training_loss = p.training_loss;
      row.wall_ms = cfg.record_timing ? wall : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace detail

inline Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<ReportRow>> per_seed(cfg.seeds.size());
  if (cfg.parallel && cfg.seeds.size() > 1) {
    std::vector<std::future<std::vector<ReportRow>>> jobs;
    for (std::uint64_t seed : cfg.seeds)
      jobs.push_back(std::async(std::launch::async, [&cfg, seed] { return detail::trial_rows(cfg, seed); }));
    for (std::size_t i = 0; i < jobs.size(); ++i) per_seed[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) per_seed[i] = detail::trial_rows(cfg, cfg.seeds[i]);
  }
  Report rep;
  for (auto& rows : per_seed) rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
  for (StrategyId s : cfg.strategies) {
    for (std::size_t c : cfg.resolved_checkpoints()) {
      std::vector<double> rc, err, acc, loss, wall;
      for (const ReportRow& r : rep.rows)
        if (r.strategy == to_string(s) && r.checkpoint == c) {
          rc.push_back(r.records_cleaned);
          err.push_back(r.rel_model_error);
          acc.push_back(r.test_accuracy);
          loss.push_back(r.training_loss);
          wall.push_back(r.wall_ms);
        }
      ReportRow m;
      m.strategy = to_string(s);
      m.seed = "median";
      m.checkpoint = c;
      m.records_cleaned = median_of(rc);
      m.rel_model_error = median_of(err);
      m.test_accuracy = median_of(acc);
      m.training_loss = median_of(loss);
      m.wall_ms = median_of(wall);
      rep.medians.push_back(m);
    }
  }
  return rep;
}

namespace detail {

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  return format_double(v);
}

}  // namespace detail

inline void write_report_csv(std::ostream& os, const Report& rep) {
  os << "strategy,seed,checkpoint,records_cleaned,rel_model_error,test_accuracy,training_loss,wall_ms\n";
  auto emit = [&](const ReportRow& r) {
    os << r.strategy << ',' << r.seed << ',' << r.checkpoint << ',' << detail::csv_number(r.records_cleaned) << ','
       << detail::csv_number(r.rel_model_error) << ',' << detail::csv_number(r.test_accuracy) << ','
       << detail::csv_number(r.training_loss) << ',' << detail::csv_number(r.wall_ms) << '\n';
  };
  for (const ReportRow& r : rep.rows) emit(r);
  for (const ReportRow& r : rep.medians) emit(r);
}

// ---------------------------------------------------------------------------
// Corruption-rate sweep

/// First checkpoint at which the relative error reaches `target`, or `cap`.
inline std::size_t records_to_target(const Trajectory& traj, const Theta& theta_star,
                                     const std::vector<std::size_t>& checkpoints, double target, std::size_t cap) {
  for (std::size_t c : checkpoints)
    if (relative_model_error(state_at(traj, c).theta, theta_star) <= target) return c;
  return cap;
}

struct SweepRow {
  double rate = 0;
  std::string strategy;
  std::string seed;
  double records_to_target = 0;
};

/// For each rate, records each strategy cleans before reaching `target`
/// relative error, with the budget set to the whole training relation.
inline std::vector<SweepRow> corruption_sweep(ExperimentConfig cfg, const std::vector<double>& rates,
                                              double target = 0.01) {
  for (double r : rates)
    if (!(r > 0.0 && r < 1.0)) throw Error("corruption_sweep: rates must lie in (0, 1)");
  std::vector<SweepRow> rows;
  for (double rate : rates) {
    cfg.corruption.rate = rate;
    std::vector<std::future<std::vector<SweepRow>>> jobs;
    auto one = [cfg, rate, target](std::uint64_t seed) {
      ExperimentConfig c = cfg;
      const Trial trial = prepare_trial(c, seed);
      c.update.budget = trial.train.size();
      c.checkpoints.clear();
      const auto grid = c.resolved_checkpoints();
      std::vector<SweepRow> out;
      for (StrategyId s : c.strategies) {
        const Trajectory traj = run_strategy(trial, c, s);
        out.push_back({rate, to_string(s), std::to_string(seed),
                       static_cast<double>(records_to_target(traj, trial.theta_clean, grid, target, c.update.budget))});
      }
      return out;
    };
    std::vector<std::vector<SweepRow>> per_seed;
    if (cfg.parallel) {
      for (std::uint64_t seed : cfg.seeds) jobs.push_back(std::async(std::launch::async, one, seed));
      for (auto& j : jobs) per_seed.push_back(j.get());
    } else {
      for (std::uint64_t seed : cfg.seeds) per_seed.push_back(one(seed));
    }
    std::vector<SweepRow> rate_rows;
    for (auto& v : per_seed) rate_rows.insert(rate_rows.end(), v.begin(), v.end());
    for (StrategyId s : cfg.strategies) {
      std::vector<double> vals;
      for (const SweepRow& r : rate_rows)
        if (r.strategy == to_string(s)) vals.push_back(r.records_to_target);
      rate_rows.push_back({rate, to_string(s), "median", median_of(vals)});
    }
    rows.insert(rows.end(), rate_rows.begin(), rate_rows.end());
  }
  return rows;
}

inline double sweep_median(const std::vector<SweepRow>& rows, double rate, StrategyId s) {
  for (const SweepRow& r : rows)
    if (r.rate == rate && r.strategy == to_string(s) && r.seed == "median") return r.records_to_target;
  throw Error("no sweep median for " + to_string(s));
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "rate,strategy,seed,records_to_target\n";
  for (const SweepRow& r : rows)
    os << format_double(r.rate) << ',' << r.strategy << ',' << r.seed << ',' << detail::csv_number(r.records_to_target)
       << '\n';
}

/// Regression benchmark used for the crossover: the clean model needs a few
/// thousand uniformly sampled records to get within 1%.
inline ExperimentConfig crossover_config() {
  ExperimentConfig cfg;
  cfg.benchmark.task = Task::regression;
  cfg.benchmark.concentration = 0.5;
  cfg.benchmark.noise = 1.0;
  cfg.benchmark.weight_scale = 2.0;
  cfg.thresholded = false;
  cfg.update.schedule.gamma0 = 0.2;
  cfg.update.batch_size = 25;
  cfg.strategies = {StrategyId::AC, StrategyId::SC};
  return cfg;
}

// ---------------------------------------------------------------------------
// Estimator comparison on a trial

inline std::vector<EstimatorErrors> trial_estimator_errors(const Trial& trial, const std::vector<std::size_t>& grid) {
  std::set<std::int64_t> dirty;
  for (const Record& r : trial.train.records())
    if (known_detect(r).is_dirty) dirty.insert(r.id);
  return compare_estimators(trial.train, dirty, trial.theta_dirty, trial.spec, grid, trial.seed);
}

// ---------------------------------------------------------------------------
// Mixed-data demonstration

struct SimpsonReport {
  std::vector<std::pair<double, double>> clean_points, dirty_points, mixed_points;
  double clean_slope = 0, dirty_slope = 0, mixed_slope = 0;
  bool sign_flipped = false;
};

/// Least-squares slope of y on [x, 1].
inline double fit_slope(const std::vector<std::pair<double, double>>& pts) {
  std::vector<Record> recs;
  for (std::size_t i = 0; i < pts.size(); ++i)
    recs.push_back({static_cast<std::int64_t>(i), {pts[i].first, 1.0}, {pts[i].second}, {}, {}, {}});
  ModelSpec spec;
  spec.loss = LossKind::linear_regression;
  spec.d = 2;
  spec.n_reference = recs.size();
  return train_full(spec, example_refs(recs)).values[0];
}

/// Six points; three have x translated by +4. Cleaning two of the three moves
/// two high-y points back to the left while the low-y point stays displaced
/// to the right, which flips the fitted slope below zero even though both the
/// clean and the fully dirty fits slope upward.
inline SimpsonReport simpson_demo() {
  SimpsonReport rep;
  rep.clean_points = {{2, 9}, {2, 9}, {0, 3}, {2, 4}, {3, 6}, {3, 8}};
  const double shift = 4.0;
  rep.dirty_points = rep.clean_points;
  for (std::size_t i : {0, 1, 2}) rep.dirty_points[i].first += shift;
  rep.mixed_points = rep.dirty_points;
  for (std::size_t i : {0, 1}) rep.mixed_points[i] = rep.clean_points[i];
  rep.clean_slope = fit_slope(rep.clean_points);
  rep.dirty_slope = fit_slope(rep.dirty_points);
  rep.mixed_slope = fit_slope(rep.mixed_points);
  rep.sign_flipped = (rep.mixed_slope > 0) != (rep.clean_slope > 0);
  return rep;
}

inline void write_simpson_csv(std::ostream& os, const SimpsonReport& rep) {
  os << "point,clean_x,clean_y,dirty_x,mixed_x\n";
  for (std::size_t i = 0; i < rep.clean_points.size(); ++i)
    os << i << ',' << format_double(rep.clean_points[i].first) << ',' << format_double(rep.clean_points[i].second)
       << ',' << format_double(rep.dirty_points[i].first) << ',' << format_double(rep.mixed_points[i].first) << '\n';
}

}  // namespace progclean
