#pragma once

// Reference strategies: the progressive variants, train-on-sample,
// uncertainty sampling, partial write-back cleaning, robust logistic
// regression and the static discard / no-clean / full-clean models.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "progclean/common.hpp"
#include "progclean/dataset.hpp"
#include "progclean/detector.hpp"
#include "progclean/models.hpp"
#include "progclean/sampler.hpp"
#include "progclean/updater.hpp"

namespace progclean {

enum class StrategyId { AC, AC_O, AC_D, AC_D_I, AC_C, AL, SC, PC, PC_D, DISCARD, ROBUST, NO_CLEAN, FULL_CLEAN };

inline const std::vector<StrategyId>& all_strategies() {
  static const std::vector<StrategyId> all = {StrategyId::AC, StrategyId::AC_O, StrategyId::AC_D, StrategyId::AC_D_I,
                                              StrategyId::AC_C, StrategyId::AL, StrategyId::SC, StrategyId::PC,
                                              StrategyId::PC_D, StrategyId::DISCARD, StrategyId::ROBUST,
                                              StrategyId::NO_CLEAN, StrategyId::FULL_CLEAN};
  return all;
}

inline std::string to_string(StrategyId s) {
  switch (s) {
    case StrategyId::AC: return "AC";
    case StrategyId::AC_O: return "AC_O";
    case StrategyId::AC_D: return "AC_D";
    case StrategyId::AC_D_I: return "AC_D_I";
    case StrategyId::AC_C: return "AC_C";
    case StrategyId::AL: return "AL";
    case StrategyId::SC: return "SC";
    case StrategyId::PC: return "PC";
    case StrategyId::PC_D: return "PC_D";
    case StrategyId::DISCARD: return "DISCARD";
    case StrategyId::ROBUST: return "ROBUST";
    case StrategyId::NO_CLEAN: return "NO_CLEAN";
    case StrategyId::FULL_CLEAN: return "FULL_CLEAN";
  }
  return "?";
}

inline StrategyId parse_strategy(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (StrategyId id : all_strategies())
    if (to_string(id) == s) return id;
  throw Error("unknown strategy '" + s + "'");
}

/// Plan and detector of each progressive strategy.
struct ProgressiveSetup {
  PlanKind plan;
  DetectorMode detector;
};

inline bool is_progressive(StrategyId s) {
  switch (s) {
    case StrategyId::AC:
    case StrategyId::AC_O:
    case StrategyId::AC_D:
    case StrategyId::AC_D_I:
    case StrategyId::AC_C:
    case StrategyId::AL: return true;
    default: return false;
  }
}

inline ProgressiveSetup progressive_setup(StrategyId s) {
  switch (s) {
    case StrategyId::AC: return {PlanKind::estimator, DetectorMode::known};
    case StrategyId::AC_O: return {PlanKind::oracle, DetectorMode::known};
    case StrategyId::AC_D: return {PlanKind::dirty_gradient, DetectorMode::none};
    case StrategyId::AC_D_I: return {PlanKind::uniform, DetectorMode::none};
    case StrategyId::AC_C: return {PlanKind::estimator, DetectorMode::adaptive};
    case StrategyId::AL: return {PlanKind::uncertainty, DetectorMode::none};
    default: throw Error(to_string(s) + " is not a progressive strategy");
  }
}

/// Model state after a given number of distinct records were cleaned.
struct TrajectoryPoint {
  std::size_t records_cleaned = 0;
  Theta theta;
  double training_loss = 0.0;
  double wall_ms = 0.0;
};

using Trajectory = std::vector<TrajectoryPoint>;

/// Runs a progressive session to exhaustion, recording the start and every step.
inline Trajectory progressive_run(const DatasetView& data, const ModelSpec& spec, const UpdateConfig& cfg,
                                  PlanKind plan, const Detector& detector, std::uint64_t seed,
                                  bool record_timing = false) {
  SessionState s = make_session(data, spec, cfg, plan, detector, seed);
  s.record_timing = record_timing;
  OracleCleaner cleaner(data);
  Trajectory out{{0, s.theta, training_loss(s), 0.0}};
  while (run_iteration(s, cleaner)) {
    const HistoryPoint& h = s.history.back();
    out.push_back({h.records_cleaned, s.theta, h.training_loss, h.wall_ms});
  }
  return out;
}

inline Trajectory active_learning_run(const DatasetView& data, const ModelSpec& spec, const UpdateConfig& cfg,
                                      std::uint64_t seed) {
  if (!spec.is_classifier()) throw Error("active learning needs a classification model");
  return progressive_run(data, spec, cfg, PlanKind::uncertainty, Detector{}, seed);
}

namespace detail {

inline std::vector<std::int64_t> shuffled_ids(const DatasetView& data, std::uint64_t seed) {
  std::vector<std::int64_t> ids;
  for (const Record& r : data.records()) ids.push_back(r.id);
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
  return ids;
}

inline Record cleaned_copy(const Record& r) {
  if (!r.has_ground_truth()) throw Error("record " + std::to_string(r.id) + " has no ground truth");
  Record c = r;
  c.x = *r.clean_x;
  c.y = *r.clean_y;
  return c;
}

}  // namespace detail

/// Train-from-scratch on a uniform cleaned sample, one model per checkpoint.
/// Samples are nested prefixes of one seeded permutation.
inline Trajectory sampleclean_run(const DatasetView& data, const ModelSpec& spec,
                                  const std::vector<std::size_t>& checkpoints, std::uint64_t seed) {
  const auto ids = detail::shuffled_ids(data, seed);
  Trajectory out;
  for (std::size_t c : checkpoints) {
    const std::size_t m = std::min(c, ids.size());
    if (m == 0) continue;
    std::vector<Record> sample;
    for (std::size_t i = 0; i < m; ++i) sample.push_back(detail::cleaned_copy(data.record(ids[i])));
    const auto refs = example_refs(sample);
    Theta theta = train_full(spec, refs);
    out.push_back({m, theta, mean_loss(spec, refs, theta), 0.0});
  }
  return out;
}

/// Cleans random batches in place (only detector-flagged records with a
/// detector) and retrains on the whole mixed relation after each batch.
inline Trajectory partial_cleaning_run(const DatasetView& data, const ModelSpec& spec, const UpdateConfig& cfg,
                                       std::uint64_t seed, bool with_detector) {
  std::vector<Record> current = data.records();
  std::vector<std::int64_t> order = detail::shuffled_ids(data, seed);
  if (with_detector) {
    std::vector<std::int64_t> flagged;
    for (std::int64_t id : order)
      if (known_detect(data.record(id)).is_dirty) flagged.push_back(id);
    order = std::move(flagged);
  }
  auto train = [&] {
    const auto refs = example_refs(current);
    Theta th = train_full(spec, refs);
    return TrajectoryPoint{0, th, mean_loss(spec, refs, th), 0.0};
  };
  Trajectory out{train()};
  std::size_t used = 0;
  while (used < cfg.budget && used < order.size()) {
    const std::size_t take = std::min({cfg.batch_size, cfg.budget - used, order.size() - used});
    for (std::size_t i = used; i < used + take; ++i) {
      const std::size_t pos = data.position(order[i]);
      current[pos] = detail::cleaned_copy(current[pos]);
    }
    used += take;
    TrajectoryPoint p = train();
    p.records_cleaned = used;
    out.push_back(std::move(p));
  }
  return out;
}

inline Theta no_clean_run(const DatasetView& data, const ModelSpec& spec) {
  return train_full(spec, example_refs(data));
}

inline Theta full_clean_run(const DatasetView& data, const ModelSpec& spec) {
  std::vector<Record> clean;
  for (const Record& r : data.records()) clean.push_back(detail::cleaned_copy(r));
  return train_full(spec, example_refs(clean));
}

/// Trains on the records the detector does not flag.
inline Theta discard_dirty_run(const DatasetView& data, const ModelSpec& spec, const Detector& detector) {
  if (detector.mode == DetectorMode::none) throw Error("discard needs a detector");
  std::vector<Record> keep;
  for (const Record& r : data.records())
    if (!detector.detect(r).is_dirty) keep.push_back(r);
  if (keep.empty()) throw Error("discard: every record is flagged dirty");
  return train_full(spec, example_refs(keep));
}

// ---------------------------------------------------------------------------
// Robust logistic regression

/// T = 4 sqrt(ln p / n + ln n / n).
inline double robust_threshold(std::size_t p, std::size_t n) {
  if (p < 1 || n < 1) throw Error("robust_threshold: p and n must be >= 1");
  const double dn = static_cast<double>(n);
  return 4.0 * std::sqrt(std::log(static_cast<double>(p)) / dn + std::log(dn) / dn);
}

/// Features are centered by their median and scaled so the robust standard
/// deviation (1.4826 MAD) of each coordinate is 1/sqrt(n); a typical inlier
/// then has norm about sqrt(p/n), below T. Constant-valued coordinates (for
/// example an intercept) are left out of the norm.
inline std::vector<bool> robust_inliers(const std::vector<Record>& train, std::size_t d) {
  const std::size_t n = train.size();
  std::vector<double> center(d, 0.0), scale_(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> col;
    for (const Record& r : train) col.push_back(r.x[j]);
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size();
      return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
    };
    center[j] = median(col);
    for (double& v : col) v = std::abs(v - center[j]);
    scale_[j] = 1.4826 * median(col);
  }
  const double t = robust_threshold(d, n);
  const double unit = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<bool> keep(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (!(scale_[j] > 0)) continue;
      const double z = (train[i].x[j] - center[j]) / scale_[j] * unit;
      sq += z * z;
    }
    keep[i] = std::sqrt(sq) < t;
  }
  return keep;
}

inline Theta robust_logreg(const std::vector<Record>& train, const ModelSpec& spec) {
  if (spec.loss != LossKind::logistic_regression) throw Error("robust_logreg needs a logistic_regression model");
  if (train.empty()) throw Error("robust_logreg: no training records");
  const auto keep = robust_inliers(train, spec.d);
  std::vector<Record> kept;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (keep[i]) kept.push_back(train[i]);
  if (kept.empty()) throw Error("robust_logreg: every record exceeded the threshold");
  return train_full(spec, example_refs(kept));
}

}  // namespace progclean
