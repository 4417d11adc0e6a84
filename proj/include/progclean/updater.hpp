#pragma once

// The progressive update loop: a reweighted gradient over newly cleaned
// records combined with the exact gradient over the clean partition, one SGD
// step per cleaned batch.

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "progclean/common.hpp"
#include "progclean/dataset.hpp"
#include "progclean/detector.hpp"
#include "progclean/estimator.hpp"
#include "progclean/models.hpp"
#include "progclean/sampler.hpp"

namespace progclean {

enum class StepMode { inverse_time, inverse_scaling, constant };

inline std::string to_string(StepMode m) {
  switch (m) {
    case StepMode::inverse_time: return "inverse_time";
    case StepMode::inverse_scaling: return "inverse_scaling";
    case StepMode::constant: return "constant";
  }
  return "?";
}

inline StepMode parse_step_mode(const std::string& s) {
  for (StepMode m : {StepMode::inverse_time, StepMode::inverse_scaling, StepMode::constant})
    if (to_string(m) == s) return m;
  throw Error("unknown step mode '" + s + "'");
}

/// gamma_t = gamma0 / t (inverse_time), gamma0 / (b t) (inverse_scaling), or gamma0.
struct StepSchedule {
  double gamma0 = 0.1;
  StepMode mode = StepMode::inverse_time;

  double step(std::size_t t, std::size_t b) const {
    if (!(gamma0 > 0.0)) throw Error("step schedule: gamma0 must be > 0");
    if (t == 0) throw Error("step schedule: iterations are numbered from 1");
    switch (mode) {
      case StepMode::inverse_time: return gamma0 / static_cast<double>(t);
      case StepMode::inverse_scaling: return gamma0 / (static_cast<double>(b) * static_cast<double>(t));
      case StepMode::constant: return gamma0;
    }
    return gamma0;
  }
};

struct UpdateConfig {
  std::size_t batch_size = 50;
  std::size_t budget = 500;
  StepSchedule schedule;
  double floor_epsilon = 0.1;
  TaylorForm taylor_form = TaylorForm::jacobian;

  void validate() const {
    if (batch_size < 1) throw Error("batch size must be >= 1");
    if (budget < batch_size) throw Error("budget must be >= batch size");
    if (!(schedule.gamma0 > 0.0)) throw Error("gamma0 must be > 0");
    if (!(floor_epsilon >= 0.0 && floor_epsilon <= 1.0)) throw Error("floor_epsilon must be in [0,1]");
  }
};

/// One draw of the batch: the cleaned values and the probability it was drawn with.
struct SampledRecord {
  Vector x;
  Vector y;
  double p = 1.0;
};

/// g_S = (1 / (|S| n_dirty)) sum 1/p_i grad(clean_i), an unbiased estimate of
/// the mean clean gradient over R_dirty.
inline GradientEstimate estimate_gs(const std::vector<SampledRecord>& sample, const Theta& theta,
                                    const ModelSpec& spec, std::size_t n_dirty) {
  Vector g(theta.size(), 0.0);
  if (sample.empty() || n_dirty == 0) return {g, Provenance::sampled};
  for (const SampledRecord& s : sample) {
    if (!(s.p > 0.0)) throw Error("estimate_gs: sampling probability must be > 0");
    axpy(1.0 / s.p, gradient_vector(spec, s.x, s.y, theta.values), g);
  }
  scale(g, 1.0 / (static_cast<double>(sample.size()) * static_cast<double>(n_dirty)));
  return {g, Provenance::sampled};
}

inline GradientEstimate compute_gc(std::span<const ExampleRef> clean, const Theta& theta, const ModelSpec& spec) {
  return {mean_gradient(spec, clean, theta), Provenance::exact};
}

inline Theta combine_and_step(const Theta& theta, const Vector& g_s, const Vector& g_c, std::size_t n_dirty,
                              std::size_t n_clean, std::size_t t, const UpdateConfig& cfg) {
  const std::size_t n = n_dirty + n_clean;
  if (n == 0) throw Error("combine_and_step: empty relation");
  if (t == 0) throw Error("combine_and_step: iterations are numbered from 1");
  const double alpha = static_cast<double>(n_dirty) / static_cast<double>(n);
  const double beta = static_cast<double>(n_clean) / static_cast<double>(n);
  const double gamma = cfg.schedule.step(t, cfg.batch_size);
  Theta next = theta;
  for (std::size_t i = 0; i < next.size(); ++i) {
    double g = 0.0;
    if (alpha > 0) g += alpha * g_s[i];
    if (beta > 0) g += beta * g_c[i];
    next.values[i] -= gamma * g;
  }
  if (!all_finite(next.values))
    throw Error("update produced non-finite parameters; try a smaller gamma0");
  return next;
}

// ---------------------------------------------------------------------------
// Session state

enum class PlanKind { uniform, dirty_gradient, oracle, estimator, uncertainty };

inline std::string to_string(PlanKind k) {
  switch (k) {
    case PlanKind::uniform: return "uniform";
    case PlanKind::dirty_gradient: return "dirty_gradient";
    case PlanKind::oracle: return "oracle";
    case PlanKind::estimator: return "estimator";
    case PlanKind::uncertainty: return "uncertainty";
  }
  return "?";
}

inline PlanKind parse_plan_kind(const std::string& s) {
  for (PlanKind k : {PlanKind::uniform, PlanKind::dirty_gradient, PlanKind::oracle, PlanKind::estimator,
                     PlanKind::uncertainty})
    if (to_string(k) == s) return k;
  throw Error("unknown plan '" + s + "'");
}

enum class SessionStatus { active, awaiting_batch, done };

inline std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::awaiting_batch: return "awaiting_batch";
    case SessionStatus::done: return "done";
  }
  return "?";
}

struct HistoryPoint {
  std::size_t t = 0;
  std::size_t records_cleaned = 0;
  std::optional<double> relative_model_error;
  std::optional<double> test_accuracy;
  double training_loss = 0.0;
  double wall_ms = 0.0;
  std::size_t dirty_count = 0;
  std::size_t clean_count = 0;
  std::optional<double> detector_accuracy;
};

struct PendingDraw {
  std::int64_t id = 0;
  double p = 1.0;
};

struct Repair {
  std::int64_t id = 0;
  Vector x;
  Vector y;
  int error_class = 0;
};

/// Optional ground truth used only for reporting.
struct Evaluator {
  std::optional<Theta> reference;  // theta^(c)
  std::vector<Record> test;

  bool empty() const { return !reference && test.empty(); }
};

inline double relative_model_error(const Theta& theta, const Theta& theta_star) {
  const double denom = norm2(theta_star.values);
  if (!(denom > 0.0)) throw Error("relative_model_error: reference parameters are zero");
  if (theta.size() != theta_star.size()) throw Error("relative_model_error: dimension mismatch");
  return distance(theta.values, theta_star.values) / denom;
}

inline std::vector<ExampleRef> example_refs(const std::vector<Record>& records) {
  std::vector<ExampleRef> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back({r.x, r.y});
  return out;
}

inline std::vector<ExampleRef> example_refs(const DatasetView& data) { return example_refs(data.records()); }

inline std::vector<ExampleRef> example_refs(const DatasetView& data, const std::set<std::int64_t>& ids) {
  std::vector<ExampleRef> out;
  out.reserve(ids.size());
  for (std::int64_t id : ids) {
    const Record& r = data.record(id);
    out.push_back({r.x, r.y});
  }
  return out;
}

struct SessionState {
  std::string id;
  DatasetView data;  // current values: cleaned records hold their repairs
  ModelSpec spec;
  UpdateConfig cfg;
  PlanKind plan = PlanKind::dirty_gradient;
  Detector detector;
  DeltaStats stats;
  Theta theta;
  Rng rng;
  std::size_t budget_remaining = 0;
  std::size_t t = 1;  // index of the next step
  std::set<std::int64_t> cleaned;
  std::map<std::int64_t, Record> originals;  // pre-repair values of cleaned records
  std::map<std::int64_t, int> tags;
  std::vector<PendingDraw> pending;
  std::vector<HistoryPoint> history;
  SessionStatus status = SessionStatus::active;
  Evaluator evaluator;
  bool record_timing = false;

  std::size_t records_cleaned() const { return cleaned.size(); }
  std::size_t n_dirty() const { return data.dirty_ids().size(); }
  std::size_t n_clean() const { return data.clean_ids().size(); }
  bool exhausted() const { return budget_remaining == 0 || data.dirty_ids().empty(); }

  std::vector<std::int64_t> pending_ids() const {
    std::vector<std::int64_t> ids;
    std::set<std::int64_t> seen;
    for (const PendingDraw& d : pending)
      if (seen.insert(d.id).second) ids.push_back(d.id);
    return ids;
  }
};

namespace detail {

inline void refresh_partition(SessionState& s) { s.data.set_partition(partition(s.data, s.detector, s.cleaned)); }

inline void refresh_status(SessionState& s) {
  if (s.exhausted()) s.status = SessionStatus::done;
  else s.status = s.pending.empty() ? SessionStatus::active : SessionStatus::awaiting_batch;
}

/// Repeat counts over the relation as first observed: pre-repair values for
/// cleaned records, current values for the rest.
inline void refresh_context(SessionState& s) {
  if (s.detector.mode != DetectorMode::adaptive) return;
  std::vector<const Record*> observed;
  for (const Record& r : s.data.records()) {
    auto it = s.originals.find(r.id);
    observed.push_back(it == s.originals.end() ? &r : &it->second);
  }
  s.detector.classifier.set_context(std::make_shared<ColumnCounts>(ColumnCounts::of(observed, s.data.d())));
}

inline void retrain_classifier(SessionState& s) {
  if (s.detector.mode != DetectorMode::adaptive) return;
  if (!s.detector.classifier.context()) refresh_context(s);
  std::vector<std::pair<Record, int>> labeled;
  int u = 0;
  for (const auto& [id, tag] : s.tags) {
    labeled.emplace_back(s.originals.at(id), tag);
    u = std::max(u, tag);
  }
  s.detector.classifier.train(labeled, static_cast<std::size_t>(u), s.detector.classifier_options);
}

}  // namespace detail

inline double training_loss(const SessionState& s) {
  return mean_loss(s.spec, example_refs(s.data), s.theta);
}

/// Fraction of tagged records whose dirty values the classifier assigns to
/// their tag. Empty outside adaptive mode or before any tags.
inline std::optional<double> detector_accuracy(const SessionState& s) {
  if (s.detector.mode != DetectorMode::adaptive || s.tags.empty()) return std::nullopt;
  std::size_t hit = 0;
  for (const auto& [id, tag] : s.tags)
    if (s.detector.classifier.predict(s.originals.at(id), s.detector.margin_threshold) == tag) ++hit;
  return static_cast<double>(hit) / static_cast<double>(s.tags.size());
}

inline HistoryPoint snapshot_point(const SessionState& s, double wall_ms) {
  HistoryPoint h;
  h.t = s.t - 1;
  h.records_cleaned = s.records_cleaned();
  if (s.evaluator.reference) h.relative_model_error = relative_model_error(s.theta, *s.evaluator.reference);
  if (!s.evaluator.test.empty() && s.spec.is_classifier()) {
    const auto refs = example_refs(s.evaluator.test);
    h.test_accuracy = evaluate(s.spec, s.theta, refs).accuracy;
  }
  h.training_loss = training_loss(s);
  h.wall_ms = wall_ms;
  h.dirty_count = s.n_dirty();
  h.clean_count = s.n_clean();
  h.detector_accuracy = detector_accuracy(s);
  return h;
}

/// Starts a session from the dirty relation: theta^(0) = train_full on the
/// observed values, everything uncleaned, partition from the detector.
inline SessionState make_session(DatasetView data, const ModelSpec& spec, const UpdateConfig& cfg, PlanKind plan,
                                 Detector detector, std::uint64_t seed, Evaluator evaluator = {}) {
  cfg.validate();
  if (data.empty()) throw Error("cannot start a session on an empty dataset");
  if (plan == PlanKind::uncertainty && !spec.is_classifier())
    throw Error("uncertainty sampling needs a classification model");
  SessionState s;
  s.spec = spec;
  s.cfg = cfg;
  s.plan = plan;
  s.detector = std::move(detector);
  s.stats = DeltaStats(s.detector.mode == DetectorMode::adaptive ? DeltaMode::adaptive : DeltaMode::apriori, data.d(),
                       data.l());
  s.theta = train_full(spec, example_refs(data));
  s.data = std::move(data);
  s.rng = Rng(seed);
  s.budget_remaining = cfg.budget;
  s.evaluator = std::move(evaluator);
  detail::retrain_classifier(s);
  detail::refresh_partition(s);
  detail::refresh_status(s);
  return s;
}

inline SamplingPlan build_plan(const SessionState& s) {
  const auto& dirty = s.data.dirty_ids();
  const double eps = s.cfg.floor_epsilon;
  switch (s.plan) {
    case PlanKind::uniform: return uniform_plan(dirty);
    case PlanKind::dirty_gradient: return dirty_gradient_plan(s.data, dirty, s.theta, s.spec, eps);
    case PlanKind::oracle: return oracle_plan(s.data, dirty, s.theta, s.spec, eps);
    case PlanKind::estimator:
      return estimator_plan(s.data, dirty, s.theta, s.spec, s.stats, s.detector, eps, s.cfg.taylor_form);
    case PlanKind::uncertainty: return uncertainty_plan(s.data, dirty, s.theta, s.spec, eps);
  }
  throw Error("unknown plan");
}

/// Draws min(b, budget) records with replacement and marks them pending.
/// Returns the distinct ids in first-draw order.
inline std::vector<std::int64_t> propose_batch(SessionState& s) {
  if (!s.pending.empty()) throw Error("a batch is already pending");
  if (s.exhausted()) throw Error("session is done");
  const SamplingPlan plan = build_plan(s);
  const std::size_t count = std::min(s.cfg.batch_size, s.budget_remaining);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = plan.draw_index(s.rng);
    s.pending.push_back({plan.ids()[k], plan.probs()[k]});
  }
  s.status = SessionStatus::awaiting_batch;
  return s.pending_ids();
}

/// Applies repairs for exactly the pending ids: one SGD step, delta and
/// classifier updates, partition refresh and a history point. Validation
/// happens before any mutation, so a rejected call leaves the state intact.
inline HistoryPoint apply_batch(SessionState& s, const std::vector<Repair>& repairs) {
  const auto start = std::chrono::steady_clock::now();
  if (s.pending.empty()) throw Error("no batch is pending");
  const auto ids = s.pending_ids();
  std::map<std::int64_t, const Repair*> by_id;
  for (const Repair& r : repairs) {
    if (!s.data.contains(r.id)) throw Error("unknown record id " + std::to_string(r.id));
    if (!by_id.emplace(r.id, &r).second) throw Error("record " + std::to_string(r.id) + " repaired twice");
    if (r.x.size() != s.data.d() || r.y.size() != s.data.l())
      throw Error("record " + std::to_string(r.id) + ": dimension mismatch");
    if (!all_finite(r.x) || !all_finite(r.y)) throw Error("record " + std::to_string(r.id) + ": non-finite value");
    if (r.error_class < 0) throw Error("record " + std::to_string(r.id) + ": negative error class");
  }
  for (std::int64_t id : ids)
    if (!by_id.count(id)) throw Error("record " + std::to_string(id) + " from the pending batch is missing");
  if (by_id.size() != ids.size()) throw Error("repairs include records outside the pending batch");

  // An adaptive detector that has not seen a dirty class yet cannot split the
  // relation, so its first batches only collect tags: no step is taken and
  // the step counter does not advance.
  const bool bootstrap = s.detector.mode == DetectorMode::adaptive && s.detector.falls_back_to_all();
  Theta next = s.theta;
  if (!bootstrap) {
    const std::size_t n_dirty = s.n_dirty();
    const std::size_t n_clean = s.n_clean();
    std::vector<SampledRecord> sample;
    sample.reserve(s.pending.size());
    for (const PendingDraw& d : s.pending) sample.push_back({by_id[d.id]->x, by_id[d.id]->y, d.p});
    const GradientEstimate g_s = estimate_gs(sample, s.theta, s.spec, n_dirty);
    const GradientEstimate g_c = compute_gc(example_refs(s.data, s.data.clean_ids()), s.theta, s.spec);
    next = combine_and_step(s.theta, g_s.g, g_c.g, n_dirty, n_clean, s.t, s.cfg);
  }

  // Everything below is infallible for validated input.
  for (const PendingDraw& d : s.pending) {
    const Record& dirty = s.data.record(d.id);
    const Repair& rep = *by_id[d.id];
    DetectorOutput out;
    if (s.stats.mode() == DeltaMode::adaptive) {
      out.error_class = rep.error_class;
      out.is_dirty = rep.error_class != 0;
    } else {
      out = s.detector.detect(dirty);
    }
    s.stats.update(dirty.x, dirty.y, rep.x, rep.y, d.p, out);
  }
  for (std::int64_t id : ids) {
    Record& r = s.data.mutable_record(id);
    s.originals.emplace(id, r);
    s.tags[id] = by_id[id]->error_class;
    r.x = by_id[id]->x;
    r.y = by_id[id]->y;
    s.cleaned.insert(id);
  }
  s.theta = std::move(next);
  s.budget_remaining -= std::min(s.budget_remaining, ids.size());
  if (!bootstrap) ++s.t;
  s.pending.clear();
  detail::retrain_classifier(s);
  detail::refresh_partition(s);
  detail::refresh_status(s);
  double wall = 0.0;
  if (s.record_timing)
    wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  s.history.push_back(snapshot_point(s, wall));
  return s.history.back();
}

inline std::vector<Repair> oracle_repairs(const SessionState& s, CleaningFunction& cleaner) {
  std::vector<Repair> repairs;
  for (std::int64_t id : s.pending_ids()) {
    const Record c = cleaner.clean(s.data.record(id));
    repairs.push_back({id, c.x, c.y, c.error_class.value_or(0)});
  }
  return repairs;
}

/// One propose/clean/apply cycle. A done session is left unchanged.
inline bool run_iteration(SessionState& s, CleaningFunction& cleaner) {
  if (s.exhausted()) {
    s.status = SessionStatus::done;
    return false;
  }
  propose_batch(s);
  apply_batch(s, oracle_repairs(s, cleaner));
  return true;
}

inline void run_to_completion(SessionState& s, CleaningFunction& cleaner) {
  while (run_iteration(s, cleaner)) {
  }
}

/// Gradient descent on the fully cleaned relation (backtracking step) until
/// the gradient norm reaches `tolerance`. Returns the iterations used.
inline std::size_t polish(SessionState& s, double tolerance = 1e-6, std::size_t max_iterations = 100000) {
  if (!s.data.dirty_ids().empty()) throw Error("polish: dirty records remain");
  const auto refs = example_refs(s.data);
  double step = 1.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Vector g = mean_gradient(s.spec, refs, s.theta);
    const double gn = norm2(g);
    if (gn <= tolerance) return it;
    const double f0 = mean_loss(s.spec, refs, s.theta);
    Theta trial = s.theta;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < g.size(); ++i) trial.values[i] = s.theta.values[i] - step * g[i];
      if (mean_loss(s.spec, refs, trial) <= f0 - 0.5 * step * gn * gn) break;
      step *= 0.5;
    }
    s.theta = trial;
    step = std::min(1.0, step * 2.0);
  }
  return max_iterations;
}

}  // namespace progclean
