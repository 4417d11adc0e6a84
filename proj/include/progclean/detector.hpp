#pragma once

// Dirty-record detection: rule evaluation (a priori), ground-truth
// bookkeeping for simulations, and an adaptive one-vs-all classifier over
// analyst-tagged error classes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "progclean/common.hpp"
#include "progclean/dataset.hpp"
#include "progclean/models.hpp"

namespace progclean {

struct DetectorOutput {
  bool is_dirty = false;
  std::set<std::size_t> features;  // f_r
  std::set<std::size_t> labels;    // l_r
  int error_class = 0;

  static DetectorOutput clean() { return {}; }
  bool operator==(const DetectorOutput&) const = default;
};

/// One constraint on a feature or label column. A value violates the rule
/// when it is non-finite, outside [min, max], or outside a non-empty allowed
/// set, or when the optional custom predicate returns false.
struct Rule {
  std::size_t index = 0;
  bool on_label = false;
  std::optional<double> min;
  std::optional<double> max;
  std::set<double> allowed;
  std::function<bool(double)> predicate;
  std::string name;

  bool violated(double v) const {
    if (!std::isfinite(v)) return true;
    if (min && v < *min) return true;
    if (max && v > *max) return true;
    if (!allowed.empty() && !allowed.count(v)) return true;
    if (predicate && !predicate(v)) return true;
    return false;
  }
};

using RuleSet = std::vector<Rule>;

inline DetectorOutput apriori_detect(const Record& r, const RuleSet& rules) {
  DetectorOutput out;
  for (const Rule& rule : rules) {
    const Vector& col = rule.on_label ? r.y : r.x;
    if (rule.index >= col.size()) throw Error("rule '" + rule.name + "' refers to a missing column");
    if (!rule.violated(col[rule.index])) continue;
    out.is_dirty = true;
    (rule.on_label ? out.labels : out.features).insert(rule.index);
  }
  if (out.is_dirty) out.error_class = 1;
  return out;
}

/// Flags records whose observed values differ from their stored ground truth.
/// Used by simulations as an exact a priori detector.
inline DetectorOutput known_detect(const Record& r) {
  DetectorOutput out;
  if (!r.has_ground_truth()) return out;
  for (std::size_t i = 0; i < r.x.size(); ++i)
    if (r.x[i] != (*r.clean_x)[i]) out.features.insert(i);
  for (std::size_t i = 0; i < r.y.size(); ++i)
    if (r.y[i] != (*r.clean_y)[i]) out.labels.insert(i);
  out.is_dirty = !out.features.empty() || !out.labels.empty();
  if (out.is_dirty) out.error_class = r.error_class.value_or(1);
  return out;
}

// ---------------------------------------------------------------------------
// Adaptive detector

struct ClassifierOptions {
  double l2_reg = 1e-3;  // per-example regularization share
  double tolerance = 1e-4;
  std::size_t max_epochs = 2000;
  bool balance_classes = true;
  // Adds squared standardized feature deviations so that values pulled
  // toward (or pushed away from) a column's center are linearly detectable.
  bool quadratic = true;
  // Adds log(1 + number of other records sharing the exact value) per feature
  // column, counted over the observed relation. Imputed defaults repeat.
  bool duplicate_counts = true;
};

/// Exact-value frequencies per feature column of the observed relation.
struct ColumnCounts {
  std::vector<std::map<double, std::size_t>> counts;

  static ColumnCounts of(const std::vector<const Record*>& records, std::size_t d) {
    ColumnCounts c;
    c.counts.resize(d);
    for (const Record* r : records)
      for (std::size_t j = 0; j < d && j < r->x.size(); ++j) ++c.counts[j][r->x[j]];
    return c;
  }

  double repeats(std::size_t column, double value) const {
    if (column >= counts.size()) return 0.0;
    auto it = counts[column].find(value);
    return it == counts[column].end() || it->second < 1 ? 0.0 : static_cast<double>(it->second - 1);
  }
};

/// One-vs-all linear SVM over standardized record features [z_x, z_y, 1],
/// optionally extended with z_x^2 and exact-value repeat counts; moments are
/// taken from the training set.
/// Classes never seen in training never win.
class ErrorClassifier {
 public:
  ErrorClassifier() = default;

  std::size_t num_classes() const { return classes_; }
  bool trained() const { return !weights_.empty(); }
  bool has_class(int c) const {
    return c >= 0 && static_cast<std::size_t>(c) < present_.size() && present_[static_cast<std::size_t>(c)];
  }
  bool any_dirty_class() const {
    for (std::size_t c = 1; c < present_.size(); ++c)
      if (present_[c]) return true;
    return false;
  }

  void set_context(std::shared_ptr<const ColumnCounts> counts) { counts_ = std::move(counts); }
  const std::shared_ptr<const ColumnCounts>& context() const { return counts_; }

  Vector featurize(const Record& r) const {
    Vector f(r.x);
    f.insert(f.end(), r.y.begin(), r.y.end());
    if (use_counts_ && counts_)
      for (std::size_t j = 0; j < r.x.size(); ++j) f.push_back(std::log1p(counts_->repeats(j, r.x[j])));
    return f;
  }

  /// Fits classes 0..u. With no examples the classifier predicts clean.
  void train(const std::vector<std::pair<Record, int>>& labeled, std::size_t u, const ClassifierOptions& opt = {}) {
    classes_ = u + 1;
    weights_.clear();
    present_.assign(classes_, false);
    for (const auto& [r, c] : labeled) {
      if (c < 0 || static_cast<std::size_t>(c) > u)
        throw Error("adaptive_train: label " + std::to_string(c) + " outside 0.." + std::to_string(u));
      present_[static_cast<std::size_t>(c)] = true;
    }
    if (labeled.empty()) return;
    use_counts_ = opt.duplicate_counts;

    const std::size_t raw = featurize(labeled.front().first).size();
    mean_.assign(raw, 0.0);
    inv_std_.assign(raw, 1.0);
    std::vector<Vector> rows;
    for (const auto& [r, c] : labeled) {
      rows.push_back(featurize(r));
      if (rows.back().size() != raw) throw Error("adaptive_train: records disagree in dimension");
    }
    for (const Vector& f : rows) axpy(1.0, f, mean_);
    scale(mean_, 1.0 / static_cast<double>(rows.size()));
    for (std::size_t j = 0; j < raw; ++j) {
      double var = 0.0;
      for (const Vector& f : rows) var += (f[j] - mean_[j]) * (f[j] - mean_[j]);
      var /= static_cast<double>(rows.size());
      inv_std_[j] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    quadratic_ = opt.quadratic ? labeled.front().first.x.size() : 0;
    std::vector<Vector> z;
    for (const Vector& f : rows) z.push_back(standardize(f));
    std::vector<ExampleRef> refs;
    for (const Vector& v : z) refs.push_back({v, {}});

    std::vector<std::size_t> counts(classes_, 0);
    for (const auto& [r, c] : labeled) ++counts[static_cast<std::size_t>(c)];
    weights_.assign(classes_, Vector());
    for (std::size_t k = 0; k < classes_; ++k) {
      if (!present_[k]) continue;
      Vector signs, example_weights;
      const double n = static_cast<double>(labeled.size());
      const double pos = static_cast<double>(counts[k]);
      for (const auto& [r, c] : labeled) {
        const bool in = static_cast<std::size_t>(c) == k;
        signs.push_back(in ? 1.0 : -1.0);
        // Balanced weighting: each side of the split carries half the total weight.
        if (opt.balance_classes && pos < n) example_weights.push_back(in ? n / (2.0 * pos) : n / (2.0 * (n - pos)));
        else example_weights.push_back(1.0);
      }
      weights_[k] = detail::train_hinge_dual(refs, signs, opt.l2_reg, z[0].size(), opt.tolerance, opt.max_epochs,
                                             example_weights);
    }
  }

  /// One-vs-all scores; absent classes score -infinity.
  Vector scores(const Record& r) const {
    Vector s(classes_, -std::numeric_limits<double>::infinity());
    if (!trained()) return s;
    const Vector f = standardize(featurize(r));
    for (std::size_t k = 0; k < classes_; ++k)
      if (present_[k]) s[k] = dot(weights_[k], f);
    return s;
  }

  /// Predicted class; cold start and ties resolve to the lowest index.
  int predict(const Record& r, double margin_threshold = 0.0) const {
    if (!trained() || !any_dirty_class()) return 0;
    const Vector s = scores(r);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < classes_; ++k)
      if (present_[k] && s[k] > best_score) {
        best = k;
        best_score = s[k];
      }
    if (best == 0) return 0;
    return best_score - s[0] > margin_threshold ? static_cast<int>(best) : 0;
  }

  // Plain-data export for snapshots.
  struct Parameters {
    std::size_t classes = 0;
    std::vector<bool> present;
    std::vector<Vector> weights;
    Vector mean, inv_std;
  };
  Parameters parameters() const { return {classes_, present_, weights_, mean_, inv_std_}; }

 private:
  Vector standardize(const Vector& f) const {
    Vector z(f.size() + quadratic_ + 1, 1.0);
    for (std::size_t j = 0; j < f.size(); ++j) z[j] = (f[j] - mean_[j]) * inv_std_[j];
    for (std::size_t j = 0; j < quadratic_; ++j) z[f.size() + j] = z[j] * z[j];
    return z;
  }

  std::size_t quadratic_ = 0;
  bool use_counts_ = false;
  std::shared_ptr<const ColumnCounts> counts_;
  std::size_t classes_ = 1;
  std::vector<bool> present_;
  std::vector<Vector> weights_;
  Vector mean_, inv_std_;
};

inline ErrorClassifier adaptive_train(const std::vector<std::pair<Record, int>>& labeled, std::size_t u,
                                      const ClassifierOptions& opt = {}) {
  ErrorClassifier c;
  c.train(labeled, u, opt);
  return c;
}

inline DetectorOutput adaptive_detect(const Record& r, const ErrorClassifier& classifier,
                                      double margin_threshold = 0.0) {
  DetectorOutput out;
  out.error_class = classifier.predict(r, margin_threshold);
  out.is_dirty = out.error_class != 0;
  return out;
}

// ---------------------------------------------------------------------------
// Detector facade used by the cleaning loop

enum class DetectorMode { none, rules, known, adaptive };

inline std::string to_string(DetectorMode m) {
  switch (m) {
    case DetectorMode::none: return "none";
    case DetectorMode::rules: return "rules";
    case DetectorMode::known: return "known";
    case DetectorMode::adaptive: return "adaptive";
  }
  return "?";
}

inline DetectorMode parse_detector_mode(const std::string& s) {
  for (DetectorMode m : {DetectorMode::none, DetectorMode::rules, DetectorMode::known, DetectorMode::adaptive})
    if (to_string(m) == s) return m;
  throw Error("unknown detector mode '" + s + "'");
}

struct Detector {
  DetectorMode mode = DetectorMode::none;
  RuleSet rules;
  ErrorClassifier classifier;
  double margin_threshold = 0.0;
  ClassifierOptions classifier_options;

  /// Detection on a record's current values. With no detector every record
  /// is reported dirty with no feature hints.
  DetectorOutput detect(const Record& r) const {
    switch (mode) {
      case DetectorMode::none: return {true, {}, {}, 0};
      case DetectorMode::rules: return apriori_detect(r, rules);
      case DetectorMode::known: return known_detect(r);
      case DetectorMode::adaptive: return adaptive_detect(r, classifier, margin_threshold);
    }
    return {};
  }

  /// In adaptive mode the classifier has nothing to go on until a dirty
  /// class has been tagged; until then every uncleaned record is a candidate.
  bool falls_back_to_all() const {
    return mode == DetectorMode::none || (mode == DetectorMode::adaptive && !classifier.any_dirty_class());
  }
};

/// R_dirty: uncleaned records the detector flags. Cleaned records never re-enter.
inline std::set<std::int64_t> partition(const DatasetView& data, const Detector& detector,
                                        const std::set<std::int64_t>& cleaned) {
  std::set<std::int64_t> dirty;
  const bool all = detector.falls_back_to_all();
  for (const Record& r : data.records()) {
    if (cleaned.count(r.id)) continue;
    if (all || detector.detect(r).is_dirty) dirty.insert(r.id);
  }
  return dirty;
}

}  // namespace progclean
