#pragma once

// Average dirty-minus-clean change statistics and the first-order corrected
// sampling weights built from them, plus the estimator comparison.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <utility>
#include <vector>

#include "progclean/common.hpp"
#include "progclean/dataset.hpp"
#include "progclean/detector.hpp"
#include "progclean/models.hpp"
#include "progclean/sampler.hpp"

namespace progclean {

enum class DeltaMode { apriori, adaptive };

/// Self-normalized weighted means of (dirty - clean), weights 1/p.
/// A priori mode keeps one accumulator per feature and label; adaptive mode
/// keeps a full difference vector per error class.
class DeltaStats {
 public:
  struct Accumulator {
    Vector sum_x, sum_y;    // weighted sums of the differences
    Vector weight_x, weight_y;
  };

  DeltaStats() = default;
  DeltaStats(DeltaMode mode, std::size_t d, std::size_t l) : mode_(mode), d_(d), l_(l) {
    features_ = fresh();
  }

  DeltaMode mode() const { return mode_; }
  std::size_t d() const { return d_; }
  std::size_t l() const { return l_; }
  const Accumulator& features() const { return features_; }
  const std::map<int, Accumulator>& classes() const { return classes_; }
  Accumulator& mutable_features() { return features_; }
  std::map<int, Accumulator>& mutable_classes() { return classes_; }

  void update(std::span<const double> dirty_x, std::span<const double> dirty_y, std::span<const double> clean_x,
              std::span<const double> clean_y, double p, const DetectorOutput& out) {
    if (!(p > 0.0)) throw Error("update_deltas: sampling probability must be > 0");
    if (dirty_x.size() != d_ || clean_x.size() != d_ || dirty_y.size() != l_ || clean_y.size() != l_)
      throw Error("update_deltas: dimension mismatch");
    const double w = 1.0 / p;
    if (mode_ == DeltaMode::apriori) {
      for (std::size_t i : out.features) {
        if (i >= d_) throw Error("update_deltas: feature index out of range");
        features_.sum_x[i] += w * (dirty_x[i] - clean_x[i]);
        features_.weight_x[i] += w;
      }
      for (std::size_t i : out.labels) {
        if (i >= l_) throw Error("update_deltas: label index out of range");
        features_.sum_y[i] += w * (dirty_y[i] - clean_y[i]);
        features_.weight_y[i] += w;
      }
      return;
    }
    if (out.error_class <= 0) return;
    auto [it, inserted] = classes_.try_emplace(out.error_class, fresh());
    Accumulator& acc = it->second;
    for (std::size_t i = 0; i < d_; ++i) {
      acc.sum_x[i] += w * (dirty_x[i] - clean_x[i]);
      acc.weight_x[i] += w;
    }
    for (std::size_t i = 0; i < l_; ++i) {
      acc.sum_y[i] += w * (dirty_y[i] - clean_y[i]);
      acc.weight_y[i] += w;
    }
  }

  /// (Delta_rx, Delta_ry) for a detector output; zero without evidence.
  std::pair<Vector, Vector> delta_vector(const DetectorOutput& out) const {
    Vector dx(d_, 0.0), dy(l_, 0.0);
    if (mode_ == DeltaMode::apriori) {
      for (std::size_t i : out.features)
        if (i < d_ && features_.weight_x[i] > 0) dx[i] = features_.sum_x[i] / features_.weight_x[i];
      for (std::size_t i : out.labels)
        if (i < l_ && features_.weight_y[i] > 0) dy[i] = features_.sum_y[i] / features_.weight_y[i];
      return {dx, dy};
    }
    auto it = classes_.find(out.error_class);
    if (out.error_class <= 0 || it == classes_.end()) return {dx, dy};
    const Accumulator& acc = it->second;
    for (std::size_t i = 0; i < d_; ++i)
      if (acc.weight_x[i] > 0) dx[i] = acc.sum_x[i] / acc.weight_x[i];
    for (std::size_t i = 0; i < l_; ++i)
      if (acc.weight_y[i] > 0) dy[i] = acc.sum_y[i] / acc.weight_y[i];
    return {dx, dy};
  }

  bool operator==(const DeltaStats& o) const {
    auto same = [](const Accumulator& a, const Accumulator& b) {
      return a.sum_x == b.sum_x && a.sum_y == b.sum_y && a.weight_x == b.weight_x && a.weight_y == b.weight_y;
    };
    if (mode_ != o.mode_ || d_ != o.d_ || l_ != o.l_ || !same(features_, o.features_)) return false;
    if (classes_.size() != o.classes_.size()) return false;
    for (const auto& [k, v] : classes_) {
      auto it = o.classes_.find(k);
      if (it == o.classes_.end() || !same(v, it->second)) return false;
    }
    return true;
  }

 private:
  Accumulator fresh() const { return {Vector(d_, 0.0), Vector(l_, 0.0), Vector(d_, 0.0), Vector(l_, 0.0)}; }

  DeltaMode mode_ = DeltaMode::apriori;
  std::size_t d_ = 0, l_ = 0;
  Accumulator features_;
  std::map<int, Accumulator> classes_;
};

struct CleanedObservation {
  const Record* dirty = nullptr;  // values before cleaning
  Vector clean_x, clean_y;
  double p = 1.0;
  DetectorOutput detected;
};

inline DeltaStats update_deltas(DeltaStats stats, const std::vector<CleanedObservation>& cleaned) {
  for (const CleanedObservation& c : cleaned) stats.update(c.dirty->x, c.dirty->y, c.clean_x, c.clean_y, c.p, c.detected);
  return stats;
}

/// First-order estimate of a record's clean gradient from its dirty values.
/// With the Jacobian form this is g(d) - M_x.Delta_x - M_y.Delta_y, since
/// Delta is dirty minus clean. The literal form adds the correction instead,
/// mirroring the published expression with its closed-form matrices.
inline Vector corrected_gradient(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                                 std::span<const double> theta, const Vector& dx, const Vector& dy,
                                 TaylorForm form = TaylorForm::jacobian) {
  Vector g = gradient_vector(spec, x, y, theta);
  bool any = false;
  for (double v : dx) any = any || v != 0.0;
  for (double v : dy) any = any || v != 0.0;
  if (!any) return g;
  const TaylorMatrices m = taylor_matrices(spec, x, y, theta, form);
  const double sign = form == TaylorForm::jacobian ? -1.0 : 1.0;
  if (spec.is_aggregate()) {
    // Aggregates read a single value: the first feature.
    g[0] += sign * m.mx(0, 0) * dx[0];
    return g;
  }
  axpy(sign, m.mx * dx, g);
  if (!dy.empty() && m.my.cols() == dy.size()) axpy(sign, m.my * dy, g);
  return g;
}

inline double corrected_weight(const Record& r, const Theta& theta, const ModelSpec& spec, const DeltaStats& stats,
                               const DetectorOutput& out, TaylorForm form = TaylorForm::jacobian) {
  const auto [dx, dy] = stats.delta_vector(out);
  const double w = norm2(corrected_gradient(spec, r.x, r.y, theta.values, dx, dy, form));
  return std::isfinite(w) ? w : 0.0;
}

inline SamplingPlan estimator_plan(const DatasetView& data, const std::set<std::int64_t>& dirty, const Theta& theta,
                                   const ModelSpec& spec, const DeltaStats& stats, const Detector& detector,
                                   double floor_epsilon = 0.1, TaylorForm form = TaylorForm::jacobian) {
  std::vector<std::int64_t> ids(dirty.begin(), dirty.end());
  Vector w;
  w.reserve(ids.size());
  for (std::int64_t id : ids) {
    const Record& r = data.record(id);
    w.push_back(corrected_weight(r, theta, spec, stats, detector.detect(r), form));
  }
  return weighted_plan(ids, w, floor_epsilon);
}

// ---------------------------------------------------------------------------
// Estimator comparison

struct EstimatorErrors {
  std::size_t cleaned_count = 0;
  double taylor = 0.0;
  double avg_gradient = 0.0;
  double avg_feature = 0.0;
  double regression = 0.0;
};

/// Relative L2 error of four estimates of the mean clean gradient over the
/// whole relation, after cleaning nested prefixes of a seeded permutation of `dirty`. Cleaned
/// records contribute exact gradients. Taylor, average-feature-change and the
/// regression fit correct only the uncleaned records of `dirty`; the
/// average-gradient estimate adds the mean observed change to every uncleaned
/// record, known-clean ones included.
inline std::vector<EstimatorErrors> compare_estimators(const DatasetView& data, const std::set<std::int64_t>& dirty,
                                                       const Theta& theta, const ModelSpec& spec,
                                                       const std::vector<std::size_t>& grid, std::uint64_t seed) {
  std::vector<std::int64_t> ids(dirty.begin(), dirty.end());
  if (ids.empty()) throw Error("compare_estimators: no dirty records");
  const std::size_t n = ids.size();
  const std::size_t p = theta.size();
  std::vector<Vector> g_dirty(n), g_clean(n);
  std::vector<DetectorOutput> det(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Record& r = data.record(ids[i]);
    if (!r.has_ground_truth()) throw Error("compare_estimators: record " + std::to_string(r.id) + " has no ground truth");
    g_dirty[i] = gradient_vector(spec, r.x, r.y, theta.values);
    g_clean[i] = gradient_vector(spec, *r.clean_x, *r.clean_y, theta.values);
    det[i] = known_detect(r);
  }
  const double inv_total = 1.0 / static_cast<double>(data.size());
  Vector rest(p, 0.0);  // summed gradients of records outside `dirty`
  std::size_t rest_count = 0;
  for (const Record& r : data.records()) {
    if (dirty.count(r.id)) continue;
    ++rest_count;
    axpy(1.0, gradient_vector(spec, r.x, r.y, theta.values), rest);
  }
  Vector truth = rest;
  for (const Vector& g : g_clean) axpy(1.0, g, truth);
  scale(truth, inv_total);
  const double truth_norm = std::max(norm2(truth), 1e-300);

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  std::vector<EstimatorErrors> out;
  for (std::size_t m0 : grid) {
    const std::size_t m = std::min(m0, n);
    std::vector<char> in_sample(n, 0);
    for (std::size_t s = 0; s < m; ++s) in_sample[order[s]] = 1;

    DeltaStats stats(DeltaMode::apriori, data.d(), data.l());
    Vector mean_shift(p, 0.0);
    for (std::size_t s = 0; s < m; ++s) {
      const std::size_t i = order[s];
      const Record& r = data.record(ids[i]);
      stats.update(r.x, r.y, *r.clean_x, *r.clean_y, 1.0, det[i]);
      for (std::size_t j = 0; j < p; ++j) mean_shift[j] += (g_clean[i][j] - g_dirty[i][j]) / static_cast<double>(m);
    }
    // Per-component least squares g_c ~ a + b g_d; shift only when degenerate.
    Vector a(p, 0.0), b(p, 1.0);
    for (std::size_t j = 0; j < p; ++j) {
      double mx = 0, my = 0;
      for (std::size_t s = 0; s < m; ++s) {
        mx += g_dirty[order[s]][j];
        my += g_clean[order[s]][j];
      }
      if (m == 0) continue;
      mx /= static_cast<double>(m);
      my /= static_cast<double>(m);
      double sxx = 0, sxy = 0;
      for (std::size_t s = 0; s < m; ++s) {
        const double u = g_dirty[order[s]][j] - mx;
        sxx += u * u;
        sxy += u * (g_clean[order[s]][j] - my);
      }
      if (m >= 2 && sxx > 1e-12 * (1.0 + mx * mx) * static_cast<double>(m)) b[j] = sxy / sxx;
      a[j] = my - b[j] * mx;
    }

    Vector est_t = rest, est_g = rest, est_f = rest, est_r = rest;
    axpy(static_cast<double>(rest_count), mean_shift, est_g);
    for (std::size_t i = 0; i < n; ++i) {
      if (in_sample[i]) {
        for (Vector* e : {&est_t, &est_g, &est_f, &est_r}) axpy(1.0, g_clean[i], *e);
        continue;
      }
      const Record& r = data.record(ids[i]);
      const auto [dx, dy] = stats.delta_vector(det[i]);
      axpy(1.0, corrected_gradient(spec, r.x, r.y, theta.values, dx, dy), est_t);
      for (std::size_t j = 0; j < p; ++j) {
        est_g[j] += g_dirty[i][j] + mean_shift[j];
        est_r[j] += a[j] + b[j] * g_dirty[i][j];
      }
      Vector fx = r.x, fy = r.y;
      for (std::size_t j = 0; j < fx.size(); ++j) fx[j] -= dx[j];
      for (std::size_t j = 0; j < fy.size(); ++j) fy[j] -= dy[j];
      axpy(1.0, gradient_vector(spec, fx, fy, theta.values), est_f);
    }
    auto err = [&](Vector e) {
      scale(e, inv_total);
      return distance(e, truth) / truth_norm;
    };
    out.push_back({m0, err(est_t), err(est_g), err(est_f), err(est_r)});
  }
  return out;
}

inline void write_estimator_csv(std::ostream& os, const std::vector<EstimatorErrors>& rows) {
  os << "cleaned_count,taylor,avg_gradient,avg_feature,regression\n";
  for (const EstimatorErrors& e : rows)
    os << e.cleaned_count << ',' << format_double(e.taylor) << ',' << format_double(e.avg_gradient) << ','
       << format_double(e.avg_feature) << ',' << format_double(e.regression) << '\n';
}

}  // namespace progclean
