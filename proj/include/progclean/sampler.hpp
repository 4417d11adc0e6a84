#pragma once

// Sampling distributions over R_dirty and the variance utilities used to check
// the importance-sampling optimum.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <unordered_map>
#include <vector>

#include "progclean/common.hpp"
#include "progclean/dataset.hpp"
#include "progclean/models.hpp"

namespace progclean {

/// A normalized, strictly positive distribution over record ids.
class SamplingPlan {
 public:
  SamplingPlan() = default;

  SamplingPlan(std::vector<std::int64_t> ids, Vector probs, double floor_epsilon)
      : ids_(std::move(ids)), probs_(std::move(probs)), floor_epsilon_(floor_epsilon) {
    if (ids_.size() != probs_.size()) throw Error("SamplingPlan: ids and probabilities differ in length");
    cdf_.resize(probs_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      if (!(probs_[i] > 0.0) || !std::isfinite(probs_[i])) throw Error("SamplingPlan: probabilities must be > 0");
      acc += probs_[i];
      cdf_[i] = acc;
      position_.emplace(ids_[i], i);
    }
    if (!cdf_.empty()) cdf_.back() = 1.0;
  }

  const std::vector<std::int64_t>& ids() const { return ids_; }
  const Vector& probs() const { return probs_; }
  double floor_epsilon() const { return floor_epsilon_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  double prob(std::int64_t id) const {
    auto it = position_.find(id);
    if (it == position_.end()) throw Error("SamplingPlan: id " + std::to_string(id) + " not in plan");
    return probs_[it->second];
  }

  /// Index drawn by inverting the cumulative sum at one uniform variate.
  std::size_t draw_index(Rng& rng) const {
    if (empty()) throw Error("SamplingPlan: cannot draw from an empty plan");
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), ids_.size() - 1);
  }

  /// `count` ids drawn with replacement.
  std::vector<std::int64_t> draw(Rng& rng, std::size_t count) const {
    std::vector<std::int64_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(ids_[draw_index(rng)]);
    return out;
  }

 private:
  std::vector<std::int64_t> ids_;
  Vector probs_;
  Vector cdf_;
  std::unordered_map<std::int64_t, std::size_t> position_;
  double floor_epsilon_ = 0.0;
};

inline SamplingPlan uniform_plan(const std::vector<std::int64_t>& ids) {
  if (ids.empty()) throw Error("uniform_plan: no dirty records");
  return SamplingPlan(ids, Vector(ids.size(), 1.0 / static_cast<double>(ids.size())), 1.0);
}

inline SamplingPlan uniform_plan(const std::set<std::int64_t>& ids) {
  return uniform_plan(std::vector<std::int64_t>(ids.begin(), ids.end()));
}

/// p = (1 - eps) * w / sum(w) + eps / n. All-zero weights give the uniform plan.
inline SamplingPlan weighted_plan(const std::vector<std::int64_t>& ids, const Vector& weights,
                                  double floor_epsilon = 0.1) {
  if (ids.empty()) throw Error("weighted_plan: no dirty records");
  if (ids.size() != weights.size()) throw Error("weighted_plan: one weight per id required");
  if (!(floor_epsilon >= 0.0 && floor_epsilon <= 1.0)) throw Error("weighted_plan: floor_epsilon must be in [0,1]");
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w)) throw Error("weighted_plan: non-finite weight");
    if (w < 0.0) throw Error("weighted_plan: negative weight");
    total += w;
  }
  const double n = static_cast<double>(ids.size());
  if (!(total > 0.0)) return SamplingPlan(ids, Vector(ids.size(), 1.0 / n), floor_epsilon);
  Vector p(ids.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    p[i] = (1.0 - floor_epsilon) * (weights[i] / total) + floor_epsilon / n;
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  // With eps = 0, zero-weight records would get p = 0; keep them drawable.
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!(p[i] > 0.0)) p[i] = std::numeric_limits<double>::min();
  return SamplingPlan(ids, std::move(p), floor_epsilon);
}

namespace detail {

inline std::vector<std::int64_t> id_list(const std::set<std::int64_t>& ids) { return {ids.begin(), ids.end()}; }

}  // namespace detail

/// Expected-gradient-length heuristic: weights are dirty-gradient norms.
inline SamplingPlan dirty_gradient_plan(const DatasetView& data, const std::set<std::int64_t>& dirty,
                                        const Theta& theta, const ModelSpec& spec, double floor_epsilon = 0.1) {
  const auto ids = detail::id_list(dirty);
  Vector w;
  w.reserve(ids.size());
  for (std::int64_t id : ids) {
    const Record& r = data.record(id);
    w.push_back(norm2(gradient_vector(spec, r.x, r.y, theta.values)));
  }
  return weighted_plan(ids, w, floor_epsilon);
}

/// Weights are the norms of gradients at the true clean values.
inline SamplingPlan oracle_plan(const DatasetView& data, const std::set<std::int64_t>& dirty, const Theta& theta,
                                const ModelSpec& spec, double floor_epsilon = 0.1) {
  const auto ids = detail::id_list(dirty);
  Vector w;
  w.reserve(ids.size());
  for (std::int64_t id : ids) {
    const Record& r = data.record(id);
    if (!r.has_ground_truth()) throw Error("oracle_plan: record " + std::to_string(id) + " has no ground truth");
    w.push_back(norm2(gradient_vector(spec, *r.clean_x, *r.clean_y, theta.values)));
  }
  return weighted_plan(ids, w, floor_epsilon);
}

/// Uncertainty sampling: weight 1 / (|margin| + 1e-6), where the margin is
/// |theta.x| for binary models and the smallest |score| over classes otherwise.
inline SamplingPlan uncertainty_plan(const DatasetView& data, const std::set<std::int64_t>& dirty,
                                     const Theta& theta, const ModelSpec& spec, double floor_epsilon = 0.1) {
  if (!spec.is_classifier()) throw Error("uncertainty sampling needs a classification model");
  const auto ids = detail::id_list(dirty);
  Vector w;
  w.reserve(ids.size());
  for (std::int64_t id : ids) {
    const Record& r = data.record(id);
    double margin;
    if (spec.loss == LossKind::svm_multiclass) {
      margin = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < spec.classes; ++k)
        margin = std::min(margin, std::abs(margin_score(theta.values, r.x, k)));
    } else {
      margin = std::abs(dot(theta.values, r.x));
    }
    w.push_back(1.0 / (margin + 1e-6));
  }
  return weighted_plan(ids, w, floor_epsilon);
}

// ---------------------------------------------------------------------------
// Variance of the reweighted with-replacement mean estimator

namespace detail {

inline void check_variance_inputs(const std::vector<Vector>& values, const Vector& probs, std::size_t k) {
  if (values.empty()) throw Error("estimator_variance: no values");
  if (values.size() != probs.size()) throw Error("estimator_variance: one probability per value required");
  if (k == 0) throw Error("estimator_variance: sample size must be >= 1");
  for (double p : probs)
    if (!(p > 0.0)) throw Error("estimator_variance: probabilities must be > 0");
}

inline Vector population_mean(const std::vector<Vector>& values) {
  Vector mean(values[0].size(), 0.0);
  for (const Vector& v : values) axpy(1.0, v, mean);
  scale(mean, 1.0 / static_cast<double>(values.size()));
  return mean;
}

}  // namespace detail

/// E|mu_hat - mean|^2 where mu_hat = (1/k) sum_j a_{i_j} / (n p_{i_j}) over k
/// independent draws. Enumerates every draw sequence when n^k <= 2e5 and
/// otherwise averages 1e5 seeded Monte-Carlo batches.
inline double estimator_variance(const std::vector<Vector>& values, const Vector& probs, std::size_t k,
                                 std::uint64_t seed = 0) {
  detail::check_variance_inputs(values, probs, k);
  const std::size_t n = values.size();
  const std::size_t dim = values[0].size();
  const Vector mean = detail::population_mean(values);
  auto term = [&](std::size_t i, std::size_t j) {
    return values[i][j] / (static_cast<double>(n) * probs[i]);
  };

  double combos = 1.0;
  for (std::size_t s = 0; s < k && combos <= 2e5; ++s) combos *= static_cast<double>(n);
  if (combos <= 2e5) {
    std::vector<std::size_t> pick(k, 0);
    double total = 0.0;
    while (true) {
      double weight = 1.0;
      Vector est(dim, 0.0);
      for (std::size_t s = 0; s < k; ++s) {
        weight *= probs[pick[s]];
        for (std::size_t j = 0; j < dim; ++j) est[j] += term(pick[s], j) / static_cast<double>(k);
      }
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) sq += (est[j] - mean[j]) * (est[j] - mean[j]);
      total += weight * sq;
      std::size_t s = 0;
      while (s < k && ++pick[s] == n) pick[s++] = 0;
      if (s == k) break;
    }
    return total;
  }

  SamplingPlan plan([&] {
    std::vector<std::int64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int64_t>(i);
    return ids;
  }(), probs, 0.0);
  Rng rng(seed);
  const std::size_t trials = 100000;
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Vector est(dim, 0.0);
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t i = plan.draw_index(rng);
      for (std::size_t j = 0; j < dim; ++j) est[j] += term(i, j) / static_cast<double>(k);
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += (est[j] - mean[j]) * (est[j] - mean[j]);
    total += sq;
  }
  return total / static_cast<double>(trials);
}

inline double estimator_variance(const Vector& scalars, const Vector& probs, std::size_t k, std::uint64_t seed = 0) {
  std::vector<Vector> values;
  for (double a : scalars) values.push_back({a});
  return estimator_variance(values, probs, k, seed);
}

/// Closed form of the same quantity: (1/k) sum_i p_i |a_i/(n p_i) - mean|^2.
inline double estimator_variance_closed_form(const std::vector<Vector>& values, const Vector& probs, std::size_t k) {
  detail::check_variance_inputs(values, probs, k);
  const std::size_t n = values.size();
  const Vector mean = detail::population_mean(values);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      const double e = values[i][j] / (static_cast<double>(n) * probs[i]) - mean[j];
      sq += e * e;
    }
    total += probs[i] * sq;
  }
  return total / static_cast<double>(k);
}

}  // namespace progclean
