#pragma once

// Convex loss families: per-example loss and gradient, the first-order
// correction matrices used by the estimator, batch training, and evaluation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progclean/common.hpp"

namespace progclean {

enum class LossKind { linear_regression, logistic_regression, svm_binary, svm_multiclass, mean, median };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::linear_regression: return "linear_regression";
    case LossKind::logistic_regression: return "logistic_regression";
    case LossKind::svm_binary: return "svm_binary";
    case LossKind::svm_multiclass: return "svm_multiclass";
    case LossKind::mean: return "mean";
    case LossKind::median: return "median";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  for (LossKind k : {LossKind::linear_regression, LossKind::logistic_regression, LossKind::svm_binary,
                     LossKind::svm_multiclass, LossKind::mean, LossKind::median})
    if (to_string(k) == s) return k;
  if (s == "linear") return LossKind::linear_regression;
  if (s == "logistic") return LossKind::logistic_regression;
  if (s == "svm") return LossKind::svm_binary;
  throw Error("unknown loss '" + s + "'");
}

/// Which closed form taylor_matrices returns. `jacobian` is the exact
/// derivative of gradient(); `literal` reproduces the published table entries
/// (which disagree with the Jacobian for some entries) for comparison.
enum class TaylorForm { jacobian, literal };

struct ModelSpec {
  LossKind loss = LossKind::linear_regression;
  // Total L2 weight lambda; each example carries lambda / n_reference of it.
  double l2_reg = 0.0;
  std::size_t n_reference = 1;
  std::size_t d = 1;
  std::size_t classes = 2;  // svm_multiclass only
  // Linear regression on +/-1 targets used as a sign classifier.
  bool thresholded = false;

  static ModelSpec make(LossKind loss, std::size_t d, std::size_t n, double reg_per_example = 1e-4) {
    ModelSpec s;
    s.loss = loss;
    s.d = d;
    s.n_reference = std::max<std::size_t>(n, 1);
    s.l2_reg = (loss == LossKind::mean || loss == LossKind::median) ? 0.0 : reg_per_example * s.n_reference;
    return s;
  }

  double reg_share() const {
    if (loss == LossKind::mean || loss == LossKind::median) return 0.0;
    return l2_reg / static_cast<double>(std::max<std::size_t>(n_reference, 1));
  }

  std::size_t theta_size() const {
    switch (loss) {
      case LossKind::mean:
      case LossKind::median: return 1;
      case LossKind::svm_multiclass: return d * classes;
      default: return d;
    }
  }

  bool is_classifier() const {
    return loss == LossKind::logistic_regression || loss == LossKind::svm_binary ||
           loss == LossKind::svm_multiclass || (loss == LossKind::linear_regression && thresholded);
  }

  bool is_aggregate() const { return loss == LossKind::mean || loss == LossKind::median; }
};

struct Theta {
  Vector values;

  Theta() = default;
  explicit Theta(Vector v) : values(std::move(v)) {}
  static Theta zeros(const ModelSpec& spec) { return Theta(Vector(spec.theta_size(), 0.0)); }

  std::size_t size() const { return values.size(); }
  bool operator==(const Theta&) const = default;
};

enum class Provenance { exact, sampled };

struct GradientEstimate {
  Vector g;
  Provenance provenance = Provenance::exact;
};

struct ExampleRef {
  std::span<const double> x;
  std::span<const double> y;
};

namespace detail {

inline void check_dims(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                       std::span<const double> theta) {
  if (theta.size() != spec.theta_size())
    throw Error("dimension mismatch: theta has " + std::to_string(theta.size()) + " entries, model expects " +
                std::to_string(spec.theta_size()));
  if (spec.is_aggregate()) {
    if (x.empty()) throw Error("dimension mismatch: aggregate loss needs one value");
    return;
  }
  if (x.size() != spec.d)
    throw Error("dimension mismatch: x has " + std::to_string(x.size()) + " entries, model expects " +
                std::to_string(spec.d));
  if (y.empty()) throw Error("dimension mismatch: missing label");
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double class_sign(double label, std::size_t k) {
  return static_cast<std::size_t>(std::lround(label)) == k ? 1.0 : -1.0;
}

}  // namespace detail

inline double margin_score(std::span<const double> theta, std::span<const double> x, std::size_t cls = 0) {
  return dot(theta.subspan(cls * x.size(), x.size()), x);
}

/// Per-example loss including the per-example regularization share.
inline double loss(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                   std::span<const double> theta) {
  detail::check_dims(spec, x, y, theta);
  const double reg = spec.reg_share() * dot(theta, theta);
  switch (spec.loss) {
    case LossKind::linear_regression: {
      const double r = dot(theta, x) - y[0];
      return 0.5 * r * r + reg;
    }
    case LossKind::logistic_regression: {
      const double z = dot(theta, x);
      return detail::softplus(z) - y[0] * z + reg;
    }
    case LossKind::svm_binary: return std::max(0.0, 1.0 - y[0] * dot(theta, x)) + reg;
    case LossKind::svm_multiclass: {
      double total = 0.0;
      for (std::size_t k = 0; k < spec.classes; ++k)
        total += std::max(0.0, 1.0 - detail::class_sign(y[0], k) * margin_score(theta, x, k));
      return total + reg;
    }
    case LossKind::mean: return (x[0] - theta[0]) * (x[0] - theta[0]);
    case LossKind::median: return std::abs(x[0] - theta[0]);
  }
  return 0.0;
}

/// Analytic per-example (sub)gradient. The hinge uses -y*x on y*x.theta <= 1.
inline Vector gradient_vector(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                              std::span<const double> theta) {
  detail::check_dims(spec, x, y, theta);
  Vector g(theta.size(), 0.0);
  switch (spec.loss) {
    case LossKind::linear_regression: {
      const double r = dot(theta, x) - y[0];
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = r * x[i];
      break;
    }
    case LossKind::logistic_regression: {
      const double h = detail::sigmoid(dot(theta, x));
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = (h - y[0]) * x[i];
      break;
    }
    case LossKind::svm_binary: {
      if (y[0] * dot(theta, x) <= 1.0)
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = -y[0] * x[i];
      break;
    }
    case LossKind::svm_multiclass: {
      const std::size_t d = x.size();
      for (std::size_t k = 0; k < spec.classes; ++k) {
        const double s = detail::class_sign(y[0], k);
        if (s * margin_score(theta, x, k) <= 1.0)
          for (std::size_t i = 0; i < d; ++i) g[k * d + i] = -s * x[i];
      }
      break;
    }
    case LossKind::mean: g[0] = 2.0 * (theta[0] - x[0]); return g;
    case LossKind::median: {
      const double diff = theta[0] - x[0];
      g[0] = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      return g;
    }
  }
  axpy(2.0 * spec.reg_share(), theta, g);
  return g;
}

inline GradientEstimate gradient(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                                 std::span<const double> theta) {
  return {gradient_vector(spec, x, y, theta), Provenance::exact};
}

/// Derivatives of gradient() with respect to the features (M_x, p x d) and the
/// labels (M_y, p x l), where p is the parameter size.
struct TaylorMatrices {
  Matrix mx;
  Matrix my;
};

inline TaylorMatrices taylor_matrices(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                                      std::span<const double> theta, TaylorForm form = TaylorForm::jacobian) {
  detail::check_dims(spec, x, y, theta);
  const bool literal = form == TaylorForm::literal;
  const std::size_t l = std::max<std::size_t>(y.size(), 1);
  switch (spec.loss) {
    case LossKind::linear_regression: {
      const std::size_t d = x.size();
      const double z = dot(theta, x);
      const double r = z - y[0];
      TaylorMatrices m{Matrix(d, d), Matrix(d, l)};
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) m.mx(i, j) = theta[j] * x[i];
        m.mx(i, i) = literal ? 2.0 * x[i] + (z - theta[i] * x[i]) - y[0] : theta[i] * x[i] + r;
        m.my(i, 0) = literal ? x[i] : -x[i];
      }
      return m;
    }
    case LossKind::logistic_regression: {
      const std::size_t d = x.size();
      const double h = detail::sigmoid(dot(theta, x));
      const double s = h * (1.0 - h);
      TaylorMatrices m{Matrix(d, d), Matrix(d, l)};
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) m.mx(i, j) = s * theta[j] * x[i] + (literal ? h : 0.0);
        m.mx(i, i) = s * theta[i] * x[i] + h - y[0];
        m.my(i, 0) = literal ? x[i] : -x[i];
      }
      return m;
    }
    case LossKind::svm_binary: {
      const std::size_t d = x.size();
      TaylorMatrices m{Matrix(d, d), Matrix(d, l)};
      const bool active = y[0] * dot(theta, x) <= 1.0;
      for (std::size_t i = 0; i < d; ++i) {
        if (active) m.mx(i, i) = -y[0];
        if (literal) m.my(i, 0) = x[i];
        else if (active) m.my(i, 0) = -x[i];
      }
      return m;
    }
    case LossKind::mean: {
      TaylorMatrices m{Matrix(1, 1), Matrix(1, l)};
      m.mx(0, 0) = literal ? 2.0 : -2.0;
      return m;
    }
    case LossKind::median: return {Matrix(1, 1), Matrix(1, l)};
    case LossKind::svm_multiclass: {
      // Labels are categorical, so only the feature derivative is defined.
      const std::size_t d = x.size();
      TaylorMatrices m{Matrix(theta.size(), d), Matrix(theta.size(), l)};
      for (std::size_t k = 0; k < spec.classes; ++k) {
        const double s = detail::class_sign(y[0], k);
        if (s * margin_score(theta, x, k) <= 1.0)
          for (std::size_t i = 0; i < d; ++i) m.mx(k * d + i, i) = -s;
      }
      return m;
    }
  }
  throw Error("taylor_matrices: unsupported loss");
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 100000;
};

namespace detail {

inline Vector mean_gradient(const ModelSpec& spec, std::span<const ExampleRef> data, std::span<const double> theta) {
  Vector g(theta.size(), 0.0);
  for (const ExampleRef& e : data) axpy(1.0, gradient_vector(spec, e.x, e.y, theta), g);
  scale(g, 1.0 / static_cast<double>(data.size()));
  return g;
}

inline double mean_loss(const ModelSpec& spec, std::span<const ExampleRef> data, std::span<const double> theta) {
  double s = 0.0;
  for (const ExampleRef& e : data) s += loss(spec, e.x, e.y, theta);
  return s / static_cast<double>(data.size());
}

inline void check_finite(std::span<const double> theta) {
  if (!all_finite(theta))
    throw Error("training diverged (non-finite parameters); try a smaller step or stronger regularization");
}

// Damped Newton iterations for the twice-differentiable losses.
inline Vector train_newton(const ModelSpec& spec, std::span<const ExampleRef> data, const TrainOptions& opt) {
  const std::size_t d = spec.d;
  Vector theta(d, 0.0);
  const double n = static_cast<double>(data.size());
  const std::size_t max_newton = std::min<std::size_t>(opt.max_iterations, 200);
  for (std::size_t it = 0; it < max_newton; ++it) {
    Vector g = mean_gradient(spec, data, theta);
    if (norm2(g) <= opt.tolerance) break;
    Matrix h(d, d);
    for (const ExampleRef& e : data) {
      double w = 1.0;
      if (spec.loss == LossKind::logistic_regression) {
        const double p = sigmoid(dot(theta, e.x));
        w = p * (1.0 - p);
      }
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j <= i; ++j) h(i, j) += w * e.x[i] * e.x[j];
    }
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        h(i, j) /= n;
        h(j, i) = h(i, j);
      }
      h(i, i) += 2.0 * spec.reg_share();
      trace += h(i, i);
    }
    Vector step;
    try {
      step = cholesky_solve(h, g);
    } catch (const Error&) {
      for (std::size_t i = 0; i < d; ++i) h(i, i) += 1e-10 * (trace / static_cast<double>(d) + 1e-300);
      step = cholesky_solve(h, g);
    }
    double t = 1.0;
    const double f0 = mean_loss(spec, data, theta);
    const double slope = dot(g, step);
    Vector trial(d);
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < d; ++i) trial[i] = theta[i] - t * step[i];
      if (spec.loss == LossKind::linear_regression) break;
      if (mean_loss(spec, data, trial) <= f0 - 1e-4 * t * slope) break;
      t *= 0.5;
    }
    theta = trial;
    check_finite(theta);
  }
  return theta;
}

// Dual coordinate descent for rho*|w|^2 + (1/n) sum hinge(s_i w.x_i).
// Optional per-example weights scale each hinge term.
inline Vector train_hinge_dual(std::span<const ExampleRef> data, std::span<const double> signs, double rho,
                               std::size_t d, double tolerance, std::size_t max_epochs,
                               std::span<const double> weights = {}) {
  if (!(rho > 0.0)) throw Error("svm training needs l2_reg > 0");
  const std::size_t n = data.size();
  const double c0 = 1.0 / (2.0 * rho * static_cast<double>(n));
  Vector c(n, c0);
  if (!weights.empty())
    for (std::size_t i = 0; i < n; ++i) c[i] = c0 * weights[i];
  Vector w(d, 0.0), alpha(n, 0.0), q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = dot(data[i].x, data[i].x);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(0x5eed);
  for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      if (q[i] <= 0.0) continue;
      const double s = signs[i];
      const double grad = s * dot(w, data[i].x) - 1.0;
      double pg = grad;
      if (alpha[i] <= 0.0) pg = std::min(grad, 0.0);
      else if (alpha[i] >= c[i]) pg = std::max(grad, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg != 0.0) {
        const double old = alpha[i];
        alpha[i] = std::clamp(old - grad / q[i], 0.0, c[i]);
        axpy((alpha[i] - old) * s, data[i].x, w);
      }
    }
    if (pg_max - pg_min <= tolerance) break;
  }
  // Primal w of 0.5|w|^2 + C sum hinge equals the minimizer of rho|w|^2 + mean hinge.
  check_finite(w);
  return w;
}

}  // namespace detail

/// Trains the model to completion on the given examples (theta^(c) when the
/// examples are the cleaned relation). Deterministic given its inputs.
inline Theta train_full(const ModelSpec& spec, std::span<const ExampleRef> data, const TrainOptions& opt = {}) {
  if (data.empty()) throw Error("train_full: no examples");
  for (const ExampleRef& e : data) detail::check_dims(spec, e.x, e.y, Vector(spec.theta_size(), 0.0));
  switch (spec.loss) {
    case LossKind::mean: {
      double s = 0.0;
      for (const ExampleRef& e : data) s += e.x[0];
      return Theta({s / static_cast<double>(data.size())});
    }
    case LossKind::median: {
      Vector v;
      for (const ExampleRef& e : data) v.push_back(e.x[0]);
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return Theta({n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2])});
    }
    case LossKind::linear_regression:
    case LossKind::logistic_regression: return Theta(detail::train_newton(spec, data, opt));
    case LossKind::svm_binary: {
      Vector signs;
      for (const ExampleRef& e : data) {
        if (e.y[0] != 1.0 && e.y[0] != -1.0) throw Error("svm_binary labels must be +1 or -1");
        signs.push_back(e.y[0]);
      }
      return Theta(detail::train_hinge_dual(data, signs, spec.reg_share(), spec.d, opt.tolerance,
                                            std::min<std::size_t>(opt.max_iterations, 20000)));
    }
    case LossKind::svm_multiclass: {
      Vector theta(spec.theta_size(), 0.0);
      for (std::size_t k = 0; k < spec.classes; ++k) {
        Vector signs;
        for (const ExampleRef& e : data) signs.push_back(detail::class_sign(e.y[0], k));
        const Vector w = detail::train_hinge_dual(data, signs, spec.reg_share(), spec.d, opt.tolerance,
                                                  std::min<std::size_t>(opt.max_iterations, 20000));
        std::copy(w.begin(), w.end(), theta.begin() + static_cast<long>(k * spec.d));
      }
      return Theta(std::move(theta));
    }
  }
  throw Error("train_full: unsupported loss");
}

inline Vector mean_gradient(const ModelSpec& spec, std::span<const ExampleRef> data, const Theta& theta) {
  if (data.empty()) return Vector(theta.size(), 0.0);
  return detail::mean_gradient(spec, data, theta.values);
}

inline double mean_loss(const ModelSpec& spec, std::span<const ExampleRef> data, const Theta& theta) {
  if (data.empty()) return 0.0;
  return detail::mean_loss(spec, data, theta.values);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // classifiers only
  double mean_loss = 0.0;
  double r_squared = std::numeric_limits<double>::quiet_NaN();  // linear regression only
};

/// Predicted class: sign of the score (0 predicts positive), argmax for
/// multiclass with ties going to the lowest index.
inline double predict(const ModelSpec& spec, const Theta& theta, std::span<const double> x) {
  switch (spec.loss) {
    case LossKind::svm_multiclass: {
      std::size_t best = 0;
      double best_score = margin_score(theta.values, x, 0);
      for (std::size_t k = 1; k < spec.classes; ++k) {
        const double s = margin_score(theta.values, x, k);
        if (s > best_score) {
          best = k;
          best_score = s;
        }
      }
      return static_cast<double>(best);
    }
    case LossKind::logistic_regression: return dot(theta.values, x) >= 0.0 ? 1.0 : 0.0;
    case LossKind::mean:
    case LossKind::median: return theta.values[0];
    default:
      if (spec.is_classifier()) return dot(theta.values, x) >= 0.0 ? 1.0 : -1.0;
      return dot(theta.values, x);
  }
}

inline bool prediction_correct(const ModelSpec& spec, double predicted, double label) {
  switch (spec.loss) {
    case LossKind::svm_multiclass: return std::lround(label) == std::lround(predicted);
    case LossKind::logistic_regression: return (label >= 0.5) == (predicted >= 0.5);
    default: return (label > 0) == (predicted > 0);
  }
}

inline Evaluation evaluate(const ModelSpec& spec, const Theta& theta, std::span<const ExampleRef> test) {
  if (test.empty()) throw Error("evaluate: empty test set");
  Evaluation ev;
  ev.mean_loss = mean_loss(spec, test, theta);
  if (spec.is_classifier()) {
    std::size_t correct = 0;
    for (const ExampleRef& e : test)
      if (prediction_correct(spec, predict(spec, theta, e.x), e.y[0])) ++correct;
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  }
  if (spec.loss == LossKind::linear_regression) {
    double mean_y = 0.0;
    for (const ExampleRef& e : test) mean_y += e.y[0];
    mean_y /= static_cast<double>(test.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (const ExampleRef& e : test) {
      const double r = dot(theta.values, e.x) - e.y[0];
      ss_res += r * r;
      ss_tot += (e.y[0] - mean_y) * (e.y[0] - mean_y);
    }
    ev.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN();
  }
  return ev;
}

}  // namespace progclean
