#pragma once

// Independent numerical references shared by the unit and acceptance tests.

#include <cmath>
#include <span>
#include <vector>

#include "progclean/models.hpp"

namespace oracle {

using progclean::Vector;

/// Central difference of the per-example loss with respect to theta.
inline Vector fd_gradient(const progclean::ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                          Vector theta, double h = 1e-6) {
  Vector g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t0 = theta[i];
    theta[i] = t0 + h;
    const double fp = progclean::loss(spec, x, y, theta);
    theta[i] = t0 - h;
    const double fm = progclean::loss(spec, x, y, theta);
    theta[i] = t0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// Central-difference Jacobian of gradient() with respect to x (wrt_y false) or y.
inline progclean::Matrix fd_jacobian(const progclean::ModelSpec& spec, Vector x, Vector y,
                                     std::span<const double> theta, bool wrt_y, double h = 1e-6) {
  Vector& v = wrt_y ? y : x;
  progclean::Matrix m(theta.size(), v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double v0 = v[j];
    v[j] = v0 + h;
    const Vector gp = progclean::gradient_vector(spec, x, y, theta);
    v[j] = v0 - h;
    const Vector gm = progclean::gradient_vector(spec, x, y, theta);
    v[j] = v0;
    for (std::size_t i = 0; i < theta.size(); ++i) m(i, j) = (gp[i] - gm[i]) / (2 * h);
  }
  return m;
}

inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

/// Smallest distance from any hinge kink (y*theta.x = 1 per class), or from
/// the median's kink at x = theta.
inline double kink_distance(const progclean::ModelSpec& spec, std::span<const double> x, std::span<const double> y,
                            std::span<const double> theta) {
  using progclean::LossKind;
  switch (spec.loss) {
    case LossKind::svm_binary: return std::abs(1.0 - y[0] * progclean::dot(theta, x));
    case LossKind::svm_multiclass: {
      double m = 1e300;
      for (std::size_t k = 0; k < spec.classes; ++k) {
        const double s = progclean::detail::class_sign(y[0], k);
        m = std::min(m, std::abs(1.0 - s * progclean::margin_score(theta, x, k)));
      }
      return m;
    }
    case LossKind::median: return std::abs(x[0] - theta[0]);
    default: return 1e300;
  }
}

/// Exact least-squares slope of y on [x, 1] by the normal equations.
inline double ls_slope(const std::vector<std::pair<double, double>>& pts) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(pts.size());
  for (auto [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace oracle
