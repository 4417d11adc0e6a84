#include <gtest/gtest.h>

#include "oracles.hpp"
#include "progclean/models.hpp"
#include "progclean/updater.hpp"

using namespace progclean;

namespace {

struct Instance {
  ModelSpec spec;
  Vector x, y, theta;
};

Instance random_instance(LossKind loss, Rng& rng) {
  Instance in;
  const std::size_t d = 4;
  in.spec = ModelSpec::make(loss, d, 10, 1e-2);
  in.spec.classes = 3;
  const std::size_t xs = in.spec.is_aggregate() ? 1 : d;
  for (std::size_t i = 0; i < xs; ++i) in.x.push_back(rng.normal());
  switch (loss) {
    case LossKind::logistic_regression: in.y = {rng.uniform() < 0.5 ? 0.0 : 1.0}; break;
    case LossKind::svm_binary: in.y = {rng.uniform() < 0.5 ? -1.0 : 1.0}; break;
    case LossKind::svm_multiclass: in.y = {static_cast<double>(rng.index(3))}; break;
    default: in.y = {rng.normal()};
  }
  for (std::size_t i = 0; i < in.spec.theta_size(); ++i) in.theta.push_back(rng.normal());
  return in;
}

const LossKind kLosses[] = {LossKind::linear_regression, LossKind::logistic_regression, LossKind::svm_binary,
                            LossKind::svm_multiclass, LossKind::mean, LossKind::median};

std::vector<ExampleRef> refs(const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
  std::vector<ExampleRef> out;
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({xs[i], ys[i]});
  return out;
}

}  // namespace

class GradientProperty : public ::testing::TestWithParam<LossKind> {};

TEST_P(GradientProperty, MatchesFiniteDifferencesAwayFromKinks) {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 100; ++trial) {
    const Instance in = random_instance(GetParam(), rng);
    if (oracle::kink_distance(in.spec, in.x, in.y, in.theta) < 1e-3) continue;
    const Vector g = gradient_vector(in.spec, in.x, in.y, in.theta);
    const Vector fd = oracle::fd_gradient(in.spec, in.x, in.y, in.theta);
    if (norm2(fd) < 1e-8) {
      EXPECT_LT(norm2(g), 1e-6);
    } else {
      EXPECT_LE(oracle::rel_error(g, fd), 1e-5) << to_string(GetParam()) << " trial " << trial;
    }
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST_P(GradientProperty, JacobianFormMatchesFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Instance in = random_instance(GetParam(), rng);
    if (oracle::kink_distance(in.spec, in.x, in.y, in.theta) < 1e-3) continue;
    const TaylorMatrices m = taylor_matrices(in.spec, in.x, in.y, in.theta);
    const Matrix jx = oracle::fd_jacobian(in.spec, in.x, in.y, in.theta, false);
    for (std::size_t i = 0; i < jx.rows(); ++i)
      for (std::size_t j = 0; j < jx.cols(); ++j) {
        // The mean reads one value, so its Jacobian is mx(0,0) in column 0.
        EXPECT_NEAR(m.mx(i, j), jx(i, j), 1e-4) << to_string(GetParam()) << " (" << i << "," << j << ")";
      }
    if (GetParam() == LossKind::svm_multiclass) continue;  // categorical labels
    const Matrix jy = oracle::fd_jacobian(in.spec, in.x, in.y, in.theta, true);
    for (std::size_t i = 0; i < jy.rows(); ++i) EXPECT_NEAR(m.my(i, 0), jy(i, 0), 1e-4);
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, GradientProperty, ::testing::ValuesIn(kLosses),
                         [](const auto& info) { return to_string(info.param); });

TEST(Models, GradientProvenanceIsExact) {
  const ModelSpec spec = ModelSpec::make(LossKind::linear_regression, 2, 1, 0.0);
  const Vector x{1, 2}, y{3}, t{0.5, 0.5};
  EXPECT_EQ(gradient(spec, x, y, t).provenance, Provenance::exact);
}

TEST(Models, LinearRegressionExample) {
  // theta=[1,1], x=[2,3], y=4: residual 1, gradient [2,3].
  const ModelSpec spec = ModelSpec::make(LossKind::linear_regression, 2, 1, 0.0);
  const Vector g = gradient_vector(spec, Vector{2, 3}, Vector{4}, Vector{1, 1});
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 3.0);
}

TEST(Models, HingeSubgradientOnMarginBoundary) {
  const ModelSpec spec = ModelSpec::make(LossKind::svm_binary, 2, 1, 0.0);
  // y * theta.x = 1 exactly: the active branch applies.
  const Vector g = gradient_vector(spec, Vector{1, 0}, Vector{1}, Vector{1, 0});
  EXPECT_EQ(g, (Vector{-1, 0}));
  const Vector g2 = gradient_vector(spec, Vector{2, 0}, Vector{1}, Vector{1, 0});
  EXPECT_EQ(g2, (Vector{0, 0}));
}

TEST(Models, DimensionMismatchThrows) {
  const ModelSpec spec = ModelSpec::make(LossKind::linear_regression, 3, 1);
  EXPECT_THROW(gradient_vector(spec, Vector{1, 2}, Vector{1}, Vector{0, 0, 0}), Error);
  EXPECT_THROW(gradient_vector(spec, Vector{1, 2, 3}, Vector{1}, Vector{0, 0}), Error);
  EXPECT_THROW(loss(spec, Vector{1, 2, 3}, Vector{}, Vector{0, 0, 0}), Error);
}

TEST(Models, LiteralFormDiffersFromJacobian) {
  const ModelSpec spec = ModelSpec::make(LossKind::linear_regression, 2, 1, 0.0);
  const Vector x{1, 2}, y{0.5}, t{0.3, -0.7};
  const auto j = taylor_matrices(spec, x, y, t, TaylorForm::jacobian);
  const auto l = taylor_matrices(spec, x, y, t, TaylorForm::literal);
  EXPECT_NE(j.mx(0, 0), l.mx(0, 0));
  EXPECT_EQ(j.my(0, 0), -x[0]);
  EXPECT_EQ(l.my(0, 0), x[0]);
}

TEST(Models, TrainFullZeroesMeanGradient) {
  Rng rng(3);
  for (LossKind k : {LossKind::linear_regression, LossKind::logistic_regression}) {
    std::vector<Vector> xs, ys;
    for (int i = 0; i < 200; ++i) {
      Vector x{rng.normal(), rng.normal(), 1.0};
      const double z = 1.5 * x[0] - x[1] + 0.3 + rng.normal();
      xs.push_back(x);
      ys.push_back({k == LossKind::logistic_regression ? (z > 0 ? 1.0 : 0.0) : z});
    }
    const ModelSpec spec = ModelSpec::make(k, 3, xs.size(), 1e-3);
    const auto data = refs(xs, ys);
    const Theta th = train_full(spec, data);
    EXPECT_LT(norm2(mean_gradient(spec, data, th)), 1e-7) << to_string(k);
  }
}

TEST(Models, TrainFullSvmSatisfiesSubgradientOptimality) {
  Rng rng(4);
  std::vector<Vector> xs, ys;
  for (int i = 0; i < 300; ++i) {
    const double y = rng.uniform() < 0.5 ? -1 : 1;
    xs.push_back({y * 1.0 + rng.normal(), rng.normal()});
    ys.push_back({y});
  }
  const ModelSpec spec = ModelSpec::make(LossKind::svm_binary, 2, xs.size(), 1e-2);
  const auto data = refs(xs, ys);
  const Theta th = train_full(spec, data);
  // Perturbing in any direction never lowers the objective.
  const double f0 = mean_loss(spec, data, th);
  for (int dir = 0; dir < 8; ++dir) {
    Theta p = th;
    p.values[0] += 1e-3 * std::cos(dir * M_PI / 4);
    p.values[1] += 1e-3 * std::sin(dir * M_PI / 4);
    EXPECT_GE(mean_loss(spec, data, p), f0 - 1e-9);
  }
}

TEST(Models, AggregatesHaveClosedForms) {
  std::vector<Vector> xs{{1}, {2}, {10}}, ys{{0}, {0}, {0}};
  const auto data = refs(xs, ys);
  EXPECT_DOUBLE_EQ(train_full(ModelSpec::make(LossKind::mean, 1, 3), data).values[0], 13.0 / 3.0);
  EXPECT_DOUBLE_EQ(train_full(ModelSpec::make(LossKind::median, 1, 3), data).values[0], 2.0);
}

TEST(Models, TrainFullRejectsEmptyAndBadLabels) {
  const ModelSpec spec = ModelSpec::make(LossKind::svm_binary, 1, 1);
  EXPECT_THROW(train_full(spec, std::vector<ExampleRef>{}), Error);
  std::vector<Vector> xs{{1}}, ys{{0.5}};
  EXPECT_THROW(train_full(spec, refs(xs, ys)), Error);
}

TEST(Models, EvaluateReportsAccuracyForClassifiers) {
  ModelSpec spec = ModelSpec::make(LossKind::linear_regression, 1, 2, 0.0);
  spec.thresholded = true;
  std::vector<Vector> xs{{1}, {-1}, {2}}, ys{{1}, {-1}, {-1}};
  const Evaluation e = evaluate(spec, Theta({1.0}), refs(xs, ys));
  EXPECT_NEAR(e.accuracy, 2.0 / 3.0, 1e-12);
}
