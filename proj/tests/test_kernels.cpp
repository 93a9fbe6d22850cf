#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace steingp;
using steingp::oracle::random_inputs;
using steingp::oracle::random_kernel;

namespace {

Eigen::RowVectorXd row(std::initializer_list<double> v) {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) {
    r(i++) = x;
  }
  return r;
}

Eigen::MatrixXd column(std::initializer_list<double> v) {
  return row(v).transpose();
}

} // namespace

TEST(KernelEval, SquaredExponentialZeroDistanceIsVariance) {
  const auto k = KernelSpec::squared_exponential(1.0, {1.0});
  EXPECT_DOUBLE_EQ(eval(k, row({0.0}), row({0.0})), 1.0);
}

TEST(KernelEval, SquaredExponentialUnitDistance) {
  const auto k = KernelSpec::squared_exponential(1.0, {1.0});
  // sigma^2 exp(-tau / (2 l^2)), tau = 1
  EXPECT_NEAR(eval(k, row({0.0}), row({1.0})), 0.6065306597126334, 1e-15);
}

TEST(KernelEval, WhiteIsZeroOffDiagonal) {
  const auto k = KernelSpec::white(0.5);
  EXPECT_EQ(eval(k, row({0.0}), row({1.0})), 0.0);
  EXPECT_EQ(eval(k, row({1.0}), row({1.0})), 0.5);
}

TEST(KernelEval, MaternFormsUseEuclideanDistance) {
  const double r = 5.0; // |(3,4)|
  const auto m12 = KernelSpec::matern12(1.5, {1.0});
  const auto m52 = KernelSpec::matern52(1.5, {1.0});
  const double s2 = 2.25;
  EXPECT_NEAR(eval(m12, row({0, 0}), row({3, 4})), s2 * std::exp(-r), 1e-15);
  const double sr = std::sqrt(5.0) * r;
  EXPECT_NEAR(eval(m52, row({0, 0}), row({3, 4})),
              s2 * (1 + sr + 5.0 / 3.0 * r * r) * std::exp(-sr), 1e-15);
}

TEST(KernelEval, PolynomialForm) {
  const auto k = KernelSpec::polynomial(3, 0.5, 0.2);
  const double dot = 1.0 * 2.0 + -1.0 * 0.5;
  EXPECT_NEAR(eval(k, row({1, -1}), row({2, 0.5})), std::pow(0.25 * dot + 0.2, 3), 1e-14);
}

TEST(KernelEval, ActiveDimsSelectColumns) {
  const auto k = KernelSpec::squared_exponential(1.0, {2.0}, {1});
  // only dimension 1 participates: distance 1, l = 2
  EXPECT_NEAR(eval(k, row({100, 0}), row({-7, 1})), std::exp(-0.125), 1e-15);
}

TEST(KernelEval, DimensionMismatchThrows) {
  const auto k = KernelSpec::squared_exponential(1.0, {1.0});
  EXPECT_THROW(eval(k, row({0.0}), row({0.0, 1.0})), InvalidArgument);
  const auto bad = KernelSpec::squared_exponential(1.0, {1.0}, {3});
  EXPECT_THROW(eval(bad, row({0.0}), row({1.0})), InvalidArgument);
}

TEST(KernelValidate, RejectsBadSpecs) {
  EXPECT_THROW(validate(KernelSpec::squared_exponential(-1.0, {1.0}), 1), InvalidArgument);
  EXPECT_THROW(validate(KernelSpec::squared_exponential(1.0, {0.0}), 1), InvalidArgument);
  EXPECT_THROW(validate(KernelSpec::squared_exponential(1.0, {1.0}, {0, 0}), 2),
               InvalidArgument);
  EXPECT_THROW(validate(KernelSpec::squared_exponential(1.0, {1.0, 1.0, 1.0}), 2),
               InvalidArgument);
  EXPECT_THROW(validate(KernelSpec::combine(Composition::Sum, {}), 1), InvalidArgument);
  EXPECT_NO_THROW(validate(KernelSpec::matern52(1.0, {1.0, 2.0}) *
                               KernelSpec::polynomial(3, 1.0, 1.0, {1}),
                           2));
}

TEST(Gram, SinglePointIsKernelValue) {
  const auto k = KernelSpec::matern52(1.3, {0.7});
  const Eigen::MatrixXd x = column({0.4});
  const auto g = gram(k, x, 0.0);
  ASSERT_EQ(g.values.rows(), 1);
  EXPECT_DOUBLE_EQ(g.values(0, 0), eval(k, x.row(0), x.row(0)));
}

TEST(Gram, SquaredExponentialTwoPoints) {
  const auto k = KernelSpec::squared_exponential(1.0, {1.0});
  const Eigen::MatrixXd x = column({0.0, 1.0});
  const auto g = gram(k, x, x, 0.0);
  const double e = std::exp(-0.5);
  EXPECT_DOUBLE_EQ(g.values(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.values(1, 1), 1.0);
  EXPECT_NEAR(g.values(0, 1), e, 1e-15);
  EXPECT_NEAR(g.values(1, 0), e, 1e-15);
}

TEST(Gram, WhiteIsScaledIdentity) {
  const auto g = gram(KernelSpec::white(2.0), column({0.0, 1.0}), 0.0);
  EXPECT_EQ(g.values, (Eigen::MatrixXd(2, 2) << 2, 0, 0, 2).finished());
}

TEST(Gram, JitterOnlyForSameInputSet) {
  const auto k = KernelSpec::squared_exponential(1.0, {1.0});
  const Eigen::MatrixXd x = column({0.0, 1.0});
  const Eigen::MatrixXd x2 = column({0.5, 1.0});
  EXPECT_DOUBLE_EQ(gram(k, x, x, 1e-3).values(0, 0), 1.0 + 1e-3);
  EXPECT_DOUBLE_EQ(gram(k, x, x, 1e-3).jitter_applied, 1e-3);
  const auto cross = gram(k, x, x2, 1e-3);
  EXPECT_DOUBLE_EQ(cross.values(1, 1), 1.0);
  EXPECT_EQ(cross.jitter_applied, 0.0);
}

TEST(GramGrad, SquaredExponentialSigmaDerivative) {
  const auto k = KernelSpec::squared_exponential(1.0, {1.0});
  const Eigen::MatrixXd g = gram_grad(k, column({0.0, 1.0, 2.5}), 0);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(g(i, i), 2.0);
  }
}

TEST(GramGrad, WhiteSigmaDerivative) {
  const Eigen::MatrixXd g = gram_grad(KernelSpec::white(0.3), column({0.0, 1.0}), 0);
  EXPECT_EQ(g, Eigen::MatrixXd::Identity(2, 2));
}

TEST(GramGrad, UnknownParameterThrows) {
  EXPECT_THROW(gram_grad(KernelSpec::white(0.3), column({0.0}), 1), InvalidArgument);
}

TEST(GramGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const Eigen::Index d = 1 + trial % 3;
    const Eigen::Index n = 2 + trial % 6;
    const KernelSpec k = random_kernel(rng, d);
    const Eigen::MatrixXd x = random_inputs(rng, n, d);
    const Eigen::VectorXd theta = hyperparameter_values(k);
    const std::size_t p = static_cast<std::size_t>(trial) % hyperparameter_count(k);
    const double h = 1e-5;
    Eigen::VectorXd tp = theta, tm = theta;
    tp(static_cast<Eigen::Index>(p)) += h;
    tm(static_cast<Eigen::Index>(p)) -= h;
    const Eigen::MatrixXd fd = (gram(with_hyperparameters(k, tp), x).values -
                                gram(with_hyperparameters(k, tm), x).values) /
                               (2 * h);
    const Eigen::MatrixXd analytic = gram_grad(k, x, p);
    const double scale = std::max(fd.norm(), 1e-8);
    EXPECT_LT((analytic - fd).norm() / scale, 1e-4) << "trial " << trial;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(GramProperties, SymmetricAndPositiveDefinite) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + trial % 8;
    const Eigen::Index n = 1 + (trial * 7) % 64;
    const KernelSpec k = random_kernel(rng, d);
    const Eigen::MatrixXd x = random_inputs(rng, n, d);
    const auto g = gram(k, x, 1e-6);
    EXPECT_EQ(g.values, g.values.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(g.values);
    EXPECT_EQ(llt.info(), Eigen::Success) << "trial " << trial;
  }
}

TEST(GramProperties, EqualArdLengthscalesMatchIsotropic) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd x = random_inputs(rng, 10, 3);
  for (auto family : {KernelFamily::SquaredExponential, KernelFamily::Matern12,
                      KernelFamily::Matern52}) {
    const auto iso = KernelSpec::stationary(family, 1.2, {0.8});
    const auto ard = KernelSpec::stationary(family, 1.2, {0.8, 0.8, 0.8});
    EXPECT_LT((gram(iso, x).values - gram(ard, x).values).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GramProperties, CompositionIsElementwise) {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd x = random_inputs(rng, 12, 2);
  const auto a = KernelSpec::matern52(1.1, {0.5, 1.5});
  const auto b = KernelSpec::polynomial(2, 0.7, 0.3, {1});
  const Eigen::MatrixXd ga = gram(a, x).values;
  const Eigen::MatrixXd gb = gram(b, x).values;
  EXPECT_LT((gram(a * b, x).values - ga.cwiseProduct(gb)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((gram(a + b, x).values - (ga + gb)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Hyperparameters, BlocksAndRoundTrip) {
  const auto k = KernelSpec::matern52(1.0, {1.0, 2.0}, {0, 1}) *
                 KernelSpec::polynomial(3, 1.0, 0.5, {2}) * KernelSpec::white(0.1);
  const auto blocks = hyperparameter_blocks(k);
  ASSERT_EQ(blocks.size(), 5u);
  EXPECT_EQ(blocks[0].name, "kernel0.sigma");
  EXPECT_EQ(blocks[1].name, "kernel0.lengthscale");
  EXPECT_EQ(blocks[1].length, 2u);
  EXPECT_EQ(blocks[3].name, "kernel1.offset");
  EXPECT_EQ(blocks[4].name, "kernel2.sigma");
  Eigen::VectorXd v = hyperparameter_values(k);
  ASSERT_EQ(v.size(), 6);
  v(2) = 3.5;
  EXPECT_EQ(hyperparameter_values(with_hyperparameters(k, v)), v);
}
