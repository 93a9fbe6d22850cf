#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace steingp;

namespace {

Eigen::MatrixXd column(std::initializer_list<double> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) {
    m(i++, 0) = x;
  }
  return m;
}

// Score field of a flat target.
struct FlatTarget {
  Eigen::Index d = 1;
  Eigen::Index dimension() const { return d; }
  Eigen::VectorXd score(const Eigen::VectorXd &x) const {
    return Eigen::VectorXd::Zero(x.size());
  }
  double log_density(const Eigen::VectorXd &) const { return 0.0; }
};

Eigen::MatrixXd permute_rows(const Eigen::MatrixXd &m, const std::vector<Eigen::Index> &perm) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  }
  return out;
}

GaussianTarget correlated_target() {
  Eigen::Vector2d mean(1.0, -0.5);
  Eigen::Matrix2d cov;
  cov << 1.0, 0.6, 0.6, 0.8;
  return GaussianTarget(mean, cov);
}

} // namespace

TEST(MedianBandwidth, TwoPoints) {
  EXPECT_NEAR(median_bandwidth(column({0.0, 2.0})), 4.0 / std::log(3.0), 1e-15);
  EXPECT_NEAR(median_bandwidth(column({0.0, 2.0})), 3.640957, 1e-6);
}

TEST(MedianBandwidth, Fallbacks) {
  EXPECT_EQ(median_bandwidth(column({5.0})), 1.0);
  EXPECT_EQ(median_bandwidth(column({1.5, 1.5, 1.5})), 1.0);
}

TEST(MedianBandwidth, EvenPairCountAveragesMiddle) {
  // distances {1, 3, 4, 2, 3, 1}: sorted 1 1 2 3 3 4, median 2.5
  const Eigen::MatrixXd p = column({0.0, 1.0, 3.0, 4.0});
  EXPECT_NEAR(median_bandwidth(p), 6.25 / std::log(5.0), 1e-15);
}

TEST(MedianBandwidth, ScalesQuadratically) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd p = oracle::random_inputs(rng, 9, 3);
  const double base = median_bandwidth(p);
  EXPECT_EQ(median_bandwidth(2.0 * p), 4.0 * base);
  EXPECT_EQ(median_bandwidth(0.5 * p), 0.25 * base);
  EXPECT_NEAR(median_bandwidth(3.0 * p), 9.0 * base, 1e-14 * base);
}

TEST(SvgdKernel, CoincidentArguments) {
  const Eigen::Vector2d a(0.3, -1.0);
  const RbfValue k = svgd_kernel(a, a, 0.7);
  EXPECT_EQ(k.value, 1.0);
  EXPECT_EQ(k.grad_first, Eigen::Vector2d::Zero());
}

TEST(SvgdKernel, HandValues) {
  const RbfValue k = svgd_kernel(Eigen::VectorXd::Constant(1, -1.0),
                                 Eigen::VectorXd::Constant(1, 1.0), 1.0);
  EXPECT_NEAR(k.value, std::exp(-4.0), 1e-15);
  EXPECT_NEAR(k.value, 0.018316, 1e-6);
  EXPECT_NEAR(k.grad_first(0), 4.0 * std::exp(-4.0), 1e-15);
  EXPECT_NEAR(k.grad_first(0), 0.073263, 1e-6);
}

TEST(SvgdKernel, WideBandwidthLimit) {
  const RbfValue k = svgd_kernel(Eigen::Vector2d(0, 0), Eigen::Vector2d(3, 4), 1e12);
  EXPECT_NEAR(k.value, 1.0, 1e-10);
  EXPECT_LT(k.grad_first.norm(), 1e-10);
}

TEST(SvgdKernel, GradientMatchesFiniteDifferences) {
  const Eigen::Vector3d a(0.2, -0.4, 1.1), b(-0.3, 0.5, 0.9);
  const auto fd = oracle::central_difference(
      [&](const Eigen::VectorXd &x) { return svgd_kernel(x, b, 0.8).value; }, a);
  EXPECT_LT(oracle::relative_error(svgd_kernel(a, b, 0.8).grad_first, fd), 1e-8);
}

TEST(SvgdKernel, Rejections) {
  EXPECT_THROW(svgd_kernel(Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 0), 0.0), InvalidArgument);
  EXPECT_THROW(svgd_kernel(Eigen::Vector2d(0, 0), Eigen::Vector3d(0, 0, 0), 1.0),
               InvalidArgument);
}

TEST(Direction, SingleParticleIsScore) {
  const Eigen::MatrixXd p = (Eigen::MatrixXd(1, 3) << 0.1, 2.0, -3.0).finished();
  const Eigen::MatrixXd s = (Eigen::MatrixXd(1, 3) << 0.7, -0.2, 5.5).finished();
  EXPECT_EQ(update_direction(p, s, 1.0), s);
}

TEST(Direction, TwoParticleStandardNormal) {
  const Eigen::MatrixXd p = column({-1.0, 1.0});
  const Eigen::MatrixXd s = -p;
  const Eigen::MatrixXd phi = update_direction(p, s, 1.0);
  const double e4 = std::exp(-4.0);
  const double expected = 0.5 * (-1.0 + e4 * 1.0 + 4.0 * e4);
  EXPECT_NEAR(phi(1, 0), expected, 1e-15);
  EXPECT_NEAR(phi(1, 0), -0.454210, 1e-6);
  EXPECT_NEAR(phi(0, 0), 0.454210, 1e-6);
}

TEST(Direction, CoincidentParticlesFollowCommonScore) {
  const Eigen::MatrixXd p = Eigen::MatrixXd::Constant(4, 2, 0.3);
  Eigen::MatrixXd s(4, 2);
  s.rowwise() = Eigen::RowVector2d(1.5, -0.25);
  EXPECT_EQ(update_direction(p, s, 0.9), s);
}

TEST(Direction, MatchesKernelDefinition) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd p = oracle::random_inputs(rng, 6, 3);
  const Eigen::MatrixXd s = oracle::random_inputs(rng, 6, 3);
  const double ell2 = 0.9;
  const Eigen::MatrixXd phi = update_direction(p, s, ell2);
  for (Eigen::Index i = 0; i < 6; ++i) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(3);
    for (Eigen::Index j = 0; j < 6; ++j) {
      const RbfValue k = svgd_kernel(p.row(j).transpose(), p.row(i).transpose(), ell2);
      acc += k.value * s.row(j).transpose() + k.grad_first;
    }
    EXPECT_LT((phi.row(i).transpose() - acc / 6.0).norm(), 1e-13);
  }
}

TEST(Direction, NonFiniteScoreNamesParticle) {
  Eigen::MatrixXd p = column({0.0, 1.0, 2.0});
  Eigen::MatrixXd s = column({0.0, NAN, 0.0});
  try {
    update_direction(p, s, 1.0);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError &e) {
    EXPECT_NE(std::string(e.what()).find("particle 1"), std::string::npos);
  }
}

TEST(Direction, PermutationEquivariantExactly) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index j = 2 + trial % 9;
    const Eigen::MatrixXd p = oracle::random_inputs(rng, j, 3);
    const Eigen::MatrixXd s = oracle::random_inputs(rng, j, 3);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(j));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const double ell2 = median_bandwidth(p);
    EXPECT_EQ(median_bandwidth(permute_rows(p, perm)), ell2);
    EXPECT_EQ(update_direction(permute_rows(p, perm), permute_rows(s, perm), ell2),
              permute_rows(update_direction(p, s, ell2), perm));
  }
}

TEST(Step, PermutationEquivariantExactly) {
  const GaussianTarget target = correlated_target();
  std::mt19937_64 rng(4);
  for (StepRule rule : {StepRule::Adam, StepRule::Plain}) {
    ParticleEnsemble e;
    e.particles = oracle::random_inputs(rng, 7, 2);
    std::vector<Eigen::Index> perm{3, 0, 6, 1, 5, 2, 4};
    ParticleEnsemble ep = e;
    ep.particles = permute_rows(e.particles, perm);
    SvgdConfig cfg;
    cfg.rule = rule;
    SvgdStepper a(cfg), b(cfg);
    std::mt19937_64 ra(0), rb(0);
    for (int t = 0; t < 5; ++t) {
      e = a.step(e, target, ra);
      ep = b.step(ep, target, rb);
    }
    EXPECT_EQ(ep.particles, permute_rows(e.particles, perm));
  }
}

TEST(Step, ZeroDirectionLeavesEnsembleUnchanged) {
  ParticleEnsemble e;
  e.particles = Eigen::MatrixXd::Constant(3, 1, 0.4);
  SvgdStepper stepper(SvgdConfig{});
  std::mt19937_64 rng(0);
  const ParticleEnsemble next = stepper.step(e, FlatTarget{}, rng);
  EXPECT_EQ(next.particles, e.particles);
  EXPECT_EQ(next.iteration, 1u);
}

TEST(Step, SingleParticlePlainIsGradientAscent) {
  const GaussianTarget target = correlated_target();
  SvgdConfig cfg;
  cfg.rule = StepRule::Plain;
  cfg.step_size = 0.05;
  SvgdStepper stepper(cfg);
  ParticleEnsemble e;
  e.particles = (Eigen::MatrixXd(1, 2) << 0.3, 0.9).finished();
  std::mt19937_64 rng(0);
  for (int t = 0; t < 10; ++t) {
    const Eigen::VectorXd x = e.particles.row(0).transpose();
    const Eigen::VectorXd expected = x + 0.05 * target.score(x);
    e = stepper.step(e, target, rng);
    EXPECT_EQ(e.particles.row(0).transpose(), expected);
  }
}

TEST(Step, FlatTargetRepels) {
  for (StepRule rule : {StepRule::Adam, StepRule::Plain}) {
    SvgdConfig cfg;
    cfg.rule = rule;
    SvgdStepper stepper(cfg);
    ParticleEnsemble e;
    e.particles = (Eigen::MatrixXd(2, 2) << 0.0, 0.0, 0.3, -0.1).finished();
    std::mt19937_64 rng(0);
    const double before = (e.particles.row(0) - e.particles.row(1)).norm();
    const ParticleEnsemble next = stepper.step(e, FlatTarget{2}, rng);
    EXPECT_GT((next.particles.row(0) - next.particles.row(1)).norm(), before);
  }
}

TEST(Step, AdamFirstStepHasStepSizeMagnitude) {
  SvgdConfig cfg;
  cfg.step_size = 0.01;
  SvgdStepper stepper(cfg);
  const Eigen::MatrixXd phi = (Eigen::MatrixXd(2, 2) << 3.0, -0.2, 1e-3, 50.0).finished();
  const Eigen::MatrixXd inc = stepper.increment(phi);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double g = phi(i);
    EXPECT_NEAR(inc(i), 0.01 * g / (std::abs(g) + 1e-8), 1e-12);
  }
}

TEST(Batch, DistinctIndicesInRange) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = SvgdStepper::draw_batch(10, 4, rng);
    ASSERT_EQ(b.size(), 4u);
    std::vector<Eigen::Index> sorted = b;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
    EXPECT_GE(sorted.front(), 0);
    EXPECT_LT(sorted.back(), 10);
  }
  EXPECT_THROW(SvgdStepper::draw_batch(3, 4, rng), InvalidArgument);
  EXPECT_THROW(SvgdStepper::draw_batch(3, 0, rng), InvalidArgument);
}

TEST(Ksd, SingleParticleAtModeOfStandardNormal) {
  const Eigen::MatrixXd p = column({0.0});
  EXPECT_NEAR(empirical_ksd(p, column({0.0}), 1.0), std::sqrt(2.0), 1e-15);
}

TEST(Ksd, DiscriminatesShiftedSamples) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd exact(500, 1);
    for (Eigen::Index i = 0; i < 500; ++i) {
      exact(i, 0) = normal(rng);
    }
    const Eigen::MatrixXd shifted = exact.array() + 2.0;
    const double good = empirical_ksd(exact, -exact, median_bandwidth(exact));
    const double bad = empirical_ksd(shifted, -shifted, median_bandwidth(shifted));
    EXPECT_LT(good, bad) << "seed " << seed;
    EXPECT_GE(good, 0.0);
  }
}

TEST(Ksd, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd p = oracle::random_inputs(rng, 1 + trial % 12, 3);
    const Eigen::MatrixXd s = oracle::random_inputs(rng, p.rows(), 3, 5.0);
    EXPECT_GE(empirical_ksd(p, s, 0.1 + trial * 0.05), 0.0);
  }
}

TEST(ParticleScores, WorkersGiveIdenticalResults) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd p = oracle::random_inputs(rng, 13, 2);
  const GaussianTarget target = correlated_target();
  auto fn = [&](const Eigen::VectorXd &x) { return target.score(x); };
  EXPECT_EQ(particle_scores(p, fn, 1), particle_scores(p, fn, 4));
}

TEST(ParticleScores, WorkerExceptionPropagates) {
  const Eigen::MatrixXd p = column({0.0, 1.0, 2.0, 3.0});
  auto fn = [](const Eigen::VectorXd &x) -> Eigen::VectorXd {
    if (x(0) == 2.0) {
      throw NumericalError("boom");
    }
    return x;
  };
  EXPECT_THROW(particle_scores(p, fn, 3), NumericalError);
}

TEST(Run, ZeroIterationsReturnsInitialDraws) {
  const GaussianTarget target = correlated_target();
  SvgdConfig cfg;
  cfg.particles = 5;
  cfg.iterations = 0;
  cfg.seed = 11;
  const RunResult r = run(target, cfg);
  std::mt19937_64 rng(11);
  const ParticleEnsemble init = initial_ensemble(target, 5, rng);
  EXPECT_EQ(r.ensemble.particles, init.particles);
  ASSERT_EQ(r.trace.rows.size(), 1u);
  EXPECT_EQ(r.trace.rows[0].iteration, 0u);
}

TEST(Run, SeededDeterminismAndWorkerIndependence) {
  std::mt19937_64 rng(8);
  const Dataset d = oracle::random_classification(rng, 12, 1);
  const auto m = make_model_spec(KernelSpec::squared_exponential(1.0, {1.0}),
                                 Likelihood::BernoulliLogit, d);
  const GpTarget target(m, d);
  SvgdConfig cfg;
  cfg.particles = 6;
  cfg.iterations = 15;
  cfg.batch_size = 5;
  cfg.step_size = 0.01;
  cfg.seed = 3;
  const RunResult a = run(target, cfg);
  const RunResult b = run(target, cfg);
  cfg.workers = 3;
  const RunResult c = run(target, cfg);
  EXPECT_EQ(a.ensemble.particles, b.ensemble.particles);
  EXPECT_EQ(a.ensemble.particles, c.ensemble.particles);
  cfg.seed = 4;
  EXPECT_NE(run(target, cfg).ensemble.particles, a.ensemble.particles);
}

TEST(Run, TraceScheduleAndSink) {
  const GaussianTarget target = correlated_target();
  SvgdConfig cfg;
  cfg.particles = 4;
  cfg.iterations = 25;
  cfg.trace_every = 10;
  std::vector<std::size_t> seen;
  const RunResult r = run(target, cfg, [&](const TraceRow &row) { seen.push_back(row.iteration); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 10, 20, 25}));
  ASSERT_EQ(r.trace.rows.size(), 4u);
  EXPECT_EQ(r.trace.rows[0].max_step_norm, 0.0);
  EXPECT_GT(r.trace.rows[1].max_step_norm, 0.0);
  std::ostringstream out;
  write_trace_row(out, r.trace.rows[0]);
  const std::string line = out.str();
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
  EXPECT_STREQ(kTraceHeader, "iteration,ksd,mean_log_target,max_step_norm,elapsed_ms");
}

TEST(Run, ExactModelRejectsMinibatches) {
  std::mt19937_64 rng(9);
  const Dataset d = oracle::random_regression(rng, 8, 1);
  const auto m = make_model_spec(KernelSpec::squared_exponential(1.0, {1.0}),
                                 Likelihood::GaussianNoise, d);
  SvgdConfig cfg;
  cfg.particles = 2;
  cfg.iterations = 1;
  cfg.batch_size = 4;
  EXPECT_THROW(run(GpTarget(m, d), cfg), InvalidArgument);
}

TEST(Run, GaussianTargetMoments) {
  const GaussianTarget target = correlated_target();
  SvgdConfig cfg;
  cfg.particles = 50;
  cfg.iterations = 500;
  cfg.step_size = 0.05;
  cfg.trace_every = 0;
  cfg.seed = 1;
  const RunResult r = run(target, cfg);
  const Eigen::MatrixXd &p = r.ensemble.particles;
  const Eigen::RowVectorXd mean = p.colwise().mean();
  const Eigen::MatrixXd centered = p.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(p.rows());
  Eigen::Matrix2d truth;
  truth << 1.0, 0.6, 0.6, 0.8;
  EXPECT_LT((mean.transpose() - Eigen::Vector2d(1.0, -0.5)).norm(), 0.1);
  EXPECT_LT((cov - truth).norm() / truth.norm(), 0.15);
}
