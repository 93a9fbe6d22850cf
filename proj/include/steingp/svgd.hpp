#ifndef STEINGP_SVGD_HPP
#define STEINGP_SVGD_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "steingp/errors.hpp"
#include "steingp/models.hpp"

namespace steingp {

/// J particles stored as rows of a J x d matrix.
struct ParticleEnsemble {
  Eigen::MatrixXd particles;
  std::size_t iteration = 0;

  Eigen::Index size() const { return particles.rows(); }
  Eigen::Index dim() const { return particles.cols(); }
};

enum class StepRule { Adam, Plain };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SvgdConfig {
  std::size_t particles = 20;
  std::size_t iterations = 1000;
  double step_size = 0.05;
  std::optional<std::size_t> batch_size;
  std::uint64_t seed = 0;
  StepRule rule = StepRule::Adam;
  AdamConfig adam;
  std::size_t trace_every = 10;
  std::size_t workers = 1;
};

// ---------------------------------------------------------------------------
// Targets

/// Anything SVGD can transport particles toward.
template <typename T>
concept ScoreTarget = requires(const T &t, const Eigen::VectorXd &x) {
  { t.dimension() } -> std::convertible_to<Eigen::Index>;
  { t.score(x) } -> std::convertible_to<Eigen::VectorXd>;
  { t.log_density(x) } -> std::convertible_to<double>;
};

/// A target whose likelihood factorises over `num_data()` points.
template <typename T>
concept MinibatchTarget =
    ScoreTarget<T> && requires(const T &t, const Eigen::VectorXd &x,
                               std::span<const Eigen::Index> batch) {
      { t.num_data() } -> std::convertible_to<Eigen::Index>;
      { t.minibatch_score(x, batch) } -> std::convertible_to<Eigen::VectorXd>;
    };

/// GP posterior over unconstrained parameters.
class GpTarget {
public:
  GpTarget(const ModelSpec &model, const Dataset &data) : model_(&model), data_(&data) {}

  Eigen::Index dimension() const {
    return static_cast<Eigen::Index>(model_->layout.dimension());
  }
  Eigen::Index num_data() const { return data_->size(); }

  Eigen::VectorXd score(const Eigen::VectorXd &x) const {
    return steingp::score(*model_, x, *data_);
  }
  Eigen::VectorXd minibatch_score(const Eigen::VectorXd &x,
                                  std::span<const Eigen::Index> batch) const {
    return steingp::minibatch_score(*model_, x, *data_, batch);
  }
  double log_density(const Eigen::VectorXd &x) const {
    return log_target(*model_, x, *data_);
  }

  template <typename Rng> Eigen::VectorXd draw_initial(Rng &rng) const {
    return steingp::draw_initial(model_->layout, model_->priors, rng);
  }

  const ModelSpec &model() const { return *model_; }
  const Dataset &data() const { return *data_; }

private:
  const ModelSpec *model_;
  const Dataset *data_;
};

/// Multivariate normal N(mean, cov), mainly for validating the transport.
class GaussianTarget {
public:
  GaussianTarget(Eigen::VectorXd mean, const Eigen::MatrixXd &cov)
      : mean_(std::move(mean)), precision_(cov.inverse()) {
    log_norm_ = -0.5 * static_cast<double>(mean_.size()) * kLog2Pi -
                0.5 * std::log(cov.determinant());
  }

  Eigen::Index dimension() const { return mean_.size(); }
  Eigen::VectorXd score(const Eigen::VectorXd &x) const {
    return -precision_ * (x - mean_);
  }
  double log_density(const Eigen::VectorXd &x) const {
    const Eigen::VectorXd d = x - mean_;
    return log_norm_ - 0.5 * d.dot(precision_ * d);
  }

  /// Initial particles are standard normal draws, independent of the target.
  template <typename Rng> Eigen::VectorXd draw_initial(Rng &rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd x(mean_.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x(i) = normal(rng);
    }
    return x;
  }

private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd precision_;
  double log_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// RBF interaction kernel

/// Median heuristic: l^2 = med^2 / log(J + 1) over distinct pairs; 1.0 when
/// J = 1 or the median distance is zero.
inline double median_bandwidth(const Eigen::MatrixXd &particles) {
  const Eigen::Index j = particles.rows();
  if (j < 2) {
    return 1.0;
  }
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(j * (j - 1) / 2));
  for (Eigen::Index a = 0; a < j; ++a) {
    for (Eigen::Index b = a + 1; b < j; ++b) {
      dist.push_back((particles.row(a) - particles.row(b)).norm());
    }
  }
  std::sort(dist.begin(), dist.end());
  const std::size_t n = dist.size();
  const double med = n % 2 == 1 ? dist[n / 2] : 0.5 * (dist[n / 2 - 1] + dist[n / 2]);
  if (!(med > 0.0) || !std::isfinite(med)) {
    return 1.0;
  }
  return med * med / std::log(static_cast<double>(j) + 1.0);
}

struct RbfValue {
  double value = 0.0;
  Eigen::VectorXd grad_first; // gradient w.r.t. the first argument
};

/// kappa(a, b) = exp(-|a - b|^2 / l2) and its gradient in `a`.
inline RbfValue svgd_kernel(const Eigen::Ref<const Eigen::VectorXd> &a,
                            const Eigen::Ref<const Eigen::VectorXd> &b, double ell2) {
  if (!(ell2 > 0.0)) {
    throw InvalidArgument("svgd_kernel: bandwidth must be positive");
  }
  if (a.size() != b.size()) {
    throw InvalidArgument("svgd_kernel: argument lengths differ");
  }
  RbfValue out;
  const Eigen::VectorXd diff = a - b;
  out.value = std::exp(-diff.squaredNorm() / ell2);
  out.grad_first = (-2.0 / ell2 * out.value) * diff;
  return out;
}

namespace detail {

inline void check_scores(const Eigen::MatrixXd &scores) {
  for (Eigen::Index j = 0; j < scores.rows(); ++j) {
    if (!scores.row(j).allFinite()) {
      throw NumericalError("non-finite score at particle " + std::to_string(j));
    }
  }
}

// Order-independent sum: sorting first makes the result a function of the
// multiset of terms, so reordering particles reorders outputs exactly.
inline double canonical_sum(std::vector<double> &terms) {
  std::sort(terms.begin(), terms.end());
  double total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    total += terms[i];
  }
  return total;
}

} // namespace detail

/// phi(x_i) = 1/J sum_j [kappa(x_j, x_i) s_j + grad_{x_j} kappa(x_j, x_i)],
/// self term included.
inline Eigen::MatrixXd update_direction(const Eigen::MatrixXd &particles,
                                        const Eigen::MatrixXd &scores, double ell2) {
  if (scores.rows() != particles.rows() || scores.cols() != particles.cols()) {
    throw InvalidArgument("update_direction: scores shape does not match particles");
  }
  if (!(ell2 > 0.0)) {
    throw InvalidArgument("update_direction: bandwidth must be positive");
  }
  detail::check_scores(scores);
  const Eigen::Index jn = particles.rows();
  const Eigen::Index d = particles.cols();
  Eigen::MatrixXd phi(jn, d);
  Eigen::MatrixXd kv(jn, 1);
  Eigen::MatrixXd diffs(jn, d);
  std::vector<double> terms(static_cast<std::size_t>(jn));
  for (Eigen::Index i = 0; i < jn; ++i) {
    for (Eigen::Index j = 0; j < jn; ++j) {
      diffs.row(j) = particles.row(j) - particles.row(i);
      kv(j) = std::exp(-diffs.row(j).squaredNorm() / ell2);
    }
    for (Eigen::Index c = 0; c < d; ++c) {
      for (Eigen::Index j = 0; j < jn; ++j) {
        const double repulse = -2.0 * diffs(j, c) / ell2 * kv(j);
        terms[static_cast<std::size_t>(j)] = kv(j) * scores(j, c) + repulse;
      }
      phi(i, c) = detail::canonical_sum(terms) / static_cast<double>(jn);
    }
  }
  return phi;
}

/// Kernelized Stein discrepancy (V-statistic) of the particles against the
/// target whose scores are given, with the RBF kernel at bandwidth l2.
inline double empirical_ksd(const Eigen::MatrixXd &particles,
                            const Eigen::MatrixXd &scores, double ell2) {
  if (particles.rows() < 1) {
    throw InvalidArgument("empirical_ksd: empty ensemble");
  }
  const Eigen::Index jn = particles.rows();
  const double d = static_cast<double>(particles.cols());
  double total = 0.0;
  for (Eigen::Index a = 0; a < jn; ++a) {
    for (Eigen::Index b = 0; b < jn; ++b) {
      const Eigen::RowVectorXd diff = particles.row(a) - particles.row(b);
      const double r2 = diff.squaredNorm();
      const double k = std::exp(-r2 / ell2);
      // grad_a k = -2 diff / l2 k ; grad_b k = +2 diff / l2 k
      const double ss = scores.row(a).dot(scores.row(b)) * k;
      const double s_a_grad_b = 2.0 / ell2 * k * scores.row(a).dot(diff);
      const double s_b_grad_a = -2.0 / ell2 * k * scores.row(b).dot(diff);
      const double trace = (2.0 * d / ell2 - 4.0 * r2 / (ell2 * ell2)) * k;
      total += ss + s_a_grad_b + s_b_grad_a + trace;
    }
  }
  total /= static_cast<double>(jn * jn);
  return std::sqrt(std::max(total, 0.0));
}

/// Scores of every particle, optionally split across worker threads.
template <typename ScoreFn>
Eigen::MatrixXd particle_scores(const Eigen::MatrixXd &particles, ScoreFn &&fn,
                                std::size_t workers = 1) {
  const Eigen::Index jn = particles.rows();
  Eigen::MatrixXd scores(jn, particles.cols());
  auto work = [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index j = begin; j < end; ++j) {
      const Eigen::VectorXd x = particles.row(j).transpose();
      const Eigen::VectorXd s = fn(x);
      if (s.size() != particles.cols()) {
        throw InvalidArgument("score has wrong dimension");
      }
      scores.row(j) = s.transpose();
    }
  };
  const auto nw = static_cast<Eigen::Index>(
      std::clamp<std::size_t>(workers, 1, static_cast<std::size_t>(std::max<Eigen::Index>(jn, 1))));
  if (nw <= 1) {
    work(0, jn);
    return scores;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nw));
  {
    std::vector<std::jthread> pool;
    for (Eigen::Index w = 0; w < nw; ++w) {
      const Eigen::Index begin = jn * w / nw;
      const Eigen::Index end = jn * (w + 1) / nw;
      pool.emplace_back([&, w, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Stepping

/// Applies phi to the ensemble: plain Euler steps or Adam with one moment
/// state per particle coordinate.
class SvgdStepper {
public:
  explicit SvgdStepper(SvgdConfig config) : config_(std::move(config)) {
    if (!(config_.step_size > 0.0)) {
      throw InvalidArgument("SVGD step size must be positive");
    }
  }

  const SvgdConfig &config() const { return config_; }

  /// Increment to add to the particles for direction `phi`.
  Eigen::MatrixXd increment(const Eigen::MatrixXd &phi) {
    if (config_.rule == StepRule::Plain) {
      return config_.step_size * phi;
    }
    if (m_.rows() != phi.rows() || m_.cols() != phi.cols()) {
      m_ = Eigen::MatrixXd::Zero(phi.rows(), phi.cols());
      v_ = Eigen::MatrixXd::Zero(phi.rows(), phi.cols());
      t_ = 0;
    }
    ++t_;
    const auto &a = config_.adam;
    m_ = a.beta1 * m_ + (1.0 - a.beta1) * phi;
    v_ = a.beta2 * v_ + (1.0 - a.beta2) * phi.cwiseAbs2();
    const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(t_));
    return config_.step_size *
           ((m_.array() / c1) / ((v_.array() / c2).sqrt() + a.eps)).matrix();
  }

  /// One synchronous update of every particle from the current ensemble.
  template <ScoreTarget Target, typename Rng>
  ParticleEnsemble step(const ParticleEnsemble &ensemble, const Target &target,
                        Rng &rng, double *max_step_norm = nullptr) {
    const Eigen::MatrixXd scores = compute_scores(ensemble, target, rng);
    const double ell2 = median_bandwidth(ensemble.particles);
    const Eigen::MatrixXd phi = update_direction(ensemble.particles, scores, ell2);
    const Eigen::MatrixXd delta = increment(phi);
    if (max_step_norm != nullptr) {
      *max_step_norm = delta.rowwise().norm().maxCoeff();
    }
    ParticleEnsemble next;
    next.particles = ensemble.particles + delta;
    next.iteration = ensemble.iteration + 1;
    return next;
  }

private:
  template <ScoreTarget Target, typename Rng>
  Eigen::MatrixXd compute_scores(const ParticleEnsemble &ensemble,
                                 const Target &target, Rng &rng) {
    if (config_.batch_size) {
      if constexpr (MinibatchTarget<Target>) {
        const std::vector<Eigen::Index> batch =
            draw_batch(target.num_data(), *config_.batch_size, rng);
        return particle_scores(
            ensemble.particles,
            [&](const Eigen::VectorXd &x) { return target.minibatch_score(x, batch); },
            config_.workers);
      } else {
        throw InvalidArgument("batch_size set but the target does not support "
                              "mini-batches");
      }
    }
    return particle_scores(
        ensemble.particles, [&](const Eigen::VectorXd &x) { return target.score(x); },
        config_.workers);
  }

public:
  /// `size` distinct indices from [0, n), partial Fisher-Yates.
  template <typename Rng>
  static std::vector<Eigen::Index> draw_batch(Eigen::Index n, std::size_t size,
                                              Rng &rng) {
    if (size < 1 || static_cast<Eigen::Index>(size) > n) {
      throw InvalidArgument("batch size must lie in [1, N]");
    }
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      idx[static_cast<std::size_t>(i)] = i;
    }
    for (std::size_t i = 0; i < size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(size);
    return idx;
  }

private:
  SvgdConfig config_;
  Eigen::MatrixXd m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Traces and the main loop

struct TraceRow {
  std::size_t iteration = 0;
  double ksd = 0.0;
  double mean_log_target = 0.0;
  double max_step_norm = 0.0;
  double elapsed_ms = 0.0;
};

struct RunTrace {
  std::vector<TraceRow> rows;
};

inline const char *kTraceHeader = "iteration,ksd,mean_log_target,max_step_norm,elapsed_ms";

inline void write_trace_row(std::ostream &out, const TraceRow &r) {
  out << r.iteration << ',' << r.ksd << ',' << r.mean_log_target << ','
      << r.max_step_norm << ',' << r.elapsed_ms << '\n';
}

template <ScoreTarget Target>
TraceRow trace_row(const ParticleEnsemble &ensemble, const Target &target,
                   std::size_t workers) {
  TraceRow row;
  row.iteration = ensemble.iteration;
  const Eigen::MatrixXd scores = particle_scores(
      ensemble.particles, [&](const Eigen::VectorXd &x) { return target.score(x); },
      workers);
  row.ksd = empirical_ksd(ensemble.particles, scores,
                          median_bandwidth(ensemble.particles));
  double total = 0.0;
  for (Eigen::Index j = 0; j < ensemble.size(); ++j) {
    total += target.log_density(ensemble.particles.row(j).transpose());
  }
  row.mean_log_target = total / static_cast<double>(ensemble.size());
  return row;
}

/// q0 draws for targets that know their own initial distribution.
template <typename Target, typename Rng>
ParticleEnsemble initial_ensemble(const Target &target, std::size_t count, Rng &rng) {
  if (count < 1) {
    throw InvalidArgument("need at least one particle");
  }
  ParticleEnsemble e;
  e.particles.resize(static_cast<Eigen::Index>(count), target.dimension());
  for (Eigen::Index j = 0; j < e.size(); ++j) {
    e.particles.row(j) = target.draw_initial(rng).transpose();
  }
  return e;
}

struct RunResult {
  ParticleEnsemble ensemble;
  RunTrace trace;
};

using TraceSink = std::function<void(const TraceRow &)>;

/// Runs `config.iterations` steps from `initial`. Trace rows are emitted at
/// iteration 0, every `trace_every` steps, and at the final step; each row is
/// handed to `sink` as soon as it exists, so a failure leaves the trace so far.
template <ScoreTarget Target, typename Rng>
RunResult run_from(const Target &target, ParticleEnsemble initial,
                   const SvgdConfig &config, Rng &rng, const TraceSink &sink = {}) {
  if (initial.dim() != target.dimension()) {
    throw InvalidArgument("initial ensemble dimension does not match the target");
  }
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     start)
        .count();
  };
  RunResult result;
  auto record = [&](const ParticleEnsemble &e, double step_norm) {
    if (config.trace_every == 0) {
      return;
    }
    TraceRow row = trace_row(e, target, config.workers);
    row.max_step_norm = step_norm;
    row.elapsed_ms = elapsed();
    result.trace.rows.push_back(row);
    if (sink) {
      sink(row);
    }
  };

  SvgdStepper stepper(config);
  ParticleEnsemble current = std::move(initial);
  record(current, 0.0);
  for (std::size_t t = 1; t <= config.iterations; ++t) {
    double step_norm = 0.0;
    current = stepper.step(current, target, rng, &step_norm);
    if (config.trace_every != 0 &&
        (t % config.trace_every == 0 || t == config.iterations)) {
      record(current, step_norm);
    }
  }
  result.ensemble = std::move(current);
  return result;
}

/// Seeded q0 draws, then the SVGD loop. The RNG
/// stream is consumed in a fixed order (initialisation, then one batch per
/// iteration) so results do not depend on the worker count.
template <typename Target>
RunResult run(const Target &target, const SvgdConfig &config,
              const TraceSink &sink = {}) {
  std::mt19937_64 rng(config.seed);
  ParticleEnsemble initial = initial_ensemble(target, config.particles, rng);
  return run_from(target, std::move(initial), config, rng, sink);
}

} // namespace steingp

#endif // STEINGP_SVGD_HPP
