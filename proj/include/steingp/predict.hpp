#ifndef STEINGP_PREDICT_HPP
#define STEINGP_PREDICT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "steingp/data.hpp"
#include "steingp/errors.hpp"
#include "steingp/models.hpp"
#include "steingp/svgd.hpp"

namespace steingp {

inline constexpr std::size_t kDefaultSamplesPerParticle = 20;

/// Pooled per-query moments over all J*K predictive draws.
struct PredictiveSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance; // population variance
  std::size_t sample_count = 0;
  std::optional<Eigen::VectorXd> probability; // classification only
};

/// Raw draws, one column per (particle, sample) pair in particle-major order.
/// Regression draws are on the de-standardised target scale.
struct PredictiveDraws {
  Likelihood likelihood = Likelihood::GaussianNoise;
  Eigen::MatrixXd latent;         // Q x S sampled f*
  Eigen::MatrixXd response;       // Q x S sampled y*
  Eigen::VectorXd noise_variance; // S, regression only
  std::size_t particles = 0;
  std::size_t per_particle = 0;
};

/// For every particle, sample K independent y* per query point
/// from its conditional predictive. `x_query` lives in the model's (possibly
/// standardised) input space. Particle j draws from its own RNG substream
/// seeded with (seed, j).
inline PredictiveDraws predict_draws(const ParticleEnsemble &ensemble,
                                     const ModelSpec &model, const Dataset &data,
                                     const Eigen::MatrixXd &x_query,
                                     std::size_t samples_per_particle,
                                     std::uint64_t seed) {
  if (samples_per_particle < 1) {
    throw InvalidArgument("predict: need at least one sample per particle");
  }
  if (x_query.cols() != data.dim()) {
    throw InvalidArgument("predict: query dimensionality does not match the data");
  }
  const Eigen::Index q = x_query.rows();
  const auto jn = static_cast<std::size_t>(ensemble.size());
  const auto k = samples_per_particle;
  const auto s_total = static_cast<Eigen::Index>(jn * k);
  const Standardization &st = data.standardization;
  const bool regression = model.likelihood == Likelihood::GaussianNoise;
  const double y_scale = regression && st.applied ? st.y_std : 1.0;
  const double y_shift = regression && st.applied ? st.y_mean : 0.0;

  PredictiveDraws out;
  out.likelihood = model.likelihood;
  out.particles = jn;
  out.per_particle = k;
  out.latent.resize(q, s_total);
  out.response.resize(q, s_total);
  out.noise_variance = Eigen::VectorXd::Zero(s_total);

  for (std::size_t j = 0; j < jn; ++j) {
    const Eigen::VectorXd lambda = ensemble.particles.row(static_cast<Eigen::Index>(j)).transpose();
    const ModelParams p = unpack(model, forward(lambda, model.layout));
    const LatentPredictive lp = latent_predictor(model, p, data, x_query);
    const Eigen::VectorXd sd = lp.variance.cwiseSqrt();
    const double noise_sd = std::sqrt(p.noise_variance);

    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(j)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (std::size_t s = 0; s < k; ++s) {
      const auto col = static_cast<Eigen::Index>(j * k + s);
      for (Eigen::Index i = 0; i < q; ++i) {
        const double f = lp.mean(i) + sd(i) * normal(rng);
        if (regression) {
          const double y = f + noise_sd * normal(rng);
          out.latent(i, col) = f * y_scale + y_shift;
          out.response(i, col) = y * y_scale + y_shift;
        } else {
          out.latent(i, col) = f;
          out.response(i, col) = unif(rng) < sigmoid(f) ? 1.0 : 0.0;
        }
      }
      out.noise_variance(col) = regression ? p.noise_variance * y_scale * y_scale : 0.0;
    }
  }
  return out;
}

inline PredictiveSummary summarize(const PredictiveDraws &draws) {
  PredictiveSummary s;
  const double n = static_cast<double>(draws.response.cols());
  s.sample_count = static_cast<std::size_t>(draws.response.cols());
  s.mean = draws.response.rowwise().mean();
  s.variance =
      ((draws.response.colwise() - s.mean).array().square().rowwise().sum() / n).matrix();
  if (draws.likelihood == Likelihood::BernoulliLogit) {
    s.probability = draws.latent.unaryExpr([](double f) { return sigmoid(f); })
                        .rowwise()
                        .mean();
  }
  return s;
}

inline PredictiveSummary predict(const ParticleEnsemble &ensemble,
                                 const ModelSpec &model, const Dataset &data,
                                 const Eigen::MatrixXd &x_query,
                                 std::size_t samples_per_particle, std::uint64_t seed) {
  return summarize(
      predict_draws(ensemble, model, data, x_query, samples_per_particle, seed));
}

struct Metrics {
  double rmse = 0.0;
  double test_log_likelihood = 0.0;
};

inline double rmse(const Eigen::VectorXd &prediction, const Eigen::VectorXd &truth) {
  if (prediction.size() != truth.size()) {
    throw InvalidArgument("rmse: length mismatch");
  }
  if (truth.size() == 0) {
    throw InvalidArgument("rmse: empty test set");
  }
  return std::sqrt((prediction - truth).squaredNorm() / static_cast<double>(truth.size()));
}

/// RMSE of the pooled mean, and the mean over test points of the log of the
/// sample-average predictive density p(y_i | f*_s) (a log-mean-exp).
inline Metrics metrics(const PredictiveDraws &draws, const Eigen::VectorXd &y_true) {
  if (y_true.size() == 0) {
    throw InvalidArgument("metrics: empty test set");
  }
  if (draws.response.rows() != y_true.size()) {
    throw InvalidArgument("metrics: prediction and target lengths differ");
  }
  Metrics m;
  m.rmse = rmse(draws.response.rowwise().mean(), y_true);
  const Eigen::Index s_total = draws.latent.cols();
  std::vector<double> logs(static_cast<std::size_t>(s_total));
  double total = 0.0;
  for (Eigen::Index i = 0; i < y_true.size(); ++i) {
    for (Eigen::Index s = 0; s < s_total; ++s) {
      const double f = draws.latent(i, s);
      double lp = 0.0;
      if (draws.likelihood == Likelihood::GaussianNoise) {
        const double v = draws.noise_variance(s);
        const double r = y_true(i) - f;
        lp = -0.5 * (kLog2Pi + std::log(v)) - 0.5 * r * r / v;
      } else {
        lp = y_true(i) * f - softplus(f);
      }
      logs[static_cast<std::size_t>(s)] = lp;
    }
    const double mx = *std::max_element(logs.begin(), logs.end());
    double acc = 0.0;
    for (double l : logs) {
      acc += std::exp(l - mx);
    }
    total += mx + std::log(acc / static_cast<double>(s_total));
  }
  m.test_log_likelihood = total / static_cast<double>(y_true.size());
  return m;
}

} // namespace steingp

#endif // STEINGP_PREDICT_HPP
