#ifndef STEINGP_MODELS_HPP
#define STEINGP_MODELS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "steingp/data.hpp"
#include "steingp/errors.hpp"
#include "steingp/kernels.hpp"
#include "steingp/linalg.hpp"
#include "steingp/params.hpp"

namespace steingp {

enum class Likelihood { GaussianNoise, BernoulliLogit };

/// Which target density a ModelSpec describes.
enum class ModelKind {
  ExactGaussian, // f marginalised, particles carry hyperparameters only
  Whitened,      // f = L nu over the training inputs
  Sparse,        // f = K_xz K_zz^-1 L_zz nu over inducing inputs Z
};

inline const std::string kNoiseBlock = "likelihood.variance";
inline const std::string kLatentBlock = "latent.nu";

struct ModelSpec {
  KernelSpec kernel;
  Likelihood likelihood = Likelihood::GaussianNoise;
  ParamLayout layout;
  PriorSpec priors;
  std::optional<Eigen::MatrixXd> inducing;
  bool whitened = false;
  Eigen::Index n_data = 0;
  Eigen::Index input_dim = 0;

  ModelKind kind() const {
    if (inducing) {
      return ModelKind::Sparse;
    }
    return whitened ? ModelKind::Whitened : ModelKind::ExactGaussian;
  }

  std::size_t kernel_param_count() const { return hyperparameter_count(kernel); }
  bool has_noise() const { return likelihood == Likelihood::GaussianNoise; }
  Eigen::Index latent_size() const {
    if (!whitened) {
      return 0;
    }
    return inducing ? inducing->rows() : n_data;
  }
};

struct ModelOptions {
  bool whitened = false;
  std::optional<Eigen::MatrixXd> inducing;
  /// Prior on every sigma, lengthscale and noise variance block.
  Prior hyper_prior = Prior::gamma(1.0, 2.0);
};

/// Builds the parameter layout and priors for a kernel/likelihood pair.
/// Bernoulli likelihoods and inducing points force the whitened form.
inline ModelSpec make_model_spec(KernelSpec kernel, Likelihood likelihood,
                                 const Dataset &data, ModelOptions options = {}) {
  validate(kernel, data.dim());
  ModelSpec m;
  m.kernel = std::move(kernel);
  m.likelihood = likelihood;
  m.n_data = data.size();
  m.input_dim = data.dim();
  m.inducing = std::move(options.inducing);
  m.whitened = options.whitened || likelihood == Likelihood::BernoulliLogit ||
               m.inducing.has_value();
  if (m.inducing) {
    if (m.inducing->cols() != data.dim()) {
      throw InvalidArgument("inducing points have dimensionality " +
                            std::to_string(m.inducing->cols()) + ", data has " +
                            std::to_string(data.dim()));
    }
    if (m.inducing->rows() < 1 || m.inducing->rows() > data.size()) {
      throw InvalidArgument("inducing point count must lie in [1, N]");
    }
  }
  if (likelihood == Likelihood::BernoulliLogit && data.task != Task::Classification) {
    throw InvalidArgument("Bernoulli likelihood requires a classification dataset");
  }

  for (const auto &block : hyperparameter_blocks(m.kernel)) {
    m.layout.add({block.name, block.length, Transform::Softplus});
    if (block.kind != HyperKind::Offset &&
        options.hyper_prior.kind != Prior::Kind::None) {
      m.priors[block.name] = options.hyper_prior;
    }
  }
  if (m.has_noise()) {
    m.layout.add({kNoiseBlock, 1, Transform::Softplus});
    if (options.hyper_prior.kind != Prior::Kind::None) {
      m.priors[kNoiseBlock] = options.hyper_prior;
    }
  }
  if (m.whitened) {
    m.layout.add({kLatentBlock, static_cast<std::size_t>(m.latent_size()),
                  Transform::Identity});
    m.priors[kLatentBlock] = Prior::standard_normal();
  }
  return m;
}

/// Constrained parameter vector split into its model roles.
struct ModelParams {
  KernelSpec kernel;
  double noise_variance = 0.0;
  Eigen::VectorXd nu;
};

inline ModelParams unpack(const ModelSpec &m,
                          const Eigen::Ref<const Eigen::VectorXd> &constrained) {
  if (static_cast<std::size_t>(constrained.size()) != m.layout.dimension()) {
    throw InvalidArgument("parameter vector has length " +
                          std::to_string(constrained.size()) + ", layout needs " +
                          std::to_string(m.layout.dimension()));
  }
  ModelParams p;
  const auto nk = static_cast<Eigen::Index>(m.kernel_param_count());
  p.kernel = with_hyperparameters(m.kernel, constrained.head(nk));
  if (m.has_noise()) {
    p.noise_variance = constrained(static_cast<Eigen::Index>(
        m.layout.offset(m.layout.find(kNoiseBlock))));
  }
  if (m.whitened) {
    const auto off =
        static_cast<Eigen::Index>(m.layout.offset(m.layout.find(kLatentBlock)));
    p.nu = constrained.segment(off, m.latent_size());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Per-datum likelihood

struct PointLikelihood {
  double log_p = 0.0;
  double d_f = 0.0;     // d log p / d f
  double d_noise = 0.0; // d log p / d noise variance
};

inline PointLikelihood point_likelihood(Likelihood lik, double y, double f,
                                        double noise_variance) {
  PointLikelihood out;
  if (lik == Likelihood::GaussianNoise) {
    const double r = y - f;
    out.log_p = -0.5 * (kLog2Pi + std::log(noise_variance)) -
                0.5 * r * r / noise_variance;
    out.d_f = r / noise_variance;
    out.d_noise =
        -0.5 / noise_variance + 0.5 * r * r / (noise_variance * noise_variance);
  } else {
    // log sigmoid(f) for y = 1, log sigmoid(-f) for y = 0
    out.log_p = y * f - softplus(f);
    out.d_f = y - sigmoid(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exact Gaussian marginal likelihood

/// log N(y; 0, K + s2 I) through a Cholesky factorization.
inline double log_marginal_gaussian(const KernelSpec &kernel, double noise_variance,
                                    const Dataset &data) {
  Eigen::MatrixXd k = gram(kernel, data.x).values;
  k.diagonal().array() += noise_variance;
  const CholeskyFactor chol = robust_cholesky(k);
  const Eigen::VectorXd w = chol.solve_lower(data.y);
  return -0.5 * w.squaredNorm() - 0.5 * chol.log_determinant() -
         0.5 * static_cast<double>(data.size()) * kLog2Pi;
}

namespace detail {

struct TermGrad {
  double value = 0.0;
  Eigen::VectorXd kernel; // d/d kernel hyperparameters
  double noise = 0.0;     // d/d noise variance
  Eigen::VectorXd nu;     // d/d whitened latents
};

inline TermGrad exact_gaussian_terms(const ModelSpec &, const ModelParams &p,
                                     const Dataset &data, bool want_grad) {
  TermGrad out;
  std::vector<Eigen::MatrixXd> dk;
  Eigen::MatrixXd k;
  if (want_grad) {
    k = gram_with_grads(p.kernel, data.x, dk);
  } else {
    k = gram(p.kernel, data.x).values;
  }
  k.diagonal().array() += p.noise_variance;
  const CholeskyFactor chol = robust_cholesky(k);
  const Eigen::VectorXd alpha = chol.solve(data.y);
  out.value = -0.5 * data.y.dot(alpha) - 0.5 * chol.log_determinant() -
              0.5 * static_cast<double>(data.size()) * kLog2Pi;
  if (!want_grad) {
    return out;
  }
  // d/d theta_i = 1/2 tr((alpha alpha^T - K^-1) dK/d theta_i)
  const Eigen::Index n = data.size();
  Eigen::MatrixXd q = alpha * alpha.transpose() -
                      chol.solve(Eigen::MatrixXd::Identity(n, n));
  out.kernel.resize(static_cast<Eigen::Index>(dk.size()));
  for (std::size_t i = 0; i < dk.size(); ++i) {
    out.kernel(static_cast<Eigen::Index>(i)) = 0.5 * q.cwiseProduct(dk[i]).sum();
  }
  out.noise = 0.5 * q.trace();
  return out;
}

// Lower triangle of a b^T with the diagonal halved: the pairing produced by
// the Cholesky derivative dL = L Phi(L^-1 dK L^-T).
inline Eigen::MatrixXd half_lower_outer(const Eigen::VectorXd &a,
                                        const Eigen::VectorXd &b) {
  Eigen::MatrixXd w = (a * b.transpose()).triangularView<Eigen::Lower>();
  w.diagonal() *= 0.5;
  return w;
}

// L^-T W L^-1
inline Eigen::MatrixXd sandwich_inverse(const CholeskyFactor &chol,
                                        const Eigen::MatrixXd &w) {
  auto upper = chol.lower.transpose().triangularView<Eigen::Upper>();
  Eigen::MatrixXd t = upper.solve(w.transpose()); // (W L^-1)^T
  return upper.solve(t.transpose());
}

// Accumulates the per-row likelihood terms over `rows` (all rows when empty)
// with weight `scale`, returning the weighted d log p / d f in `g_f`.
inline double accumulate_rows(const ModelSpec &m, const ModelParams &p,
                              const Dataset &data, const Eigen::VectorXd &f,
                              std::span<const Eigen::Index> rows,
                              std::span<const Eigen::Index> f_index, double scale,
                              Eigen::VectorXd *g_f, double *g_noise) {
  double total = 0.0;
  const std::size_t count =
      rows.empty() ? static_cast<std::size_t>(data.size()) : rows.size();
  for (std::size_t r = 0; r < count; ++r) {
    const Eigen::Index i = rows.empty() ? static_cast<Eigen::Index>(r) : rows[r];
    const Eigen::Index fi =
        f_index.empty() ? i : f_index[r];
    const PointLikelihood pl =
        point_likelihood(m.likelihood, data.y(i), f(fi), p.noise_variance);
    total += scale * pl.log_p;
    if (g_f != nullptr) {
      (*g_f)(fi) += scale * pl.d_f;
      *g_noise += scale * pl.d_noise;
    }
  }
  return total;
}

// Likelihood part of the whitened full model, f = L nu.
inline TermGrad whitened_terms(const ModelSpec &m, const ModelParams &p,
                               const Dataset &data, std::span<const Eigen::Index> rows,
                               double scale, bool want_grad) {
  TermGrad out;
  std::vector<Eigen::MatrixXd> dk;
  const Eigen::MatrixXd k = want_grad ? gram_with_grads(p.kernel, data.x, dk)
                                      : gram(p.kernel, data.x).values;
  const CholeskyFactor chol = robust_cholesky(k);
  const Eigen::VectorXd f = chol.lower.triangularView<Eigen::Lower>() * p.nu;
  Eigen::VectorXd g_f = Eigen::VectorXd::Zero(f.size());
  out.value = accumulate_rows(m, p, data, f, rows, {}, scale,
                              want_grad ? &g_f : nullptr, &out.noise);
  if (!want_grad) {
    return out;
  }
  // d/d nu = L^T g_f ; d/d theta = g_f^T dL nu = sum(dK .* L^-T W L^-1)
  out.nu = chol.lower.transpose().triangularView<Eigen::Upper>() * g_f;
  const Eigen::MatrixXd b = sandwich_inverse(chol, half_lower_outer(out.nu, p.nu));
  out.kernel.resize(static_cast<Eigen::Index>(dk.size()));
  for (std::size_t i = 0; i < dk.size(); ++i) {
    out.kernel(static_cast<Eigen::Index>(i)) = dk[i].cwiseProduct(b).sum();
  }
  return out;
}

// Cross-covariance between query rows and inducing sites, with the Gram
// jitter also placed on exactly coincident (query, site) pairs so that a
// query at a site reproduces that site's latent value.
inline void add_coincident_jitter(Eigen::MatrixXd &kqz, const Eigen::MatrixXd &xq,
                                  const Eigen::MatrixXd &z, double jitter) {
  for (Eigen::Index i = 0; i < xq.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      if (xq.row(i) == z.row(j)) {
        kqz(i, j) += jitter;
      }
    }
  }
}

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd &x,
                               std::span<const Eigen::Index> rows) {
  if (rows.empty()) {
    return x;
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
  }
  return out;
}

// Likelihood part of the sparse model, f = K_xz L_zz^-T nu. Only the rows in
// `rows` (all when empty) are touched, so mini-batches cost O(|rows| M^2).
inline TermGrad sparse_terms(const ModelSpec &m, const ModelParams &p,
                             const Dataset &data, std::span<const Eigen::Index> rows,
                             double scale, bool want_grad) {
  TermGrad out;
  const Eigen::MatrixXd &z = *m.inducing;
  std::vector<Eigen::MatrixXd> dkzz, dkxz;
  const Eigen::MatrixXd kzz = want_grad ? gram_with_grads(p.kernel, z, dkzz)
                                        : gram(p.kernel, z).values;
  const CholeskyFactor chol = robust_cholesky(kzz);
  const Eigen::MatrixXd xr = rows_of(data.x, rows);
  Eigen::MatrixXd kxz = want_grad ? cross_gram_with_grads(p.kernel, xr, z, dkxz)
                                  : gram(p.kernel, xr, z).values;
  add_coincident_jitter(kxz, xr, z, chol.jitter);
  const Eigen::VectorXd c = chol.solve_upper(p.nu);
  const Eigen::VectorXd f = kxz * c;

  std::vector<Eigen::Index> local(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    local[r] = static_cast<Eigen::Index>(r);
  }
  Eigen::VectorXd g_f = Eigen::VectorXd::Zero(f.size());
  out.value = accumulate_rows(m, p, data, f, rows, local, scale,
                              want_grad ? &g_f : nullptr, &out.noise);
  if (!want_grad) {
    return out;
  }
  // d/d nu = L^-1 K_zx g_f
  out.nu = chol.solve_lower(kxz.transpose() * g_f);
  // d/d theta = g_f^T dK_xz c - sum(dK_zz .* L^-T W L^-1), W = tril(nu b^T)
  const Eigen::MatrixXd b = sandwich_inverse(chol, half_lower_outer(p.nu, out.nu));
  out.kernel.resize(static_cast<Eigen::Index>(dkzz.size()));
  for (std::size_t i = 0; i < dkzz.size(); ++i) {
    out.kernel(static_cast<Eigen::Index>(i)) =
        g_f.dot(dkxz[i] * c) - dkzz[i].cwiseProduct(b).sum();
  }
  return out;
}

inline TermGrad likelihood_terms(const ModelSpec &m, const ModelParams &p,
                                 const Dataset &data,
                                 std::span<const Eigen::Index> rows, double scale,
                                 bool want_grad) {
  switch (m.kind()) {
  case ModelKind::ExactGaussian:
    return exact_gaussian_terms(m, p, data, want_grad);
  case ModelKind::Whitened:
    return whitened_terms(m, p, data, rows, scale, want_grad);
  case ModelKind::Sparse:
    return sparse_terms(m, p, data, rows, scale, want_grad);
  }
  throw InvalidArgument("unknown model kind");
}

inline void check_data(const ModelSpec &m, const Dataset &data) {
  if (data.size() != m.n_data || data.dim() != m.input_dim) {
    throw InvalidArgument("dataset shape does not match the model (" +
                          std::to_string(data.size()) + "x" +
                          std::to_string(data.dim()) + " vs " +
                          std::to_string(m.n_data) + "x" +
                          std::to_string(m.input_dim) + ")");
  }
}

// Chains constrained-space gradients through the transform and adds the
// log-Jacobian gradient.
inline Eigen::VectorXd assemble_score(const ModelSpec &m,
                                      const Eigen::VectorXd &lambda,
                                      const Eigen::VectorXd &constrained,
                                      const TermGrad &terms) {
  Eigen::VectorXd g = log_prior(constrained, m.priors, m.layout).grad;
  const auto nk = static_cast<Eigen::Index>(m.kernel_param_count());
  g.head(nk) += terms.kernel;
  if (m.has_noise()) {
    g(static_cast<Eigen::Index>(m.layout.offset(m.layout.find(kNoiseBlock)))) +=
        terms.noise;
  }
  if (m.whitened) {
    g.segment(static_cast<Eigen::Index>(m.layout.offset(m.layout.find(kLatentBlock))),
              m.latent_size()) += terms.nu;
  }
  return g.cwiseProduct(forward_derivative(lambda, m.layout)) +
         log_abs_det_jacobian_grad(lambda, m.layout);
}

} // namespace detail

/// Whitened joint: sum_i log p(y_i | f_i) + log N(nu; 0, I) + log p0(theta),
/// evaluated at constrained values. The Jacobian term is not included.
inline double log_joint_whitened(const ModelSpec &m,
                                 const Eigen::Ref<const Eigen::VectorXd> &constrained,
                                 const Dataset &data) {
  if (!m.whitened) {
    throw InvalidArgument("log_joint_whitened: model is not whitened");
  }
  detail::check_data(m, data);
  const ModelParams p = unpack(m, constrained);
  const double lik = detail::likelihood_terms(m, p, data, {}, 1.0, false).value;
  return lik + log_prior(constrained, m.priors, m.layout).value;
}

/// log target in unconstrained space: likelihood (marginal for the exact
/// Gaussian model) + log prior + log |det J|.
inline double log_target(const ModelSpec &m,
                         const Eigen::Ref<const Eigen::VectorXd> &lambda,
                         const Dataset &data) {
  detail::check_data(m, data);
  const Eigen::VectorXd constrained = forward(lambda, m.layout);
  const ModelParams p = unpack(m, constrained);
  const double lik = detail::likelihood_terms(m, p, data, {}, 1.0, false).value;
  return lik + log_prior(constrained, m.priors, m.layout).value +
         log_abs_det_jacobian(lambda, m.layout);
}

/// Gradient of log_target with respect to the unconstrained vector.
inline Eigen::VectorXd score(const ModelSpec &m,
                             const Eigen::Ref<const Eigen::VectorXd> &lambda,
                             const Dataset &data) {
  detail::check_data(m, data);
  const Eigen::VectorXd lam = lambda;
  const Eigen::VectorXd constrained = forward(lam, m.layout);
  const ModelParams p = unpack(m, constrained);
  const detail::TermGrad terms = detail::likelihood_terms(m, p, data, {}, 1.0, true);
  return detail::assemble_score(m, lam, constrained, terms);
}

/// Unbiased mini-batch score: prior and Jacobian terms in full plus the
/// likelihood gradient over `batch` scaled by N / |batch|.
inline Eigen::VectorXd minibatch_score(const ModelSpec &m,
                                       const Eigen::Ref<const Eigen::VectorXd> &lambda,
                                       const Dataset &data,
                                       std::span<const Eigen::Index> batch) {
  if (m.kind() == ModelKind::ExactGaussian) {
    throw InvalidArgument("minibatch_score: the marginalised Gaussian model does "
                          "not factorise over data points");
  }
  if (batch.empty()) {
    throw InvalidArgument("minibatch_score: empty batch");
  }
  detail::check_data(m, data);
  for (Eigen::Index i : batch) {
    if (i < 0 || i >= data.size()) {
      throw InvalidArgument("minibatch_score: batch index " + std::to_string(i) +
                            " out of range");
    }
  }
  const Eigen::VectorXd lam = lambda;
  const Eigen::VectorXd constrained = forward(lam, m.layout);
  const ModelParams p = unpack(m, constrained);
  const double scale =
      static_cast<double>(data.size()) / static_cast<double>(batch.size());
  const detail::TermGrad terms =
      detail::likelihood_terms(m, p, data, batch, scale, true);
  return detail::assemble_score(m, lam, constrained, terms);
}

// ---------------------------------------------------------------------------
// Latent predictors

struct LatentPredictive {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// Latent conditional given whitened values at `sites`: with u = L nu,
/// mean = K_qz K_zz^-1 u and variance = diag(K_qq - K_qz K_zz^-1 K_zq).
inline LatentPredictive whitened_conditional(const KernelSpec &kernel,
                                             const Eigen::MatrixXd &sites,
                                             const Eigen::VectorXd &nu,
                                             const Eigen::MatrixXd &x_query) {
  if (nu.size() != sites.rows()) {
    throw InvalidArgument("whitened_conditional: nu length does not match sites");
  }
  const CholeskyFactor chol = robust_cholesky(gram(kernel, sites).values);
  Eigen::MatrixXd kqz = gram(kernel, x_query, sites).values;
  detail::add_coincident_jitter(kqz, x_query, sites, chol.jitter);
  LatentPredictive out;
  out.mean = kqz * chol.solve_upper(nu);
  const Eigen::MatrixXd v = chol.solve_lower(kqz.transpose());
  out.variance = (gram_diagonal(kernel, x_query).array() + chol.jitter -
                  v.colwise().squaredNorm().transpose().array())
                     .max(0.0);
  return out;
}

/// Projected-process predictor of a sparse model at query inputs.
inline LatentPredictive sparse_latent_predictor(const ModelSpec &m,
                                                const ModelParams &p,
                                                const Eigen::MatrixXd &x_query) {
  if (!m.inducing) {
    throw InvalidArgument("sparse_latent_predictor: model has no inducing points");
  }
  return whitened_conditional(p.kernel, *m.inducing, p.nu, x_query);
}

/// Noisy-conditioning GP predictive of the exact Gaussian model (latent f*).
inline LatentPredictive exact_gaussian_predictor(const ModelParams &p,
                                                 const Dataset &data,
                                                 const Eigen::MatrixXd &x_query) {
  Eigen::MatrixXd k = gram(p.kernel, data.x).values;
  k.diagonal().array() += p.noise_variance;
  const CholeskyFactor chol = robust_cholesky(k);
  const Eigen::MatrixXd kqx = gram(p.kernel, x_query, data.x).values;
  LatentPredictive out;
  out.mean = kqx * chol.solve(data.y);
  const Eigen::MatrixXd v = chol.solve_lower(kqx.transpose());
  out.variance = (gram_diagonal(p.kernel, x_query).array() -
                  v.colwise().squaredNorm().transpose().array())
                     .max(0.0);
  return out;
}

/// Latent predictive for any model kind at constrained parameters.
inline LatentPredictive latent_predictor(const ModelSpec &m, const ModelParams &p,
                                         const Dataset &data,
                                         const Eigen::MatrixXd &x_query) {
  switch (m.kind()) {
  case ModelKind::ExactGaussian:
    return exact_gaussian_predictor(p, data, x_query);
  case ModelKind::Whitened:
    return whitened_conditional(p.kernel, data.x, p.nu, x_query);
  case ModelKind::Sparse:
    return sparse_latent_predictor(m, p, x_query);
  }
  throw InvalidArgument("unknown model kind");
}

// ---------------------------------------------------------------------------
// Inducing points

/// Greedy farthest-point selection of `m` rows of `x`: a seeded random first
/// row, then repeatedly the row farthest from the chosen set (lowest index on
/// ties).
inline Eigen::MatrixXd farthest_point_inducing(const Eigen::MatrixXd &x,
                                               Eigen::Index m, std::uint64_t seed) {
  if (m < 1 || m > x.rows()) {
    throw InvalidArgument("farthest_point_inducing: need 1 <= M <= N");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, x.rows() - 1);
  std::vector<Eigen::Index> chosen{pick(rng)};
  Eigen::VectorXd min_dist =
      (x.rowwise() - x.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<Eigen::Index>(chosen.size()) < m) {
    Eigen::Index best = 0;
    min_dist.maxCoeff(&best);
    chosen.push_back(best);
    min_dist = min_dist.cwiseMin((x.rowwise() - x.row(best)).rowwise().squaredNorm());
  }
  Eigen::MatrixXd z(m, x.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    z.row(i) = x.row(chosen[static_cast<std::size_t>(i)]);
  }
  return z;
}

} // namespace steingp

#endif // STEINGP_MODELS_HPP
