#ifndef STEINGP_KERNELS_HPP
#define STEINGP_KERNELS_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "steingp/errors.hpp"
#include "steingp/linalg.hpp"

namespace steingp {

enum class KernelFamily { SquaredExponential, Matern12, Matern52, Polynomial, White };
enum class Composition { Leaf, Sum, Product };

inline std::string family_name(KernelFamily f) {
  switch (f) {
  case KernelFamily::SquaredExponential:
    return "se";
  case KernelFamily::Matern12:
    return "matern12";
  case KernelFamily::Matern52:
    return "matern52";
  case KernelFamily::Polynomial:
    return "poly";
  case KernelFamily::White:
    return "white";
  }
  return "unknown";
}

/*
 * A covariance function. Leaves carry a family and its hyperparameters;
 * internal nodes combine children by sum or elementwise product.
 *
 * Hyperparameters, in the order every flattened view uses:
 *   per leaf (pre-order): sigma, lengthscales..., offset
 * where lengthscales are present for the stationary families and offset only
 * for Polynomial. The stationary and polynomial families scale by sigma^2;
 * White contributes sigma itself on coincident inputs.
 *
 * `lengthscales` holds either one entry per active dimension (ARD) or a
 * single shared entry (isotropic). Empty `active_dims` means every input
 * dimension.
 */
struct KernelSpec {
  Composition composition = Composition::Leaf;
  KernelFamily family = KernelFamily::SquaredExponential;
  double sigma = 1.0;
  std::vector<double> lengthscales;
  double offset = 1.0;
  int degree = 1;
  std::vector<int> active_dims;
  std::vector<KernelSpec> children;

  static KernelSpec stationary(KernelFamily family, double sigma,
                               std::vector<double> lengthscales,
                               std::vector<int> active_dims = {}) {
    KernelSpec k;
    k.family = family;
    k.sigma = sigma;
    k.lengthscales = std::move(lengthscales);
    k.active_dims = std::move(active_dims);
    return k;
  }

  static KernelSpec squared_exponential(double sigma,
                                        std::vector<double> lengthscales,
                                        std::vector<int> active_dims = {}) {
    return stationary(KernelFamily::SquaredExponential, sigma,
                      std::move(lengthscales), std::move(active_dims));
  }

  static KernelSpec matern12(double sigma, std::vector<double> lengthscales,
                             std::vector<int> active_dims = {}) {
    return stationary(KernelFamily::Matern12, sigma, std::move(lengthscales),
                      std::move(active_dims));
  }

  static KernelSpec matern52(double sigma, std::vector<double> lengthscales,
                             std::vector<int> active_dims = {}) {
    return stationary(KernelFamily::Matern52, sigma, std::move(lengthscales),
                      std::move(active_dims));
  }

  static KernelSpec polynomial(int degree, double sigma, double offset,
                               std::vector<int> active_dims = {}) {
    KernelSpec k;
    k.family = KernelFamily::Polynomial;
    k.degree = degree;
    k.sigma = sigma;
    k.offset = offset;
    k.active_dims = std::move(active_dims);
    return k;
  }

  static KernelSpec white(double sigma, std::vector<int> active_dims = {}) {
    KernelSpec k;
    k.family = KernelFamily::White;
    k.sigma = sigma;
    k.active_dims = std::move(active_dims);
    return k;
  }

  static KernelSpec combine(Composition op, std::vector<KernelSpec> children) {
    KernelSpec k;
    k.composition = op;
    k.children = std::move(children);
    return k;
  }

  bool is_leaf() const { return composition == Composition::Leaf; }

  bool has_lengthscales() const {
    return is_leaf() && (family == KernelFamily::SquaredExponential ||
                         family == KernelFamily::Matern12 ||
                         family == KernelFamily::Matern52);
  }
};

inline KernelSpec operator*(KernelSpec a, KernelSpec b) {
  if (a.composition == Composition::Product) {
    a.children.push_back(std::move(b));
    return a;
  }
  return KernelSpec::combine(Composition::Product, {std::move(a), std::move(b)});
}

inline KernelSpec operator+(KernelSpec a, KernelSpec b) {
  if (a.composition == Composition::Sum) {
    a.children.push_back(std::move(b));
    return a;
  }
  return KernelSpec::combine(Composition::Sum, {std::move(a), std::move(b)});
}

// ---------------------------------------------------------------------------
// Hyperparameter bookkeeping

enum class HyperKind { Sigma, Lengthscale, Offset };

struct HyperBlock {
  std::string name;
  std::size_t length;
  HyperKind kind;
};

namespace detail {

template <typename Fn> void for_each_leaf(const KernelSpec &k, Fn &&fn) {
  if (k.is_leaf()) {
    fn(k);
    return;
  }
  for (const auto &c : k.children) {
    for_each_leaf(c, fn);
  }
}

template <typename Fn> void for_each_leaf_mut(KernelSpec &k, Fn &&fn) {
  if (k.is_leaf()) {
    fn(k);
    return;
  }
  for (auto &c : k.children) {
    for_each_leaf_mut(c, fn);
  }
}

inline std::size_t leaf_param_count(const KernelSpec &k) {
  std::size_t n = 1;
  if (k.has_lengthscales()) {
    n += k.lengthscales.size();
  }
  if (k.family == KernelFamily::Polynomial) {
    n += 1;
  }
  return n;
}

} // namespace detail

inline std::size_t leaf_count(const KernelSpec &k) {
  std::size_t n = 0;
  detail::for_each_leaf(k, [&](const KernelSpec &) { ++n; });
  return n;
}

inline std::size_t hyperparameter_count(const KernelSpec &k) {
  std::size_t n = 0;
  detail::for_each_leaf(k, [&](const KernelSpec &leaf) {
    n += detail::leaf_param_count(leaf);
  });
  return n;
}

/// Named blocks of the flattened hyperparameter vector, in flattening order.
inline std::vector<HyperBlock> hyperparameter_blocks(const KernelSpec &k) {
  std::vector<HyperBlock> blocks;
  const bool single = leaf_count(k) == 1;
  std::size_t leaf = 0;
  detail::for_each_leaf(k, [&](const KernelSpec &l) {
    const std::string prefix =
        single ? std::string("kernel") : "kernel" + std::to_string(leaf);
    blocks.push_back({prefix + ".sigma", 1, HyperKind::Sigma});
    if (l.has_lengthscales()) {
      blocks.push_back(
          {prefix + ".lengthscale", l.lengthscales.size(), HyperKind::Lengthscale});
    }
    if (l.family == KernelFamily::Polynomial) {
      blocks.push_back({prefix + ".offset", 1, HyperKind::Offset});
    }
    ++leaf;
  });
  return blocks;
}

inline Eigen::VectorXd hyperparameter_values(const KernelSpec &k) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(hyperparameter_count(k)));
  Eigen::Index i = 0;
  detail::for_each_leaf(k, [&](const KernelSpec &l) {
    out(i++) = l.sigma;
    if (l.has_lengthscales()) {
      for (double ls : l.lengthscales) {
        out(i++) = ls;
      }
    }
    if (l.family == KernelFamily::Polynomial) {
      out(i++) = l.offset;
    }
  });
  return out;
}

inline KernelSpec with_hyperparameters(KernelSpec k,
                                       const Eigen::Ref<const Eigen::VectorXd> &v) {
  if (static_cast<std::size_t>(v.size()) != hyperparameter_count(k)) {
    throw InvalidArgument("with_hyperparameters: expected " +
                          std::to_string(hyperparameter_count(k)) +
                          " values, got " + std::to_string(v.size()));
  }
  Eigen::Index i = 0;
  detail::for_each_leaf_mut(k, [&](KernelSpec &l) {
    l.sigma = v(i++);
    if (l.has_lengthscales()) {
      for (double &ls : l.lengthscales) {
        ls = v(i++);
      }
    }
    if (l.family == KernelFamily::Polynomial) {
      l.offset = v(i++);
    }
  });
  return k;
}

/// Checks structural and value invariants against an input dimensionality.
inline void validate(const KernelSpec &k, Eigen::Index input_dim) {
  if (!k.is_leaf()) {
    if (k.children.empty()) {
      throw InvalidArgument("kernel composition has no children");
    }
    for (const auto &c : k.children) {
      validate(c, input_dim);
    }
    return;
  }
  std::set<int> seen;
  for (int d : k.active_dims) {
    if (d < 0 || d >= input_dim) {
      throw InvalidArgument("active dimension " + std::to_string(d) +
                            " outside input dimensionality " +
                            std::to_string(input_dim));
    }
    if (!seen.insert(d).second) {
      throw InvalidArgument("duplicate active dimension " + std::to_string(d));
    }
  }
  if (!(k.sigma > 0.0)) {
    throw InvalidArgument(family_name(k.family) + ": sigma must be positive");
  }
  if (k.has_lengthscales()) {
    const std::size_t active =
        k.active_dims.empty() ? static_cast<std::size_t>(input_dim)
                              : k.active_dims.size();
    if (k.lengthscales.size() != 1 && k.lengthscales.size() != active) {
      throw InvalidArgument(family_name(k.family) + ": expected 1 or " +
                            std::to_string(active) + " lengthscales, got " +
                            std::to_string(k.lengthscales.size()));
    }
    for (double ls : k.lengthscales) {
      if (!(ls > 0.0)) {
        throw InvalidArgument(family_name(k.family) +
                              ": lengthscales must be positive");
      }
    }
  }
  if (k.family == KernelFamily::Polynomial && k.degree < 1) {
    throw InvalidArgument("poly: degree must be a positive integer");
  }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

inline Eigen::Index active_count(const KernelSpec &k, Eigen::Index dim) {
  return k.active_dims.empty() ? dim
                               : static_cast<Eigen::Index>(k.active_dims.size());
}

inline Eigen::Index active_index(const KernelSpec &k, Eigen::Index i) {
  return k.active_dims.empty() ? i : k.active_dims[static_cast<std::size_t>(i)];
}

inline double lengthscale_at(const KernelSpec &k, Eigen::Index i) {
  return k.lengthscales.size() == 1 ? k.lengthscales[0]
                                    : k.lengthscales[static_cast<std::size_t>(i)];
}

// Leaf value; when `grad` is non-empty it receives d k / d theta for this
// leaf's own parameters (sigma, lengthscales..., offset).
inline double eval_leaf(const KernelSpec &k, const ConstRowRef &x,
                        const ConstRowRef &x2, std::span<double> grad) {
  const Eigen::Index n = active_count(k, x.size());
  const bool want_grad = !grad.empty();
  const double s2 = k.sigma * k.sigma;

  switch (k.family) {
  case KernelFamily::White: {
    bool equal = true;
    for (Eigen::Index i = 0; i < n && equal; ++i) {
      const Eigen::Index a = active_index(k, i);
      equal = x(a) == x2(a);
    }
    if (want_grad) {
      grad[0] = equal ? 1.0 : 0.0;
    }
    return equal ? k.sigma : 0.0;
  }
  case KernelFamily::Polynomial: {
    double dot = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index a = active_index(k, i);
      dot += x(a) * x2(a);
    }
    const double base = s2 * dot + k.offset;
    const double value = std::pow(base, k.degree);
    if (want_grad) {
      const double dbase = k.degree * std::pow(base, k.degree - 1);
      grad[0] = dbase * 2.0 * k.sigma * dot;
      grad[1] = dbase;
    }
    return value;
  }
  default:
    break;
  }

  // Stationary families: r^2 = sum_i ((x_i - x2_i) / l_i)^2.
  double r2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index a = active_index(k, i);
    const double d = (x(a) - x2(a)) / lengthscale_at(k, i);
    r2 += d * d;
  }
  const double r = std::sqrt(r2);

  double shape = 0.0;
  // d k / d l_i = coef * d_i^2 / l_i^3 for every stationary family here.
  double coef = 0.0;
  switch (k.family) {
  case KernelFamily::SquaredExponential:
    shape = std::exp(-0.5 * r2);
    coef = s2 * shape;
    break;
  case KernelFamily::Matern12:
    shape = std::exp(-r);
    coef = r > 0.0 ? s2 * shape / r : 0.0;
    break;
  case KernelFamily::Matern52: {
    const double sr = std::sqrt(5.0) * r;
    const double e = std::exp(-sr);
    shape = (1.0 + sr + 5.0 / 3.0 * r2) * e;
    coef = 5.0 / 3.0 * s2 * (1.0 + sr) * e;
    break;
  }
  default:
    break;
  }

  if (want_grad) {
    grad[0] = 2.0 * k.sigma * shape;
    const std::size_t nls = k.lengthscales.size();
    for (std::size_t j = 0; j < nls; ++j) {
      grad[1 + j] = 0.0;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index a = active_index(k, i);
      const double l = lengthscale_at(k, i);
      const double d = x(a) - x2(a);
      const std::size_t slot = nls == 1 ? 0 : static_cast<std::size_t>(i);
      grad[1 + slot] += coef * d * d / (l * l * l);
    }
  }
  return s2 * shape;
}

inline void check_dims(const KernelSpec &k, Eigen::Index dim) {
  if (k.is_leaf()) {
    for (int d : k.active_dims) {
      if (d < 0 || d >= dim) {
        throw InvalidArgument("kernel active dimension " + std::to_string(d) +
                              " outside input dimensionality " +
                              std::to_string(dim));
      }
    }
    if (k.has_lengthscales() && k.lengthscales.size() != 1 &&
        static_cast<Eigen::Index>(k.lengthscales.size()) != active_count(k, dim)) {
      throw InvalidArgument("kernel lengthscale count does not match active "
                            "dimensions");
    }
    return;
  }
  for (const auto &c : k.children) {
    check_dims(c, dim);
  }
}

inline double eval_node(const KernelSpec &k, const ConstRowRef &x,
                        const ConstRowRef &x2, std::span<double> grad) {
  if (k.is_leaf()) {
    return eval_leaf(k, x, x2, grad);
  }
  const bool want_grad = !grad.empty();
  const std::size_t nc = k.children.size();
  std::vector<double> values(nc);
  std::vector<std::size_t> offsets(nc + 1, 0);
  for (std::size_t c = 0; c < nc; ++c) {
    offsets[c + 1] = offsets[c] + hyperparameter_count(k.children[c]);
  }
  for (std::size_t c = 0; c < nc; ++c) {
    std::span<double> sub;
    if (want_grad) {
      sub = grad.subspan(offsets[c], offsets[c + 1] - offsets[c]);
    }
    values[c] = eval_node(k.children[c], x, x2, sub);
  }
  if (k.composition == Composition::Sum) {
    return std::accumulate(values.begin(), values.end(), 0.0);
  }
  // Product: scale each child's gradient by the product of the others.
  std::vector<double> prefix(nc + 1, 1.0), suffix(nc + 1, 1.0);
  for (std::size_t c = 0; c < nc; ++c) {
    prefix[c + 1] = prefix[c] * values[c];
  }
  for (std::size_t c = nc; c-- > 0;) {
    suffix[c] = suffix[c + 1] * values[c];
  }
  if (want_grad) {
    for (std::size_t c = 0; c < nc; ++c) {
      const double others = prefix[c] * suffix[c + 1];
      for (std::size_t p = offsets[c]; p < offsets[c + 1]; ++p) {
        grad[p] *= others;
      }
    }
  }
  return prefix[nc];
}

} // namespace detail

/// k(x, x2). Throws InvalidArgument on a dimension mismatch.
inline double eval(const KernelSpec &k, const ConstRowRef &x,
                   const ConstRowRef &x2) {
  if (x.size() != x2.size()) {
    throw InvalidArgument("kernel eval: input dimensions differ (" +
                          std::to_string(x.size()) + " vs " +
                          std::to_string(x2.size()) + ")");
  }
  detail::check_dims(k, x.size());
  return detail::eval_node(k, x, x2, {});
}

/// k(x, x2) together with d k / d theta over the flattened hyperparameters.
inline double eval_with_grad(const KernelSpec &k, const ConstRowRef &x,
                             const ConstRowRef &x2, std::span<double> grad) {
  if (x.size() != x2.size()) {
    throw InvalidArgument("kernel eval: input dimensions differ");
  }
  if (grad.size() != hyperparameter_count(k)) {
    throw InvalidArgument("kernel eval_with_grad: gradient buffer has wrong size");
  }
  detail::check_dims(k, x.size());
  return detail::eval_node(k, x, x2, grad);
}

struct GramMatrix {
  Eigen::MatrixXd values;
  double jitter_applied = 0.0;
};

/// Gram matrix of one input set; each pair is evaluated once and mirrored.
inline GramMatrix gram(const KernelSpec &k, const Eigen::MatrixXd &x,
                       double jitter = 0.0) {
  detail::check_dims(k, x.cols());
  const Eigen::Index n = x.rows();
  GramMatrix g;
  g.values.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      const double v = detail::eval_node(k, x.row(i), x.row(j), {});
      g.values(i, j) = v;
      g.values(j, i) = v;
    }
  }
  g.values.diagonal().array() += jitter;
  g.jitter_applied = jitter;
  return g;
}

/// Cross-covariance K(X, X2). Jitter is added on the diagonal only when X2
/// is the same input set as X.
inline GramMatrix gram(const KernelSpec &k, const Eigen::MatrixXd &x,
                       const Eigen::MatrixXd &x2, double jitter = 0.0) {
  if (x.cols() != x2.cols()) {
    throw InvalidArgument("gram: input dimensionalities differ");
  }
  if (&x == &x2 || (x.rows() == x2.rows() && x == x2)) {
    return gram(k, x, jitter);
  }
  detail::check_dims(k, x.cols());
  GramMatrix g;
  g.values.resize(x.rows(), x2.rows());
  for (Eigen::Index j = 0; j < x2.rows(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      g.values(i, j) = detail::eval_node(k, x.row(i), x2.row(j), {});
    }
  }
  return g;
}

/// Gram matrix of one input set plus d K / d theta_p for every hyperparameter.
inline Eigen::MatrixXd gram_with_grads(const KernelSpec &k,
                                       const Eigen::MatrixXd &x,
                                       std::vector<Eigen::MatrixXd> &grads) {
  detail::check_dims(k, x.cols());
  const Eigen::Index n = x.rows();
  const std::size_t p = hyperparameter_count(k);
  grads.assign(p, Eigen::MatrixXd(n, n));
  Eigen::MatrixXd values(n, n);
  std::vector<double> g(p);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      const double v = detail::eval_node(k, x.row(i), x.row(j), g);
      values(i, j) = v;
      values(j, i) = v;
      for (std::size_t q = 0; q < p; ++q) {
        grads[q](i, j) = g[q];
        grads[q](j, i) = g[q];
      }
    }
  }
  return values;
}

/// Cross-covariance K(X, X2) plus its hyperparameter derivatives.
inline Eigen::MatrixXd cross_gram_with_grads(const KernelSpec &k,
                                             const Eigen::MatrixXd &x,
                                             const Eigen::MatrixXd &x2,
                                             std::vector<Eigen::MatrixXd> &grads) {
  if (x.cols() != x2.cols()) {
    throw InvalidArgument("cross_gram_with_grads: input dimensionalities differ");
  }
  detail::check_dims(k, x.cols());
  const std::size_t p = hyperparameter_count(k);
  grads.assign(p, Eigen::MatrixXd(x.rows(), x2.rows()));
  Eigen::MatrixXd values(x.rows(), x2.rows());
  std::vector<double> g(p);
  for (Eigen::Index j = 0; j < x2.rows(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      values(i, j) = detail::eval_node(k, x.row(i), x2.row(j), g);
      for (std::size_t q = 0; q < p; ++q) {
        grads[q](i, j) = g[q];
      }
    }
  }
  return values;
}

/// Elementwise d K(X, X) / d theta_p in the positive parameterization.
inline Eigen::MatrixXd gram_grad(const KernelSpec &k, const Eigen::MatrixXd &x,
                                 std::size_t param_index) {
  const std::size_t p = hyperparameter_count(k);
  if (param_index >= p) {
    throw InvalidArgument("gram_grad: parameter index " +
                          std::to_string(param_index) + " out of range (" +
                          std::to_string(p) + " hyperparameters)");
  }
  std::vector<Eigen::MatrixXd> grads;
  gram_with_grads(k, x, grads);
  return std::move(grads[param_index]);
}

/// Diagonal k(x_i, x_i) without forming the full matrix.
inline Eigen::VectorXd gram_diagonal(const KernelSpec &k, const Eigen::MatrixXd &x) {
  detail::check_dims(k, x.cols());
  Eigen::VectorXd d(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    d(i) = detail::eval_node(k, x.row(i), x.row(i), {});
  }
  return d;
}

} // namespace steingp

#endif // STEINGP_KERNELS_HPP
