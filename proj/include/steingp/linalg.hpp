#ifndef STEINGP_LINALG_HPP
#define STEINGP_LINALG_HPP

#include <array>
#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "steingp/errors.hpp"

namespace steingp {

/// Row view that works for rows of column-major matrices without copying.
using ConstRowRef = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

inline constexpr double kDefaultJitter = 1e-6;
inline constexpr std::array<double, 3> kJitterLadder = {1e-6, 1e-5, 1e-4};

struct CholeskyFactor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;

  /// Solves (L L^T) x = b.
  template <typename Rhs> Eigen::MatrixXd solve(const Rhs &b) const {
    Eigen::MatrixXd tmp = lower.triangularView<Eigen::Lower>().solve(b);
    return lower.transpose().triangularView<Eigen::Upper>().solve(tmp);
  }

  /// Solves L x = b.
  template <typename Rhs> Eigen::MatrixXd solve_lower(const Rhs &b) const {
    return lower.triangularView<Eigen::Lower>().solve(b);
  }

  /// Solves L^T x = b.
  template <typename Rhs> Eigen::MatrixXd solve_upper(const Rhs &b) const {
    return lower.transpose().triangularView<Eigen::Upper>().solve(b);
  }

  double log_determinant() const {
    return 2.0 * lower.diagonal().array().log().sum();
  }
};

namespace detail {

inline bool try_cholesky(const Eigen::MatrixXd &a, double jitter,
                         CholeskyFactor &out) {
  Eigen::MatrixXd shifted = a;
  shifted.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(shifted);
  if (llt.info() != Eigen::Success) {
    return false;
  }
  Eigen::MatrixXd lower = llt.matrixL();
  const auto diag = lower.diagonal().array();
  if (!diag.allFinite() || (diag <= 0.0).any()) {
    return false;
  }
  out.lower = std::move(lower);
  out.jitter = jitter;
  return true;
}

} // namespace detail

/// Cholesky of `a + jitter * I`, walking the jitter ladder 1e-6, 1e-5, 1e-4.
/// Throws NumericalError carrying the last jitter tried.
inline CholeskyFactor robust_cholesky(const Eigen::MatrixXd &a) {
  if (a.rows() != a.cols()) {
    throw InvalidArgument("robust_cholesky: matrix is not square");
  }
  CholeskyFactor out;
  for (double jitter : kJitterLadder) {
    if (detail::try_cholesky(a, jitter, out)) {
      return out;
    }
  }
  std::ostringstream msg;
  msg << "Cholesky factorization failed for a " << a.rows() << "x" << a.cols()
      << " matrix with jitter up to " << kJitterLadder.back();
  throw NumericalError(msg.str(), kJitterLadder.back());
}

} // namespace steingp

#endif // STEINGP_LINALG_HPP
