#ifndef STEINGP_PARAMS_HPP
#define STEINGP_PARAMS_HPP

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "steingp/errors.hpp"

namespace steingp {

inline constexpr double kSoftplusFloor = 1e-6;
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

enum class Transform { Softplus, Identity };

struct ParamEntry {
  std::string name;
  std::size_t length = 1;
  Transform transform = Transform::Softplus;
};

/// Ordered blocks of the unconstrained particle vector.
class ParamLayout {
public:
  ParamLayout() = default;

  explicit ParamLayout(std::vector<ParamEntry> entries) {
    for (auto &e : entries) {
      add(std::move(e));
    }
  }

  void add(ParamEntry e) {
    if (e.length < 1) {
      throw InvalidArgument("parameter block '" + e.name + "' has zero length");
    }
    for (const auto &existing : entries_) {
      if (existing.name == e.name) {
        throw InvalidArgument("duplicate parameter block '" + e.name + "'");
      }
    }
    offsets_.push_back(dim_);
    dim_ += e.length;
    entries_.push_back(std::move(e));
  }

  const std::vector<ParamEntry> &entries() const { return entries_; }
  std::size_t offset(std::size_t block) const { return offsets_.at(block); }
  std::size_t dimension() const { return dim_; }

  /// Index of a named block, or entries().size() when absent.
  std::size_t find(const std::string &name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) {
        return i;
      }
    }
    return entries_.size();
  }

  bool contains(const std::string &name) const {
    return find(name) != entries_.size();
  }

  /// Per-coordinate column names: "block" for scalars, "block_i" otherwise.
  std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    out.reserve(dim_);
    for (const auto &e : entries_) {
      if (e.length == 1) {
        out.push_back(e.name);
      } else {
        for (std::size_t i = 0; i < e.length; ++i) {
          out.push_back(e.name + "_" + std::to_string(i));
        }
      }
    }
    return out;
  }

  Transform transform_at(std::size_t coord) const {
    for (std::size_t b = entries_.size(); b-- > 0;) {
      if (coord >= offsets_[b]) {
        return entries_[b].transform;
      }
    }
    throw InvalidArgument("coordinate outside layout");
  }

private:
  std::vector<ParamEntry> entries_;
  std::vector<std::size_t> offsets_;
  std::size_t dim_ = 0;
};

// ---------------------------------------------------------------------------
// Softplus transform

/// log(1 + e^x) without overflow or loss of precision for large |x|.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus for y > 0: log(e^y - 1).
inline double softplus_inverse(double y) {
  if (!(y > 0.0)) {
    throw DomainError("softplus_inverse: value must be positive");
  }
  return y + std::log(-std::expm1(-y));
}

namespace detail {

inline void require_length(const Eigen::Ref<const Eigen::VectorXd> &v,
                           const ParamLayout &layout, const char *who) {
  if (static_cast<std::size_t>(v.size()) != layout.dimension()) {
    throw InvalidArgument(std::string(who) + ": vector length " +
                          std::to_string(v.size()) + " does not match layout " +
                          "dimension " + std::to_string(layout.dimension()));
  }
}

} // namespace detail

/// Unconstrained -> constrained. Softplus entries are floored at 1e-6.
inline Eigen::VectorXd forward(const Eigen::Ref<const Eigen::VectorXd> &x,
                               const ParamLayout &layout) {
  detail::require_length(x, layout, "forward");
  if (!x.allFinite()) {
    throw InvalidArgument("forward: non-finite unconstrained value");
  }
  Eigen::VectorXd out = x;
  for (std::size_t b = 0; b < layout.entries().size(); ++b) {
    if (layout.entries()[b].transform != Transform::Softplus) {
      continue;
    }
    const auto off = static_cast<Eigen::Index>(layout.offset(b));
    const auto len = static_cast<Eigen::Index>(layout.entries()[b].length);
    for (Eigen::Index i = off; i < off + len; ++i) {
      out(i) = std::max(softplus(x(i)), kSoftplusFloor);
    }
  }
  return out;
}

/// Constrained -> unconstrained (exact inverse away from the floor).
inline Eigen::VectorXd inverse(const Eigen::Ref<const Eigen::VectorXd> &y,
                               const ParamLayout &layout) {
  detail::require_length(y, layout, "inverse");
  Eigen::VectorXd out = y;
  for (std::size_t b = 0; b < layout.entries().size(); ++b) {
    if (layout.entries()[b].transform != Transform::Softplus) {
      continue;
    }
    const auto off = static_cast<Eigen::Index>(layout.offset(b));
    const auto len = static_cast<Eigen::Index>(layout.entries()[b].length);
    for (Eigen::Index i = off; i < off + len; ++i) {
      out(i) = softplus_inverse(y(i));
    }
  }
  return out;
}

/// d forward / d x per coordinate. Uses the unclipped softplus derivative
/// everywhere, so the floor never zeroes a gradient.
inline Eigen::VectorXd forward_derivative(const Eigen::Ref<const Eigen::VectorXd> &x,
                                          const ParamLayout &layout) {
  detail::require_length(x, layout, "forward_derivative");
  Eigen::VectorXd out = Eigen::VectorXd::Ones(x.size());
  for (std::size_t b = 0; b < layout.entries().size(); ++b) {
    if (layout.entries()[b].transform != Transform::Softplus) {
      continue;
    }
    const auto off = static_cast<Eigen::Index>(layout.offset(b));
    const auto len = static_cast<Eigen::Index>(layout.entries()[b].length);
    for (Eigen::Index i = off; i < off + len; ++i) {
      out(i) = sigmoid(x(i));
    }
  }
  return out;
}

/// log |det d forward / d x| = sum over Softplus coordinates of log sigmoid(x).
inline double log_abs_det_jacobian(const Eigen::Ref<const Eigen::VectorXd> &x,
                                   const ParamLayout &layout) {
  detail::require_length(x, layout, "log_abs_det_jacobian");
  double total = 0.0;
  for (std::size_t b = 0; b < layout.entries().size(); ++b) {
    if (layout.entries()[b].transform != Transform::Softplus) {
      continue;
    }
    const auto off = static_cast<Eigen::Index>(layout.offset(b));
    const auto len = static_cast<Eigen::Index>(layout.entries()[b].length);
    for (Eigen::Index i = off; i < off + len; ++i) {
      total -= softplus(-x(i)); // log sigmoid(x)
    }
  }
  return total;
}

/// Gradient of log_abs_det_jacobian: sigmoid(-x) on Softplus coordinates.
inline Eigen::VectorXd
log_abs_det_jacobian_grad(const Eigen::Ref<const Eigen::VectorXd> &x,
                          const ParamLayout &layout) {
  detail::require_length(x, layout, "log_abs_det_jacobian_grad");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  for (std::size_t b = 0; b < layout.entries().size(); ++b) {
    if (layout.entries()[b].transform != Transform::Softplus) {
      continue;
    }
    const auto off = static_cast<Eigen::Index>(layout.offset(b));
    const auto len = static_cast<Eigen::Index>(layout.entries()[b].length);
    for (Eigen::Index i = off; i < off + len; ++i) {
      out(i) = sigmoid(-x(i));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Priors

struct Prior {
  enum class Kind { None, Gamma, StandardNormal };
  Kind kind = Kind::None;
  double shape = 1.0;
  double scale = 1.0;

  static Prior none() { return {}; }
  static Prior gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0)) {
      throw InvalidArgument("Gamma prior requires shape > 0 and scale > 0");
    }
    return {Kind::Gamma, shape, scale};
  }
  static Prior standard_normal() { return {Kind::StandardNormal, 0.0, 1.0}; }
};

/// Priors keyed by layout block name; missing blocks have no prior.
using PriorSpec = std::map<std::string, Prior>;

inline const Prior &prior_for(const PriorSpec &priors, const std::string &name) {
  static const Prior kNone{};
  auto it = priors.find(name);
  return it == priors.end() ? kNone : it->second;
}

struct LogPrior {
  double value = 0.0;
  Eigen::VectorXd grad; // w.r.t. constrained values
};

/// Sum of block log densities evaluated at constrained values.
inline LogPrior log_prior(const Eigen::Ref<const Eigen::VectorXd> &theta,
                          const PriorSpec &priors, const ParamLayout &layout) {
  detail::require_length(theta, layout, "log_prior");
  LogPrior out;
  out.grad = Eigen::VectorXd::Zero(theta.size());
  for (std::size_t b = 0; b < layout.entries().size(); ++b) {
    const auto &entry = layout.entries()[b];
    const Prior &p = prior_for(priors, entry.name);
    const auto off = static_cast<Eigen::Index>(layout.offset(b));
    const auto len = static_cast<Eigen::Index>(entry.length);
    switch (p.kind) {
    case Prior::Kind::None:
      break;
    case Prior::Kind::Gamma: {
      const double norm = p.shape * std::log(p.scale) + std::lgamma(p.shape);
      for (Eigen::Index i = off; i < off + len; ++i) {
        const double v = theta(i);
        if (!(v > 0.0)) {
          throw DomainError("Gamma prior on '" + entry.name +
                            "' evaluated at non-positive value");
        }
        out.value += (p.shape - 1.0) * std::log(v) - v / p.scale - norm;
        out.grad(i) = (p.shape - 1.0) / v - 1.0 / p.scale;
      }
      break;
    }
    case Prior::Kind::StandardNormal: {
      const auto seg = theta.segment(off, len);
      out.value += -0.5 * seg.squaredNorm() - 0.5 * static_cast<double>(len) * kLog2Pi;
      out.grad.segment(off, len) = -seg;
      break;
    }
    }
  }
  return out;
}

/// One unconstrained draw from q0: each block from its prior when it has
/// one, otherwise Uniform(0, 1), then pulled back through the transform.
template <typename Rng>
Eigen::VectorXd draw_initial(const ParamLayout &layout, const PriorSpec &priors,
                             Rng &rng) {
  Eigen::VectorXd constrained(static_cast<Eigen::Index>(layout.dimension()));
  for (std::size_t b = 0; b < layout.entries().size(); ++b) {
    const auto &entry = layout.entries()[b];
    const Prior &p = prior_for(priors, entry.name);
    const auto off = static_cast<Eigen::Index>(layout.offset(b));
    for (std::size_t i = 0; i < entry.length; ++i) {
      double v = 0.0;
      switch (p.kind) {
      case Prior::Kind::Gamma:
        v = std::gamma_distribution<double>(p.shape, p.scale)(rng);
        break;
      case Prior::Kind::StandardNormal:
        v = std::normal_distribution<double>(0.0, 1.0)(rng);
        break;
      case Prior::Kind::None:
        v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        break;
      }
      if (entry.transform == Transform::Softplus) {
        v = std::max(v, kSoftplusFloor);
      }
      constrained(off + static_cast<Eigen::Index>(i)) = v;
    }
  }
  return inverse(constrained, layout);
}

} // namespace steingp

#endif // STEINGP_PARAMS_HPP
