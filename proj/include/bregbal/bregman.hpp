#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "bregbal/errors.hpp"

namespace bregbal {

// Separable Bregman distance families over weight domains inside [0, inf).
// Each family is defined by its generator f, with closed-form gradient,
// inverse gradient, and generalized projection
//   P_f(q, eta) = (grad f)^{-1}(grad f(q) - eta).
enum class DistanceFamily {
  UnnormalizedRelativeEntropy,  // f(p) = p log p,                 p in [0, inf)
  ShiftedRelativeEntropy,       // f(p) = (p-1) log(p-1),          p in [1, inf)
  BinaryRelativeEntropy,        // f(p) = p log p + (1-p)log(1-p), p in [0, 1]
};

inline const char* family_name(DistanceFamily f) {
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy: return "unnormalized_relative_entropy";
    case DistanceFamily::ShiftedRelativeEntropy: return "shifted_relative_entropy";
    case DistanceFamily::BinaryRelativeEntropy: return "binary_relative_entropy";
  }
  return "unknown";
}

// |eta| is clamped at this magnitude before exponentiation; exp(500) would
// overflow a double. A clamped projection signals near-infeasibility upstream.
inline constexpr double kEtaClamp = 500.0;

inline double domain_lower(DistanceFamily f) {
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy: return 0.0;
    case DistanceFamily::ShiftedRelativeEntropy: return 1.0;
    case DistanceFamily::BinaryRelativeEntropy: return 0.0;
  }
  return 0.0;
}

inline double domain_upper(DistanceFamily f) {
  return f == DistanceFamily::BinaryRelativeEntropy
             ? 1.0
             : std::numeric_limits<double>::infinity();
}

inline bool in_closed_domain(DistanceFamily f, double p) {
  return std::isfinite(p) && p >= domain_lower(f) && p <= domain_upper(f);
}

// Strict interior; this is where gradients and projections live.
inline bool in_open_domain(DistanceFamily f, double p) {
  return std::isfinite(p) && p > domain_lower(f) && p < domain_upper(f);
}

namespace detail {

inline double xlogx(double x) {
  return x > 0.0 ? x * std::log(x) : 0.0;  // 0 log 0 = 0
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[noreturn]] inline void domain_fail(DistanceFamily f, double p, const char* what) {
  throw DomainError(std::string(what) + ": " + std::to_string(p) +
                    " outside domain of " + family_name(f));
}

}  // namespace detail

// f(p) on the closed domain, with the boundary conventions 0 log 0 = 0.
inline double generator_value(DistanceFamily f, double p) {
  if (!in_closed_domain(f, p)) detail::domain_fail(f, p, "generator_value");
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy:
      return detail::xlogx(p);
    case DistanceFamily::ShiftedRelativeEntropy:
      return detail::xlogx(p - 1.0);
    case DistanceFamily::BinaryRelativeEntropy:
      return detail::xlogx(p) + detail::xlogx(1.0 - p);
  }
  return 0.0;
}

// grad f on the open domain. Needed directly by the dual solver's Hessian.
inline double generator_grad(DistanceFamily f, double p) {
  if (!in_open_domain(f, p)) detail::domain_fail(f, p, "generator_grad");
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy:
      return std::log(p) + 1.0;
    case DistanceFamily::ShiftedRelativeEntropy:
      return std::log(p - 1.0) + 1.0;
    case DistanceFamily::BinaryRelativeEntropy:
      return std::log(p) - std::log1p(-p);  // logit
  }
  return 0.0;
}

// (grad f)^{-1}; maps any real back into the open domain.
inline double generator_inv_grad(DistanceFamily f, double v) {
  if (!std::isfinite(v)) throw DomainError("generator_inv_grad: non-finite argument");
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy:
      return std::exp(v - 1.0);
    case DistanceFamily::ShiftedRelativeEntropy:
      return 1.0 + std::exp(v - 1.0);
    case DistanceFamily::BinaryRelativeEntropy:
      return detail::logistic(v);
  }
  return 0.0;
}

// f''(p) > 0 on the open domain (strict convexity).
inline double generator_curvature(DistanceFamily f, double p) {
  if (!in_open_domain(f, p)) detail::domain_fail(f, p, "generator_curvature");
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy:
      return 1.0 / p;
    case DistanceFamily::ShiftedRelativeEntropy:
      return 1.0 / (p - 1.0);
    case DistanceFamily::BinaryRelativeEntropy:
      return 1.0 / (p * (1.0 - p));
  }
  return 0.0;
}

// d/d eta of P_f(q, eta) evaluated at p = P_f(q, eta); equals -1/f''(p) < 0
// on the interior and extends continuously to 0 where the projection
// saturates at the domain boundary.
inline double projection_slope(DistanceFamily f, double p) {
  if (!in_closed_domain(f, p)) detail::domain_fail(f, p, "projection_slope");
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy:
      return -p;
    case DistanceFamily::ShiftedRelativeEntropy:
      return -(p - 1.0);
    case DistanceFamily::BinaryRelativeEntropy:
      return -p * (1.0 - p);
  }
  return 0.0;
}

namespace detail {

// Projection with |eta| clamped; the solver uses this form so that iterates
// stay finite, and records whether the clamp fired.
inline double project_clamped(DistanceFamily f, double q, double eta, bool* clamped) {
  if (!in_open_domain(f, q)) domain_fail(f, q, "project");
  if (!std::isfinite(eta)) throw DomainError("project: non-finite eta");
  if (std::abs(eta) > kEtaClamp) {
    eta = eta > 0.0 ? kEtaClamp : -kEtaClamp;
    if (clamped) *clamped = true;
  }
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy:
      return q * std::exp(-eta);
    case DistanceFamily::ShiftedRelativeEntropy:
      return 1.0 + (q - 1.0) * std::exp(-eta);
    case DistanceFamily::BinaryRelativeEntropy:
      // q e^{-eta} / (1 - q + q e^{-eta}), computed as a stable logistic.
      return logistic((std::log(q) - std::log1p(-q)) - eta);
  }
  return q;
}

}  // namespace detail

// Generalized projection P_f(q, eta) for interior q and finite eta.
inline double project(DistanceFamily f, double q, double eta) {
  if (std::isfinite(eta) && std::abs(eta) > kEtaClamp)
    throw OverflowGuard("project: |eta| = " + std::to_string(std::abs(eta)) +
                        " exceeds clamp " + std::to_string(kEtaClamp));
  return detail::project_clamped(f, q, eta, nullptr);
}

// Pointwise Bregman divergence D_f(p || q) for p in the closed domain and q interior.
inline double distance_term(DistanceFamily f, double p, double q) {
  if (!in_closed_domain(f, p)) detail::domain_fail(f, p, "distance: p");
  if (!in_open_domain(f, q)) detail::domain_fail(f, q, "distance: q");
  switch (f) {
    case DistanceFamily::UnnormalizedRelativeEntropy:
      // p log(p/q) - p + q
      return detail::xlogx(p) - p * std::log(q) - p + q;
    case DistanceFamily::ShiftedRelativeEntropy:
      return detail::xlogx(p - 1.0) - (p - 1.0) * std::log(q - 1.0) - p + q;
    case DistanceFamily::BinaryRelativeEntropy:
      return detail::xlogx(p) - p * std::log(q) + detail::xlogx(1.0 - p) -
             (1.0 - p) * std::log1p(-q);
  }
  return 0.0;
}

// Separable distance D_f(p || q) = sum_i D_f(p_i || q_i); >= 0, zero iff p = q.
inline double distance(DistanceFamily f, const Eigen::Ref<const Eigen::VectorXd>& p,
                       const Eigen::Ref<const Eigen::VectorXd>& q) {
  if (p.size() != q.size())
    throw LengthMismatch("distance: p has length " + std::to_string(p.size()) +
                         ", q has length " + std::to_string(q.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) acc += distance_term(f, p[i], q[i]);
  return acc;
}

}  // namespace bregbal
