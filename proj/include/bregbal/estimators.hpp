#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "bregbal/bregman.hpp"
#include "bregbal/design.hpp"
#include "bregbal/errors.hpp"
#include "bregbal/solver.hpp"

namespace bregbal {

struct CausalEstimate {
  double tau_hat = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> std_err;
  std::optional<double> ci_lower;
  std::optional<double> ci_upper;
  Estimand estimand = Estimand::ATE;
  Eigen::Index n_used = 0;
};

struct LogisticFit {
  Eigen::VectorXd coefficients;  // m
  Eigen::VectorXd fitted_probs;  // n, logistic(C beta)
  bool converged = false;
  int iterations = 0;
};

// Arm-specific least-squares fits on the balance functions.
struct OutcomeFit {
  Eigen::VectorXd beta0;  // control-arm regression
  Eigen::VectorXd beta1;  // treated-arm regression
};

// Horvitz-Thompson ratio estimator:
//   tau_hat = sum_i (2Z_i - 1) p_i Y_i / sum_i p_i Z_i.
// Invariant under positive rescaling of the weights.
inline CausalEstimate ht_estimate(const WeightSet& weights, const Eigen::VectorXd& Z,
                                  const Eigen::VectorXd& Y) {
  const Eigen::Index n = weights.p_hat.size();
  if (Z.size() != n || Y.size() != n)
    throw LengthMismatch("ht_estimate: weights, Z, Y must share length");
  const double denom = (weights.p_hat.array() * Z.array()).sum();
  if (denom <= 0.0) throw DegenerateDenominator("sum of treated weights is zero");
  const double numer =
      ((2.0 * Z.array() - 1.0) * weights.p_hat.array() * Y.array()).sum();
  CausalEstimate est;
  est.tau_hat = numer / denom;
  est.estimand = weights.estimand;
  est.n_used = n;
  return est;
}

namespace detail {

inline void attach_normal_ci(CausalEstimate& est, double se) {
  est.std_err = se;
  est.ci_lower = est.tau_hat - 1.96 * se;
  est.ci_upper = est.tau_hat + 1.96 * se;
}

}  // namespace detail

// M-estimation (sandwich) standard error for the Horvitz-Thompson estimator
// with dual-solver weights. Stacks the dual stationarity conditions
//   zeta_i = a_i p_hat_i - t_i
// with the effect estimating equation
//   psi_i = (2Z_i - 1) p_hat_i Y_i - Z_i p_hat_i tau_hat
// and plugs sample averages into
//   phi = psi - E[d psi/d lambda]^T E[d zeta/d lambda]^{-1} zeta,
//   se = sqrt(sum phi_i^2) / sum_i Z_i p_hat_i.
// For ATT problems the dual rows of the treated are zero, so this reduces to a
// weight-stabilized plug-in that ignores the estimation of lambda; it is the
// reported ATT standard error and tends to be conservative.
inline double sandwich_se(const BalanceProblem& prob, DistanceFamily family,
                          const DualSolution& sol, const Eigen::VectorXd& Y) {
  if (sol.status != SolveStatus::Converged)
    throw Error("sandwich_se requires a converged solution");
  if (Y.size() != prob.n()) throw LengthMismatch("sandwich_se: Y length != n");
  const Eigen::Index n = prob.n();
  const Eigen::Index K = prob.K();

  const Eigen::VectorXd eta = prob.A * sol.lambda_hat;
  Eigen::VectorXd p(n), slope(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = project(family, prob.q[i], eta[i]);
    slope[i] = projection_slope(family, p[i]);
  }
  const double treated_mass = (p.array() * prob.Z.array()).sum();
  if (treated_mass <= 0.0) throw DegenerateDenominator("sum of treated weights is zero");
  const double tau = ((2.0 * prob.Z.array() - 1.0) * p.array() * Y.array()).sum() /
                     treated_mass;

  if (prob.estimand == Estimand::ATT) {
    // Stabilized plug-in: centered per-arm residuals, weights held fixed.
    const double mu1 = (p.array() * prob.Z.array() * Y.array()).sum() / treated_mass;
    const double ctrl_mass = (p.array() * (1.0 - prob.Z.array())).sum();
    if (ctrl_mass <= 0.0) throw DegenerateDenominator("sum of control weights is zero");
    const double mu0 =
        (p.array() * (1.0 - prob.Z.array()) * Y.array()).sum() / ctrl_mass;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double resid = prob.Z[i] == 1.0 ? Y[i] - mu1 : Y[i] - mu0;
      const double phi = (2.0 * prob.Z[i] - 1.0) * p[i] * resid;
      acc += phi * phi;
    }
    return std::sqrt(acc) / treated_mass;
  }

  // Bread: (1/n) sum_i slope_i a_i a_i^T, the Jacobian of zeta in lambda.
  const Eigen::MatrixXd bread =
      (prob.A.transpose() * slope.asDiagonal() * prob.A) / double(n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (!lu.isInvertible())
    throw SingularBread("Jacobian of the dual estimating equations is singular");

  Eigen::VectorXd jpsi = Eigen::VectorXd::Zero(K);  // (1/n) sum_i dpsi_i/dlambda
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale = ((2.0 * prob.Z[i] - 1.0) * Y[i] - prob.Z[i] * tau) * slope[i];
    jpsi += scale * prob.A.row(i).transpose();
  }
  jpsi /= double(n);
  const Eigen::VectorXd correction = lu.solve(jpsi);

  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double psi = (2.0 * prob.Z[i] - 1.0) * p[i] * Y[i] - prob.Z[i] * p[i] * tau;
    const Eigen::VectorXd zeta =
        prob.A.row(i).transpose() * p[i] - prob.T.row(i).transpose();
    const double phi = psi - correction.dot(zeta);
    acc += phi * phi;
  }
  return std::sqrt(acc) / treated_mass;
}

// Logistic regression by iteratively reweighted least squares with step
// halving. Separation is reported through converged = false, not an error.
inline LogisticFit fit_logistic_mle(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                    double grad_tol = 1e-8, int max_iter = 100) {
  detail::check_builder_inputs(C, Z);
  const Eigen::Index n = C.n(), m = C.m();
  LogisticFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(m);

  auto log_likelihood = [&](const Eigen::VectorXd& beta) {
    const Eigen::ArrayXd xb = (C.C * beta).array();
    // log L = sum Z xb - log(1 + exp(xb)), computed stably
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = xb[i];
      const double log1pex = t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
      acc += Z[i] * t - log1pex;
    }
    return acc;
  };

  double ll = log_likelihood(fit.coefficients);
  for (int iter = 1; iter <= max_iter; ++iter) {
    fit.iterations = iter;
    Eigen::ArrayXd pi = (C.C * fit.coefficients).array().unaryExpr(
        [](double t) { return bregbal::detail::logistic(t); });
    const Eigen::VectorXd grad = C.C.transpose() * (Z.array() - pi).matrix();
    if (grad.lpNorm<Eigen::Infinity>() <= grad_tol) {
      fit.converged = true;
      break;
    }
    Eigen::ArrayXd w = (pi * (1.0 - pi)).max(1e-10);
    const Eigen::MatrixXd H = C.C.transpose() * w.matrix().asDiagonal() * C.C;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd delta = ldlt.solve(grad);
    if (!delta.allFinite()) break;
    double step = 1.0;
    while (step > 1e-12) {
      const Eigen::VectorXd cand = fit.coefficients + step * delta;
      const double ll_cand = log_likelihood(cand);
      if (std::isfinite(ll_cand) && ll_cand >= ll) {
        fit.coefficients = cand;
        ll = ll_cand;
        break;
      }
      step *= 0.5;
    }
    if (step <= 1e-12) break;  // stalled; leave converged = false
  }
  fit.fitted_probs = (C.C * fit.coefficients).array().unaryExpr(
      [](double t) { return bregbal::detail::logistic(t); });
  return fit;
}

// Inverse-probability weights from a fitted propensity model. Extreme
// probabilities raise rather than truncate; truncation changes the estimand.
inline WeightSet ipw_weights(const LogisticFit& fit, const Eigen::VectorXd& Z,
                             Estimand estimand) {
  const Eigen::Index n = fit.fitted_probs.size();
  if (Z.size() != n) throw LengthMismatch("ipw_weights: Z length != fitted_probs length");
  if (estimand != Estimand::ATE && estimand != Estimand::ATT)
    throw UnsupportedConfig("ipw_weights supports ATE and ATT only");
  WeightSet ws;
  ws.p_hat.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = fit.fitted_probs[i];
    if (pi < 1e-12 || pi > 1.0 - 1e-12)
      throw ExtremeProbability("fitted propensity " + std::to_string(pi) + " at row " +
                               std::to_string(i + 1));
    if (estimand == Estimand::ATE)
      ws.p_hat[i] = Z[i] == 1.0 ? 1.0 / pi : 1.0 / (1.0 - pi);
    else
      ws.p_hat[i] = Z[i] == 1.0 ? 1.0 : pi / (1.0 - pi);
  }
  ws.estimand = estimand;
  ws.problem_digest = 0;  // not tied to a balance problem
  return ws;
}

// Per-arm ordinary least squares of Y on the balance functions.
inline OutcomeFit fit_outcome_regressions(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                          const Eigen::VectorXd& Y) {
  detail::check_builder_inputs(C, Z);
  if (Y.size() != C.n()) throw LengthMismatch("fit_outcome_regressions: Y length != n");
  const Eigen::Index n = C.n(), m = C.m();
  const Eigen::Index n1 = static_cast<Eigen::Index>(Z.sum());
  const Eigen::Index n0 = n - n1;
  if (n1 <= m || n0 <= m)
    throw InsufficientData("each arm needs more units than balance functions for OLS");
  Eigen::MatrixXd C1(n1, m), C0(n0, m);
  Eigen::VectorXd Y1(n1), Y0(n0);
  Eigen::Index i1 = 0, i0 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (Z[i] == 1.0) {
      C1.row(i1) = C.C.row(i);
      Y1[i1++] = Y[i];
    } else {
      C0.row(i0) = C.C.row(i);
      Y0[i0++] = Y[i];
    }
  }
  OutcomeFit fit;
  fit.beta1 = C1.colPivHouseholderQr().solve(Y1);
  fit.beta0 = C0.colPivHouseholderQr().solve(Y0);
  return fit;
}

// Augmented inverse probability weighting estimator.
inline CausalEstimate aipw_estimate(const LogisticFit& fit, const OutcomeFit& outcome,
                                    const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                    const Eigen::VectorXd& Y, bool with_se = false) {
  const Eigen::Index n = C.n();
  if (fit.fitted_probs.size() != n || Z.size() != n || Y.size() != n)
    throw LengthMismatch("aipw_estimate: inputs must share length n");
  const Eigen::VectorXd mu1 = C.C * outcome.beta1;
  const Eigen::VectorXd mu0 = C.C * outcome.beta0;
  Eigen::VectorXd contrib(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = fit.fitted_probs[i];
    if (pi < 1e-12 || pi > 1.0 - 1e-12)
      throw ExtremeProbability("fitted propensity " + std::to_string(pi) + " at row " +
                               std::to_string(i + 1));
    contrib[i] = Z[i] * Y[i] / pi - (Z[i] - pi) * mu1[i] / pi -
                 (1.0 - Z[i]) * Y[i] / (1.0 - pi) - (Z[i] - pi) * mu0[i] / (1.0 - pi);
  }
  CausalEstimate est;
  est.tau_hat = contrib.mean();
  est.estimand = Estimand::ATE;
  est.n_used = n;
  if (with_se) {
    const double var = (contrib.array() - est.tau_hat).square().sum() / double(n);
    detail::attach_normal_ci(est, std::sqrt(var / double(n)));
  }
  return est;
}

// Plug-in standard error for externally supplied weights (weights treated as
// fixed); used for IPW and file-loaded weights where no dual solution exists.
inline double fixed_weight_se(const WeightSet& weights, const Eigen::VectorXd& Z,
                              const Eigen::VectorXd& Y) {
  const Eigen::Index n = weights.p_hat.size();
  if (Z.size() != n || Y.size() != n)
    throw LengthMismatch("fixed_weight_se: weights, Z, Y must share length");
  const double treated_mass = (weights.p_hat.array() * Z.array()).sum();
  const double ctrl_mass = (weights.p_hat.array() * (1.0 - Z.array())).sum();
  if (treated_mass <= 0.0 || ctrl_mass <= 0.0)
    throw DegenerateDenominator("an arm carries no weight");
  const double mu1 =
      (weights.p_hat.array() * Z.array() * Y.array()).sum() / treated_mass;
  const double mu0 =
      (weights.p_hat.array() * (1.0 - Z.array()) * Y.array()).sum() / ctrl_mass;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double resid = Z[i] == 1.0 ? Y[i] - mu1 : Y[i] - mu0;
    const double phi = (2.0 * Z[i] - 1.0) * weights.p_hat[i] * resid;
    acc += phi * phi;
  }
  return std::sqrt(acc) / treated_mass;
}

}  // namespace bregbal
