#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "bregbal/bregman.hpp"
#include "bregbal/design.hpp"
#include "bregbal/errors.hpp"

namespace bregbal {

struct SolverOptions {
  double grad_tol = 1e-9;          // infinity norm of the dual gradient
  int max_iter = 500;
  double armijo_c = 1e-4;
  double backtrack_ratio = 0.5;
  double levenberg_floor = 1e-10;
  double divergence_norm = 1e6;    // on ||lambda||_inf
  double duality_gap_tol = 1e-6;   // relative, |primal - dual| <= tol (1 + |primal|)
  double balance_tol = 1e-6;       // relative, per constraint
  bool verbose = false;
  Eigen::VectorXd lambda0;         // empty = start at zero (p = q)
};

enum class SolveStatus { Converged, MaxIterations, Infeasible, NumericalFailure };

inline const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max_iterations";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct DualSolution {
  Eigen::VectorXd lambda_hat;
  int iterations = 0;
  double grad_norm_final = std::numeric_limits<double>::quiet_NaN();
  double primal_value = std::numeric_limits<double>::quiet_NaN();  // D_f(p_hat || q)
  double dual_value = std::numeric_limits<double>::quiet_NaN();    // Lagrangian at the saddle
  SolveStatus status = SolveStatus::NumericalFailure;
  std::string message;
};

// Fitted balancing weights, bound to the problem that produced them.
struct WeightSet {
  Eigen::VectorXd p_hat;
  std::uint64_t problem_digest = 0;
  DistanceFamily family = DistanceFamily::UnnormalizedRelativeEntropy;
  Estimand estimand = Estimand::ATE;
};

namespace detail {

// Weights at a dual iterate: p_i = P_f(q_i, row_i(A) lambda), clamped form.
inline Eigen::VectorXd primal_at(const BalanceProblem& prob, DistanceFamily family,
                                 const Eigen::VectorXd& lambda, bool* clamped) {
  const Eigen::VectorXd eta = prob.A * lambda;
  Eigen::VectorXd p(prob.n());
  for (Eigen::Index i = 0; i < prob.n(); ++i)
    p[i] = project_clamped(family, prob.q[i], eta[i], clamped);
  return p;
}

inline bool strictly_interior(DistanceFamily family, const Eigen::VectorXd& p) {
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (!in_open_domain(family, p[i])) return false;
  return true;
}

}  // namespace detail

// Lagrangian evaluated at the projected primal point:
//   L[P_f(q, A lambda), q, lambda] = D_f(p(lambda) || q) + (A^T p(lambda) - b)^T lambda.
// Concave in lambda; equals zero at lambda = 0.
inline double dual_objective(const BalanceProblem& prob, DistanceFamily family,
                             const Eigen::VectorXd& lambda) {
  if (lambda.size() != prob.K()) throw LengthMismatch("dual_objective: lambda length != K");
  bool clamped = false;
  const Eigen::VectorXd p = detail::primal_at(prob, family, lambda, &clamped);
  return distance(family, p, prob.q) + (prob.A.transpose() * p - prob.b).dot(lambda);
}

// Gradient of the dual objective: A^T P_f(q, A lambda) - b. Zero at the optimum.
inline Eigen::VectorXd dual_gradient(const BalanceProblem& prob, DistanceFamily family,
                                     const Eigen::VectorXd& lambda) {
  if (lambda.size() != prob.K()) throw LengthMismatch("dual_gradient: lambda length != K");
  bool clamped = false;
  const Eigen::VectorXd p = detail::primal_at(prob, family, lambda, &clamped);
  return prob.A.transpose() * p - prob.b;
}

// Hessian of the dual objective: A^T diag(dP_f/d eta) A, negative semidefinite
// since dP_f/d eta = -1/f''(p) < 0.
inline Eigen::MatrixXd dual_hessian(const BalanceProblem& prob, DistanceFamily family,
                                    const Eigen::VectorXd& lambda) {
  if (lambda.size() != prob.K()) throw LengthMismatch("dual_hessian: lambda length != K");
  bool clamped = false;
  const Eigen::VectorXd p = detail::primal_at(prob, family, lambda, &clamped);
  Eigen::VectorXd slope(prob.n());
  for (Eigen::Index i = 0; i < prob.n(); ++i) slope[i] = projection_slope(family, p[i]);
  return prob.A.transpose() * slope.asDiagonal() * prob.A;
}

// Damped Newton ascent on the concave dual, started at lambda = 0 (p = q).
// Converged requires both the gradient tolerance and the strong-duality
// certificate |primal - dual| <= gap_tol (1 + |primal|). Infeasibility is
// reported, never repaired by relaxing constraints.
inline DualSolution solve_dual(const BalanceProblem& prob, DistanceFamily family,
                               const SolverOptions& opts = SolverOptions()) {
  const Eigen::Index K = prob.K();
  DualSolution sol;
  sol.lambda_hat = Eigen::VectorXd::Zero(K);

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(K);
  if (opts.lambda0.size() > 0) {
    if (opts.lambda0.size() != K) throw LengthMismatch("solve_dual: lambda0 length != K");
    lambda = opts.lambda0;
  }
  bool clamped = false;
  Eigen::VectorXd p = detail::primal_at(prob, family, lambda, &clamped);
  double objective = distance(family, p, prob.q) +
                     (prob.A.transpose() * p - prob.b).dot(lambda);

  for (int iter = 0; iter <= opts.max_iter; ++iter) {
    const Eigen::VectorXd grad = prob.A.transpose() * p - prob.b;
    const double grad_norm = grad.lpNorm<Eigen::Infinity>();
    const double primal = distance(family, p, prob.q);
    const double dual = primal + grad.dot(lambda);

    sol.lambda_hat = lambda;
    sol.iterations = iter;
    sol.grad_norm_final = grad_norm;
    sol.primal_value = primal;
    sol.dual_value = dual;

    if (!std::isfinite(objective) || !std::isfinite(grad_norm)) {
      sol.status = SolveStatus::NumericalFailure;
      sol.message = "non-finite objective or gradient";
      return sol;
    }
    if (grad_norm <= opts.grad_tol &&
        std::abs(primal - dual) <= opts.duality_gap_tol * (1.0 + std::abs(primal))) {
      if (clamped || !detail::strictly_interior(family, p)) {
        sol.status = SolveStatus::Infeasible;
        sol.message = "solution on the domain boundary; constraint set is not "
                      "zone consistent (near-positivity violation)";
        return sol;
      }
      sol.status = SolveStatus::Converged;
      return sol;
    }
    if (lambda.lpNorm<Eigen::Infinity>() > opts.divergence_norm) {
      sol.status = SolveStatus::Infeasible;
      sol.message = "dual iterates diverged; constraints are likely infeasible "
                    "(insufficient overlap)";
      return sol;
    }
    if (iter == opts.max_iter) break;

    // Newton direction from the negated Hessian; Levenberg shift on failure.
    Eigen::VectorXd slope(prob.n());
    for (Eigen::Index i = 0; i < prob.n(); ++i) slope[i] = -projection_slope(family, p[i]);
    const Eigen::MatrixXd negH = prob.A.transpose() * slope.asDiagonal() * prob.A;
    Eigen::VectorXd direction;
    double mu = 0.0;
    for (;;) {
      Eigen::MatrixXd M = negH;
      if (mu > 0.0) M.diagonal().array() += mu;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        direction = ldlt.solve(grad);
        if (direction.allFinite() && grad.dot(direction) > 0.0) break;
      }
      mu = mu == 0.0 ? opts.levenberg_floor : 2.0 * mu;
      if (mu > 1e12) {
        sol.status = SolveStatus::NumericalFailure;
        sol.message = "Newton system unsolvable even with Levenberg shift";
        return sol;
      }
    }

    // Armijo backtracking on the ascent direction; the acceptance bound
    // carries a machine-precision slack so steps near the optimum are not
    // rejected on rounding noise.
    const double slope_term = grad.dot(direction);
    const double slack = 1e-15 * (1.0 + std::abs(objective));
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd lambda_next;
    Eigen::VectorXd p_next;
    double objective_next = 0.0;
    while (step > 1e-14) {
      lambda_next = lambda + step * direction;
      bool clamped_next = false;
      p_next = detail::primal_at(prob, family, lambda_next, &clamped_next);
      objective_next = distance(family, p_next, prob.q) +
                       (prob.A.transpose() * p_next - prob.b).dot(lambda_next);
      if (std::isfinite(objective_next) &&
          objective_next >= objective + opts.armijo_c * step * slope_term - slack) {
        accepted = true;
        clamped = clamped_next;
        break;
      }
      step *= opts.backtrack_ratio;
    }
    if (!accepted) {
      sol.status = SolveStatus::Infeasible;
      sol.message = "line search stalled with nonzero gradient; the constraint "
                    "set may not intersect the weight domain";
      return sol;
    }
    lambda = lambda_next;
    p = p_next;
    objective = objective_next;
    if (opts.verbose)
      std::clog << "solve_dual iter=" << iter + 1 << " grad_norm=" << grad_norm
                << " step=" << step << " objective=" << objective << '\n';
  }

  sol.status = SolveStatus::MaxIterations;
  sol.message = "no convergence within max_iter";
  return sol;
}

// p_hat_i = P_f(q_i, row_i(A) lambda_hat); certifies interiority and balance.
inline WeightSet recover_weights(const BalanceProblem& prob, DistanceFamily family,
                                 const DualSolution& sol) {
  if (sol.status != SolveStatus::Converged)
    throw Error("recover_weights: solution status is " + std::string(status_name(sol.status)));
  const Eigen::VectorXd eta = prob.A * sol.lambda_hat;
  WeightSet ws;
  ws.p_hat.resize(prob.n());
  for (Eigen::Index i = 0; i < prob.n(); ++i)
    ws.p_hat[i] = project(family, prob.q[i], eta[i]);
  if (!detail::strictly_interior(family, ws.p_hat))
    throw BalanceViolation("recovered weights touch the domain boundary");
  const Eigen::VectorXd residual = prob.A.transpose() * ws.p_hat - prob.b;
  const double tol = 1e-6 * (1.0 + prob.b.lpNorm<Eigen::Infinity>());
  if (residual.lpNorm<Eigen::Infinity>() > tol)
    throw BalanceViolation("constraint residual " +
                           std::to_string(residual.lpNorm<Eigen::Infinity>()) +
                           " exceeds tolerance " + std::to_string(tol));
  ws.problem_digest = problem_digest(prob);
  ws.family = family;
  ws.estimand = prob.estimand;
  return ws;
}

// |D_f(p_hat || q) - dual value|, recomputed from lambda_hat.
inline double duality_gap(const BalanceProblem& prob, DistanceFamily family,
                          const DualSolution& sol) {
  if (sol.status != SolveStatus::Converged)
    throw Error("duality_gap: solution status is " + std::string(status_name(sol.status)));
  bool clamped = false;
  const Eigen::VectorXd p = detail::primal_at(prob, family, sol.lambda_hat, &clamped);
  const double primal = distance(family, p, prob.q);
  const double dual = primal + (prob.A.transpose() * p - prob.b).dot(sol.lambda_hat);
  return std::abs(primal - dual);
}

}  // namespace bregbal
