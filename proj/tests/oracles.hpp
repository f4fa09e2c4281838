// Test-only oracles, independent of the Newton solver path they check.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bregbal/bregman.hpp"
#include "bregbal/design.hpp"
#include "bregbal/rng.hpp"

namespace oracles {

// Direct constrained minimization of D_f by cyclic projections onto the
// individual constraint hyperplanes (row-action method). Each single
// hyperplane {a^T p = beta} projection reduces to a scalar root-find for the
// hyperplane's own multiplier; cycling converges to the generalized
// projection of the starting point q.
inline Eigen::VectorXd cyclic_projection_weights(const bregbal::BalanceProblem& prob,
                                                 bregbal::DistanceFamily family,
                                                 int max_sweeps = 20000,
                                                 double tol = 1e-10) {
  using bregbal::detail::project_clamped;
  const Eigen::Index n = prob.n(), K = prob.K();
  Eigen::VectorXd p = prob.q;

  auto hyperplane_residual = [&](const Eigen::VectorXd& a, double beta, double t) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (a[i] == 0.0) continue;
      acc += a[i] * project_clamped(family, p[i], a[i] * t, nullptr);
    }
    return acc - beta;
  };

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < K; ++j) {
      const Eigen::VectorXd a = prob.A.col(j);
      const double beta = prob.b[j];
      // residual is strictly decreasing in t; bracket then bisect
      double lo = -1.0, hi = 1.0;
      while (hyperplane_residual(a, beta, lo) < 0.0 && lo > -400.0) lo *= 2.0;
      while (hyperplane_residual(a, beta, hi) > 0.0 && hi < 400.0) hi *= 2.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (hyperplane_residual(a, beta, mid) > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      const double t = 0.5 * (lo + hi);
      for (Eigen::Index i = 0; i < n; ++i)
        if (a[i] != 0.0) p[i] = project_clamped(family, p[i], a[i] * t, nullptr);
    }
    const Eigen::VectorXd residual = prob.A.transpose() * p - prob.b;
    worst = residual.lpNorm<Eigen::Infinity>();
    if (worst <= tol * (1.0 + prob.b.lpNorm<Eigen::Infinity>())) return p;
  }
  throw std::runtime_error("cyclic projection oracle did not converge");
}

// Coarse-to-fine 1-D maximization over [lo, hi].
inline double grid_search_max(const std::function<double(double)>& f, double lo, double hi,
                              int points = 2001, int refinements = 12) {
  double best_x = lo;
  for (int pass = 0; pass < refinements; ++pass) {
    double best_val = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < points; ++k) {
      const double x = lo + (hi - lo) * double(k) / double(points - 1);
      const double val = f(x);
      if (val > best_val) {
        best_val = val;
        best_x = x;
      }
    }
    const double width = (hi - lo) / double(points - 1);
    lo = best_x - 2.0 * width;
    hi = best_x + 2.0 * width;
  }
  return best_x;
}

// Central finite differences of a scalar function of a vector.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    const double step = h * (1.0 + std::abs(x[k]));
    xp[k] += step;
    xm[k] -= step;
    g[k] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

inline Eigen::MatrixXd fd_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    const double step = h * (1.0 + std::abs(x[k]));
    xp[k] += step;
    xm[k] -= step;
    J.col(k) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return J;
}

// Nelder-Mead minimization; independent optimizer used as the logistic
// maximum-likelihood oracle.
inline Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                   Eigen::VectorXd x0, double scale = 0.5,
                                   int max_iter = 20000, double tol = 1e-12) {
  const int d = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> simplex(d + 1, x0);
  for (int k = 0; k < d; ++k) simplex[k + 1][k] += scale;
  std::vector<double> val(d + 1);
  for (int k = 0; k <= d; ++k) val[k] = f(simplex[k]);

  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<int> order(d + 1);
    for (int k = 0; k <= d; ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return val[a] < val[b]; });
    const int best = order[0], worst = order[d], second = order[d - 1];
    if (std::abs(val[worst] - val[best]) <= tol * (1.0 + std::abs(val[best]))) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (int k = 0; k <= d; ++k)
      if (k != worst) centroid += simplex[k];
    centroid /= double(d);

    const Eigen::VectorXd refl = centroid + (centroid - simplex[worst]);
    const double refl_val = f(refl);
    if (refl_val < val[best]) {
      const Eigen::VectorXd expand = centroid + 2.0 * (centroid - simplex[worst]);
      const double expand_val = f(expand);
      if (expand_val < refl_val) {
        simplex[worst] = expand;
        val[worst] = expand_val;
      } else {
        simplex[worst] = refl;
        val[worst] = refl_val;
      }
    } else if (refl_val < val[second]) {
      simplex[worst] = refl;
      val[worst] = refl_val;
    } else {
      const Eigen::VectorXd contract = centroid + 0.5 * (simplex[worst] - centroid);
      const double contract_val = f(contract);
      if (contract_val < val[worst]) {
        simplex[worst] = contract;
        val[worst] = contract_val;
      } else {
        for (int k = 0; k <= d; ++k) {
          if (k == best) continue;
          simplex[k] = simplex[best] + 0.5 * (simplex[k] - simplex[best]);
          val[k] = f(simplex[k]);
        }
      }
    }
  }
  int best = 0;
  for (int k = 1; k <= d; ++k)
    if (val[k] < val[best]) best = k;
  return simplex[best];
}

// Deterministic random instances for property suites.
struct InstanceRng {
  bregbal::StreamRng rng;
  explicit InstanceRng(std::uint64_t seed, std::uint64_t stream = 0)
      : rng(seed, stream) {}
  double normal() { return rng.next_normal(); }
  double uniform() { return rng.next_uniform(); }
  Eigen::MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd M(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) M(i, j) = normal();
    return M;
  }
  // Z with both arms guaranteed non-empty.
  Eigen::VectorXd treatment(Eigen::Index n, double prob = 0.5) {
    Eigen::VectorXd Z(n);
    for (;;) {
      for (Eigen::Index i = 0; i < n; ++i) Z[i] = uniform() < prob ? 1.0 : 0.0;
      const double s = Z.sum();
      if (s > 0.0 && s < double(n)) return Z;
    }
  }

  // Z with at least min_each units in each arm; heavily lopsided arms make
  // three-way raking designs genuinely infeasible, which is not what the
  // convergence property suites are probing.
  Eigen::VectorXd treatment_balanced(Eigen::Index n, Eigen::Index min_each) {
    for (;;) {
      Eigen::VectorXd Z = treatment(n);
      const double s = Z.sum();
      if (s >= double(min_each) && s <= double(n - min_each)) return Z;
    }
  }
};

}  // namespace oracles
