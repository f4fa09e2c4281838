#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bregbal/design.hpp"
#include "bregbal/errors.hpp"
#include "bregbal/solver.hpp"

namespace bregbal {

struct CovariateBalance {
  std::string name;
  double unadjusted_smd = 0.0;
  double adjusted_smd = 0.0;
  double constraint_residual = 0.0;
  bool flagged = false;  // adjusted SMD above the threshold
};

struct BalanceReport {
  std::vector<CovariateBalance> covariates;
  double ess_treated = 0.0;
  double ess_control = 0.0;
  double threshold = 0.05;
};

// Absolute standardized mean differences, one per non-intercept column of C:
// |weighted treated mean - weighted control mean| / pooled unweighted SD.
// The denominator is held fixed across weighting methods (classical pooled SD
// with n-1 arms-combined degrees of freedom) so reports are comparable.
inline Eigen::VectorXd weighted_smd(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                    const Eigen::VectorXd& weights) {
  const Eigen::Index n = C.n(), m = C.m();
  if (Z.size() != n || weights.size() != n)
    throw LengthMismatch("weighted_smd: C, Z, weights must share length");
  if ((weights.array() <= 0.0).any()) throw DomainError("weights must be positive");
  const double w1 = (weights.array() * Z.array()).sum();
  const double w0 = (weights.array() * (1.0 - Z.array())).sum();
  const double n1 = Z.sum(), n0 = double(n) - Z.sum();
  Eigen::VectorXd out(m - 1);
  for (Eigen::Index j = 1; j < m; ++j) {
    const Eigen::ArrayXd col = C.C.col(j).array();
    const double mean1_w = (weights.array() * Z.array() * col).sum() / w1;
    const double mean0_w = (weights.array() * (1.0 - Z.array()) * col).sum() / w0;
    const double mean1 = (Z.array() * col).sum() / n1;
    const double mean0 = ((1.0 - Z.array()) * col).sum() / n0;
    const double ss1 = (Z.array() * (col - mean1).square()).sum();
    const double ss0 = ((1.0 - Z.array()) * (col - mean0).square()).sum();
    const double pooled_sd = std::sqrt((ss1 + ss0) / (n1 + n0 - 2.0));
    if (pooled_sd <= 0.0)
      throw DomainError("zero pooled variance for balance column " +
                        std::to_string(j + 1));
    out[j - 1] = std::abs(mean1_w - mean0_w) / pooled_sd;
  }
  return out;
}

// Kish effective sample size per arm: (sum w)^2 / sum w^2.
inline std::pair<double, double> effective_sample_size(const Eigen::VectorXd& weights,
                                                       const Eigen::VectorXd& Z) {
  if (Z.size() != weights.size())
    throw LengthMismatch("effective_sample_size: weights and Z must share length");
  if ((weights.array() <= 0.0).any()) throw DomainError("weights must be positive");
  double s1 = 0.0, ss1 = 0.0, s0 = 0.0, ss0 = 0.0;
  for (Eigen::Index i = 0; i < Z.size(); ++i) {
    if (Z[i] == 1.0) {
      s1 += weights[i];
      ss1 += weights[i] * weights[i];
    } else {
      s0 += weights[i];
      ss0 += weights[i] * weights[i];
    }
  }
  return {ss1 > 0.0 ? s1 * s1 / ss1 : 0.0, ss0 > 0.0 ? s0 * s0 / ss0 : 0.0};
}

inline BalanceReport balance_report(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                    const Eigen::VectorXd& weights,
                                    const BalanceProblem* prob = nullptr,
                                    double threshold = 0.05) {
  const Eigen::VectorXd unif = Eigen::VectorXd::Ones(C.n());
  const Eigen::VectorXd before = weighted_smd(C, Z, unif);
  const Eigen::VectorXd after = weighted_smd(C, Z, weights);
  Eigen::VectorXd residual;
  if (prob) residual = (prob->A.transpose() * weights - prob->b).cwiseAbs();
  BalanceReport report;
  report.threshold = threshold;
  for (Eigen::Index j = 1; j < C.m(); ++j) {
    CovariateBalance rec;
    rec.name = C.column_names[static_cast<std::size_t>(j)];
    rec.unadjusted_smd = before[j - 1];
    rec.adjusted_smd = after[j - 1];
    // constraint indexing follows the builder layout: intercept first
    if (prob && residual.size() > j) rec.constraint_residual = residual[j];
    rec.flagged = rec.adjusted_smd > threshold;
    report.covariates.push_back(rec);
  }
  auto [ess1, ess0] = effective_sample_size(weights, Z);
  report.ess_treated = ess1;
  report.ess_control = ess0;
  return report;
}

}  // namespace bregbal
