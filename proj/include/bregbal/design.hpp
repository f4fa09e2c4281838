#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bregbal/bregman.hpp"
#include "bregbal/errors.hpp"

namespace bregbal {

enum class Estimand { ATE, ATT, OWATE_Single, ICBPS, Calibration };

inline const char* estimand_name(Estimand e) {
  switch (e) {
    case Estimand::ATE: return "ate";
    case Estimand::ATT: return "att";
    case Estimand::OWATE_Single: return "owate";
    case Estimand::ICBPS: return "icbps";
    case Estimand::Calibration: return "calibration";
  }
  return "unknown";
}

// Raw data as ingested: covariates, binary treatment, optional outcome,
// optional per-unit sampling weights (empty means "family default").
struct Dataset {
  Eigen::MatrixXd X;                       // n x d
  Eigen::VectorXd Z;                       // n, entries in {0, 1}
  Eigen::VectorXd Y;                       // n or empty
  Eigen::VectorXd q;                       // n or empty
  std::vector<std::string> column_names;   // d labels for X

  Eigen::Index n() const { return X.rows(); }
};

inline void validate_treatment(const Eigen::Ref<const Eigen::VectorXd>& Z) {
  if (Z.size() < 2) throw InsufficientData("need at least 2 units");
  int n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < Z.size(); ++i) {
    if (Z[i] == 1.0)
      ++n1;
    else if (Z[i] == 0.0)
      ++n0;
    else
      throw DomainError("treatment vector must be 0/1; found " +
                        std::to_string(Z[i]) + " at row " + std::to_string(i + 1));
  }
  if (n1 == 0 || n0 == 0) throw DegenerateArm("both treatment arms must be non-empty");
}

// Balance-function matrix C (n x m) with a leading intercept column.
struct BalanceFunctions {
  Eigen::MatrixXd C;
  std::vector<std::string> column_names;

  Eigen::Index n() const { return C.rows(); }
  Eigen::Index m() const { return C.cols(); }
};

namespace detail {

// Rank check via column-pivoted QR; names the offending columns.
inline void require_full_column_rank(const Eigen::MatrixXd& M,
                                     const std::vector<std::string>& names,
                                     const char* what) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  qr.setThreshold(1e-10 * M.norm());
  if (qr.rank() == M.cols()) return;
  const auto perm = qr.colsPermutation().indices();
  std::string dropped;
  for (Eigen::Index k = qr.rank(); k < M.cols(); ++k) {
    if (!dropped.empty()) dropped += ", ";
    const Eigen::Index col = perm[k];
    dropped += col < static_cast<Eigen::Index>(names.size())
                   ? names[col]
                   : "column " + std::to_string(col + 1);
  }
  throw RankDeficient(std::string(what) + ": linearly dependent columns: " + dropped);
}

inline Eigen::VectorXd default_sampling_weights(DistanceFamily family, Eigen::Index n) {
  double q = 1.0;
  if (family == DistanceFamily::ShiftedRelativeEntropy) q = 2.0;
  if (family == DistanceFamily::BinaryRelativeEntropy) q = 0.5;
  return Eigen::VectorXd::Constant(n, q);
}

inline Eigen::VectorXd resolve_sampling_weights(DistanceFamily family, Eigen::Index n,
                                                const Eigen::VectorXd& q) {
  if (q.size() == 0) return default_sampling_weights(family, n);
  if (q.size() != n) throw LengthMismatch("sampling weights length != n");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!in_open_domain(family, q[i]))
      throw DomainError("sampling weight q[" + std::to_string(i + 1) + "] = " +
                        std::to_string(q[i]) + " not interior to domain of " +
                        family_name(family));
  return q;
}

}  // namespace detail

// Builds C = [1 | selected columns of X], optionally centering/scaling the
// non-intercept columns to mean 0, variance 1 (sample SD, n-1 denominator).
inline BalanceFunctions build_balance_functions(const Dataset& data,
                                                const std::vector<int>& columns,
                                                bool standardize = false) {
  const Eigen::Index n = data.n();
  const Eigen::Index m = static_cast<Eigen::Index>(columns.size()) + 1;
  if (n <= m)
    throw InsufficientData("n = " + std::to_string(n) +
                           " too small for m = " + std::to_string(m) + " balance functions");
  BalanceFunctions bf;
  bf.C.resize(n, m);
  bf.C.col(0).setOnes();
  bf.column_names.push_back("(intercept)");
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const int c = columns[j];
    if (c < 0 || c >= data.X.cols())
      throw ConfigError("balance column index " + std::to_string(c) + " out of range");
    Eigen::VectorXd col = data.X.col(c);
    if (standardize) {
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().sum() / double(n - 1));
      if (sd <= 0.0)
        throw RankDeficient("cannot standardize constant column " +
                            (c < static_cast<int>(data.column_names.size())
                                 ? data.column_names[c]
                                 : std::to_string(c + 1)));
      col = (col.array() - mean) / sd;
    }
    bf.C.col(static_cast<Eigen::Index>(j) + 1) = col;
    bf.column_names.push_back(c < static_cast<int>(data.column_names.size())
                                  ? data.column_names[c]
                                  : "x" + std::to_string(c + 1));
  }
  detail::require_full_column_rank(bf.C, bf.column_names, "balance functions");
  return bf;
}

// Convenience for call sites that already hold the covariate matrix.
inline BalanceFunctions balance_functions_from_matrix(const Eigen::MatrixXd& X,
                                                      std::vector<std::string> names = {}) {
  const Eigen::Index n = X.rows();
  const Eigen::Index m = X.cols() + 1;
  if (n <= m) throw InsufficientData("n too small for requested balance functions");
  BalanceFunctions bf;
  bf.C.resize(n, m);
  bf.C.col(0).setOnes();
  bf.C.rightCols(X.cols()) = X;
  bf.column_names.push_back("(intercept)");
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    bf.column_names.push_back(static_cast<std::size_t>(j) < names.size()
                                  ? names[static_cast<std::size_t>(j)]
                                  : "x" + std::to_string(j + 1));
  detail::require_full_column_rank(bf.C, bf.column_names, "balance functions");
  return bf;
}

// One constrained program: minimize D_f(p || q) subject to A^T p = b.
// T holds per-unit target shares with colwise sums equal to b; they define the
// unit-level estimating equations used by the sandwich variance.
struct BalanceProblem {
  Eigen::MatrixXd A;  // n x K
  Eigen::VectorXd b;  // K
  Eigen::MatrixXd T;  // n x K
  Eigen::VectorXd q;  // n, strictly interior
  Eigen::VectorXd Z;  // n, 0/1
  Estimand estimand = Estimand::ATE;
  DistanceFamily family_default = DistanceFamily::UnnormalizedRelativeEntropy;
  std::vector<std::string> constraint_names;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index K() const { return A.cols(); }
};

// FNV-1a over the problem's defining data; binds a WeightSet to its problem.
inline std::uint64_t problem_digest(const BalanceProblem& prob) {
  std::uint64_t h = 1469598103934665603ULL;
  auto eat = [&h](const double* ptr, Eigen::Index count) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(ptr);
    for (Eigen::Index i = 0; i < count * static_cast<Eigen::Index>(sizeof(double)); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  eat(prob.A.data(), prob.A.size());
  eat(prob.b.data(), prob.b.size());
  eat(prob.q.data(), prob.q.size());
  eat(prob.Z.data(), prob.Z.size());
  h ^= static_cast<std::uint64_t>(prob.estimand);
  h *= 1099511628211ULL;
  h ^= static_cast<std::uint64_t>(prob.family_default);
  h *= 1099511628211ULL;
  return h;
}

namespace detail {

inline void check_builder_inputs(const BalanceFunctions& C, const Eigen::VectorXd& Z) {
  if (C.n() != Z.size()) throw LengthMismatch("balance functions and Z differ in length");
  validate_treatment(Z);
  if ((C.C.col(0).array() != 1.0).any())
    throw ConfigError("first balance function must be an intercept column of ones");
}

inline void finalize_problem(BalanceProblem& prob, const std::vector<std::string>& names) {
  prob.constraint_names = names;
  require_full_column_rank(prob.A, names, "constraint matrix");
}

}  // namespace detail

// ATE design: A = [A0 | A1] with a_{ij0} = (2Z_i - 1) c_j(X_i) and
// a_{ij1} = Z_i c_j(X_i); b = [0_m ; sum_i q_i c_j(X_i)].
inline BalanceProblem build_ate_problem(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                        DistanceFamily family = DistanceFamily::UnnormalizedRelativeEntropy,
                                        const Eigen::VectorXd& q_in = Eigen::VectorXd()) {
  detail::check_builder_inputs(C, Z);
  const Eigen::Index n = C.n(), m = C.m();
  BalanceProblem prob;
  prob.q = detail::resolve_sampling_weights(family, n, q_in);
  prob.Z = Z;
  prob.estimand = Estimand::ATE;
  prob.family_default = family;
  prob.A.resize(n, 2 * m);
  prob.T = Eigen::MatrixXd::Zero(n, 2 * m);
  const Eigen::ArrayXd sign = 2.0 * Z.array() - 1.0;
  prob.A.leftCols(m) = C.C.array().colwise() * sign;
  prob.A.rightCols(m) = C.C.array().colwise() * Z.array();
  prob.T.rightCols(m) = C.C.array().colwise() * prob.q.array();
  prob.b.resize(2 * m);
  prob.b.head(m).setZero();
  prob.b.tail(m) = prob.T.rightCols(m).colwise().sum();
  std::vector<std::string> names;
  for (const auto& nm : C.column_names) names.push_back("contrast:" + nm);
  for (const auto& nm : C.column_names) names.push_back("treated:" + nm);
  detail::finalize_problem(prob, names);
  return prob;
}

// ATT design: a_{ij} = (1 - Z_i) c_j(X_i), b_j = sum_i q_i Z_i c_j(X_i).
// Treated rows of A are zero, so solved weights fix p_i = q_i on the treated.
inline BalanceProblem build_att_problem(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                        DistanceFamily family = DistanceFamily::UnnormalizedRelativeEntropy,
                                        const Eigen::VectorXd& q_in = Eigen::VectorXd()) {
  detail::check_builder_inputs(C, Z);
  const Eigen::Index n = C.n(), m = C.m();
  BalanceProblem prob;
  prob.q = detail::resolve_sampling_weights(family, n, q_in);
  prob.Z = Z;
  prob.estimand = Estimand::ATT;
  prob.family_default = family;
  prob.A = C.C.array().colwise() * (1.0 - Z.array());
  prob.T = C.C.array().colwise() * (prob.q.array() * Z.array());
  prob.b = prob.T.colwise().sum();
  detail::finalize_problem(prob, C.column_names);
  return prob;
}

// Single-set design (CBPS-style under the shifted family, OWATE under the
// binary family): a_{ij} = (2Z_i - 1) c_j(X_i), b = 0_m.
inline BalanceProblem build_single_set_problem(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                               DistanceFamily family = DistanceFamily::ShiftedRelativeEntropy,
                                               const Eigen::VectorXd& q_in = Eigen::VectorXd()) {
  detail::check_builder_inputs(C, Z);
  const Eigen::Index n = C.n(), m = C.m();
  BalanceProblem prob;
  prob.q = detail::resolve_sampling_weights(family, n, q_in);
  prob.Z = Z;
  prob.estimand = Estimand::OWATE_Single;
  prob.family_default = family;
  prob.A = C.C.array().colwise() * (2.0 * Z.array() - 1.0);
  prob.T = Eigen::MatrixXd::Zero(n, m);
  prob.b = Eigen::VectorXd::Zero(m);
  detail::finalize_problem(prob, C.column_names);
  return prob;
}

// iCBPS design: same A as the ATE design, but the second target block is the
// unweighted column sum b_{j1} = sum_i c_j(X_i).
inline BalanceProblem build_icbps_problem(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                          DistanceFamily family = DistanceFamily::ShiftedRelativeEntropy,
                                          const Eigen::VectorXd& q_in = Eigen::VectorXd()) {
  BalanceProblem prob = build_ate_problem(C, Z, family, q_in);
  const Eigen::Index m = C.m();
  prob.estimand = Estimand::ICBPS;
  prob.T.rightCols(m) = C.C;
  prob.b.tail(m) = C.C.colwise().sum();
  return prob;
}

// Calibration design (three-way balance): both arms are raked to the
// unweighted column sums. Requires uniform sampling weights.
inline BalanceProblem build_calibration_problem(const BalanceFunctions& C, const Eigen::VectorXd& Z,
                                                DistanceFamily family = DistanceFamily::UnnormalizedRelativeEntropy,
                                                const Eigen::VectorXd& q_in = Eigen::VectorXd()) {
  detail::check_builder_inputs(C, Z);
  const Eigen::Index n = C.n(), m = C.m();
  if (q_in.size() > 0 && (q_in.array() != q_in[0]).any())
    throw UnsupportedConfig("calibration design requires uniform sampling weights");
  BalanceProblem prob;
  prob.q = detail::resolve_sampling_weights(family, n, q_in);
  prob.Z = Z;
  prob.estimand = Estimand::Calibration;
  prob.family_default = family;
  prob.A.resize(n, 2 * m);
  prob.A.leftCols(m) = C.C.array().colwise() * (1.0 - Z.array());
  prob.A.rightCols(m) = C.C.array().colwise() * Z.array();
  prob.T.resize(n, 2 * m);
  prob.T.leftCols(m) = C.C;
  prob.T.rightCols(m) = C.C;
  prob.b.resize(2 * m);
  prob.b.head(m) = C.C.colwise().sum();
  prob.b.tail(m) = prob.b.head(m);
  std::vector<std::string> names;
  for (const auto& nm : C.column_names) names.push_back("control:" + nm);
  for (const auto& nm : C.column_names) names.push_back("treated:" + nm);
  detail::finalize_problem(prob, names);
  return prob;
}

}  // namespace bregbal
