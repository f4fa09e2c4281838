#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bregbal/design.hpp"
#include "bregbal/solver.hpp"
#include "oracles.hpp"

using namespace bregbal;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

BalanceFunctions intercept_only(Eigen::Index n) {
  BalanceFunctions bf;
  bf.C = Eigen::MatrixXd::Ones(n, 1);
  bf.column_names = {"(intercept)"};
  return bf;
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

struct Instance {
  BalanceProblem prob;
  DistanceFamily family;
};

// A compatible (family, builder) pair on mild random data; keeps treated
// counts away from binary-family infeasibility edges.
std::vector<Instance> mixed_instances(std::uint64_t seed, int count, Eigen::Index n,
                                      Eigen::Index covariates) {
  std::vector<Instance> out;
  oracles::InstanceRng rng(seed);
  int k = 0;
  while (static_cast<int>(out.size()) < count) {
    ++k;
    const Eigen::MatrixXd X = 0.8 * rng.normal_matrix(n, covariates);
    const Eigen::VectorXd Z = rng.treatment_balanced(n, n / 3);
    const auto bf = balance_functions_from_matrix(X);
    Instance inst;
    switch (k % 6) {
      case 0:
        inst.family = DistanceFamily::UnnormalizedRelativeEntropy;
        inst.prob = build_ate_problem(bf, Z, inst.family);
        break;
      case 1:
        inst.family = DistanceFamily::UnnormalizedRelativeEntropy;
        inst.prob = build_att_problem(bf, Z, inst.family);
        break;
      case 2:
        inst.family = DistanceFamily::ShiftedRelativeEntropy;
        inst.prob = build_single_set_problem(bf, Z, inst.family);
        break;
      case 3:
        inst.family = DistanceFamily::BinaryRelativeEntropy;
        inst.prob = build_single_set_problem(bf, Z, inst.family);
        break;
      case 4:
        inst.family = DistanceFamily::ShiftedRelativeEntropy;
        inst.prob = build_icbps_problem(bf, Z, inst.family);
        break;
      case 5:
        inst.family = DistanceFamily::UnnormalizedRelativeEntropy;
        inst.prob = build_calibration_problem(bf, Z, inst.family);
        break;
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

TEST_CASE("dual objective vanishes at lambda = 0 for every design") {
  for (const auto& inst : mixed_instances(61, 12, 18, 2)) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(inst.prob.K());
    CHECK_THAT(dual_objective(inst.prob, inst.family, zero), WithinAbs(0.0, 1e-12));
  }
}

TEST_CASE("dual objective closed forms for the named designs") {
  oracles::InstanceRng rng(67);
  const Eigen::Index n = 14;
  const Eigen::MatrixXd X = rng.normal_matrix(n, 2);
  const Eigen::VectorXd Z = rng.treatment(n);
  const auto bf = balance_functions_from_matrix(X);

  SECTION("entropy balancing (ATT, unnormalized): sum q - q e^{-eta} - q Z c'lambda") {
    const auto prob = build_att_problem(bf, Z, DistanceFamily::UnnormalizedRelativeEntropy);
    Eigen::VectorXd lambda(prob.K());
    for (Eigen::Index j = 0; j < prob.K(); ++j) lambda[j] = 0.4 * rng.normal();
    double expected = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = (1.0 - Z[i]) * bf.C.row(i).dot(lambda);
      expected += prob.q[i] - prob.q[i] * std::exp(-eta) -
                  prob.q[i] * Z[i] * bf.C.row(i).dot(lambda);
    }
    CHECK_THAT(dual_objective(prob, DistanceFamily::UnnormalizedRelativeEntropy, lambda),
               WithinRel(expected, 1e-10));
  }

  SECTION("single-set shifted: sum 1 + eta - e^{-eta}") {
    const auto prob = build_single_set_problem(bf, Z, DistanceFamily::ShiftedRelativeEntropy);
    Eigen::VectorXd lambda(prob.K());
    for (Eigen::Index j = 0; j < prob.K(); ++j) lambda[j] = 0.4 * rng.normal();
    double expected = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = (2.0 * Z[i] - 1.0) * bf.C.row(i).dot(lambda);
      expected += 1.0 + eta - std::exp(-eta);
    }
    CHECK_THAT(dual_objective(prob, DistanceFamily::ShiftedRelativeEntropy, lambda),
               WithinRel(expected, 1e-10));
  }

  SECTION("single-set binary: sum log(2 / (1 + e^{-eta}))") {
    const auto prob = build_single_set_problem(bf, Z, DistanceFamily::BinaryRelativeEntropy);
    Eigen::VectorXd lambda(prob.K());
    for (Eigen::Index j = 0; j < prob.K(); ++j) lambda[j] = 0.4 * rng.normal();
    double expected = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = (2.0 * Z[i] - 1.0) * bf.C.row(i).dot(lambda);
      expected += std::log(2.0) - std::log1p(std::exp(-eta));
    }
    CHECK_THAT(dual_objective(prob, DistanceFamily::BinaryRelativeEntropy, lambda),
               WithinRel(expected, 1e-10));
  }

  SECTION("two-set shifted: sum 1 + eta - e^{-eta} - c'lambda_1") {
    const auto prob = build_icbps_problem(bf, Z, DistanceFamily::ShiftedRelativeEntropy);
    const Eigen::Index m = bf.m();
    Eigen::VectorXd lambda(prob.K());
    for (Eigen::Index j = 0; j < prob.K(); ++j) lambda[j] = 0.3 * rng.normal();
    double expected = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double c0 = bf.C.row(i).dot(lambda.head(m));
      const double c1 = bf.C.row(i).dot(lambda.tail(m));
      const double eta = (2.0 * Z[i] - 1.0) * c0 + Z[i] * c1;
      expected += 1.0 + eta - std::exp(-eta) - c1;
    }
    CHECK_THAT(dual_objective(prob, DistanceFamily::ShiftedRelativeEntropy, lambda),
               WithinRel(expected, 1e-10));
  }
}

TEST_CASE("dual objective is concave along random segments") {
  oracles::InstanceRng rng(71);
  for (const auto& inst : mixed_instances(73, 8, 16, 2)) {
    const Eigen::Index K = inst.prob.K();
    Eigen::VectorXd l1(K), l2(K);
    for (Eigen::Index j = 0; j < K; ++j) {
      l1[j] = 0.5 * rng.normal();
      l2[j] = 0.5 * rng.normal();
    }
    const double mid = dual_objective(inst.prob, inst.family, (0.5 * (l1 + l2)).eval());
    const double avg = 0.5 * dual_objective(inst.prob, inst.family, l1) +
                       0.5 * dual_objective(inst.prob, inst.family, l2);
    CHECK(mid >= avg - 1e-10);
  }
}

TEST_CASE("dual gradient at lambda = 0 is A'q - b") {
  for (const auto& inst : mixed_instances(79, 6, 15, 2)) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(inst.prob.K());
    const Eigen::VectorXd expected =
        inst.prob.A.transpose() * inst.prob.q - inst.prob.b;
    CHECK((dual_gradient(inst.prob, inst.family, zero) - expected)
              .lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("dual gradient and Hessian match central finite differences") {
  oracles::InstanceRng rng(83);
  for (const auto& inst : mixed_instances(89, 12, 14, 2)) {
    Eigen::VectorXd lambda(inst.prob.K());
    for (Eigen::Index j = 0; j < inst.prob.K(); ++j) lambda[j] = 0.3 * rng.normal();

    const auto obj = [&](const Eigen::VectorXd& l) {
      return dual_objective(inst.prob, inst.family, l);
    };
    const Eigen::VectorXd g = dual_gradient(inst.prob, inst.family, lambda);
    const Eigen::VectorXd g_fd = oracles::fd_gradient(obj, lambda, 1e-6);
    CHECK((g - g_fd).lpNorm<Eigen::Infinity>() <=
          1e-6 * (1.0 + g.lpNorm<Eigen::Infinity>()));

    const auto grad_fn = [&](const Eigen::VectorXd& l) {
      return dual_gradient(inst.prob, inst.family, l);
    };
    const Eigen::MatrixXd H = dual_hessian(inst.prob, inst.family, lambda);
    const Eigen::MatrixXd H_fd = oracles::fd_jacobian(grad_fn, lambda, 1e-6);
    CHECK((H - H_fd).lpNorm<Eigen::Infinity>() <=
          1e-6 * (1.0 + H.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("Hessian is negative semidefinite at random iterates") {
  oracles::InstanceRng rng(97);
  for (const auto& inst : mixed_instances(101, 8, 16, 2)) {
    Eigen::VectorXd lambda(inst.prob.K());
    for (Eigen::Index j = 0; j < inst.prob.K(); ++j) lambda[j] = 0.5 * rng.normal();
    const Eigen::MatrixXd negH = -dual_hessian(inst.prob, inst.family, lambda);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(negH);
    CHECK(ldlt.info() == Eigen::Success);
    CHECK(ldlt.isPositive());
  }
}

TEST_CASE("ATT with constraints already satisfied at q converges to lambda = 0") {
  const auto bf = intercept_only(4);
  const auto prob = build_att_problem(bf, vec({1, 1, 0, 0}),
                                      DistanceFamily::UnnormalizedRelativeEntropy);
  const auto sol = solve_dual(prob, DistanceFamily::UnnormalizedRelativeEntropy);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(sol.lambda_hat.lpNorm<Eigen::Infinity>() <= 1e-9);
  const auto ws = recover_weights(prob, DistanceFamily::UnnormalizedRelativeEntropy, sol);
  CHECK((ws.p_hat - Eigen::VectorXd::Ones(4)).lpNorm<Eigen::Infinity>() <= 1e-9);
  CHECK_THAT(duality_gap(prob, DistanceFamily::UnnormalizedRelativeEntropy, sol),
             WithinAbs(0.0, 1e-15));
}

TEST_CASE("ATT three-vs-one instance has the closed-form optimum") {
  const auto bf = intercept_only(4);
  const auto prob = build_att_problem(bf, vec({1, 1, 1, 0}),
                                      DistanceFamily::UnnormalizedRelativeEntropy);

  // 1-D grid-search oracle over lambda in [-5, 5]
  const auto obj = [&](double l) {
    return dual_objective(prob, DistanceFamily::UnnormalizedRelativeEntropy,
                          vec({l}));
  };
  const double lambda_grid = oracles::grid_search_max(obj, -5.0, 5.0);
  CHECK_THAT(lambda_grid, WithinAbs(-std::log(3.0), 1e-6));

  const auto sol = solve_dual(prob, DistanceFamily::UnnormalizedRelativeEntropy);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK_THAT(sol.lambda_hat[0], WithinAbs(-std::log(3.0), 1e-9));
  CHECK_THAT(sol.dual_value, WithinAbs(3.0 * std::log(3.0) - 2.0, 1e-9));
  const auto ws = recover_weights(prob, DistanceFamily::UnnormalizedRelativeEntropy, sol);
  CHECK_THAT(ws.p_hat[3], WithinAbs(3.0, 1e-8));
  CHECK(ws.p_hat.head(3) == Eigen::VectorXd::Ones(3));  // treated weights fixed at q
  CHECK(duality_gap(prob, DistanceFamily::UnnormalizedRelativeEntropy, sol) < 1e-8);
}

TEST_CASE("separated groups are reported infeasible") {
  // one covariate with disjoint support across arms
  Eigen::MatrixXd X(8, 1);
  X << 1.0, 1.2, 1.4, 1.6, -1.0, -1.2, -1.4, -1.6;
  const Eigen::VectorXd Z = vec({1, 1, 1, 1, 0, 0, 0, 0});
  const auto bf = balance_functions_from_matrix(X);
  const auto prob = build_ate_problem(bf, Z, DistanceFamily::UnnormalizedRelativeEntropy);
  const auto sol = solve_dual(prob, DistanceFamily::UnnormalizedRelativeEntropy);
  CHECK(sol.status == SolveStatus::Infeasible);
  CHECK_FALSE(sol.message.empty());
  CHECK_THROWS_AS(recover_weights(prob, DistanceFamily::UnnormalizedRelativeEntropy, sol),
                  Error);
}

TEST_CASE("uniqueness: solves from different starts agree") {
  oracles::InstanceRng rng(103);
  for (const auto& inst : mixed_instances(107, 10, 20, 2)) {
    const auto sol_zero = solve_dual(inst.prob, inst.family);
    if (sol_zero.status != SolveStatus::Converged) continue;
    SolverOptions opts;
    opts.lambda0 = Eigen::VectorXd(inst.prob.K());
    for (Eigen::Index j = 0; j < inst.prob.K(); ++j) opts.lambda0[j] = 0.5 * rng.normal();
    const auto sol_rand = solve_dual(inst.prob, inst.family, opts);
    REQUIRE(sol_rand.status == SolveStatus::Converged);
    const auto w0 = recover_weights(inst.prob, inst.family, sol_zero);
    const auto w1 = recover_weights(inst.prob, inst.family, sol_rand);
    for (Eigen::Index i = 0; i < inst.prob.n(); ++i)
      CHECK_THAT(w1.p_hat[i], WithinRel(w0.p_hat[i], 1e-6));
  }
}

TEST_CASE("exact balance whenever converged") {
  for (const auto& inst : mixed_instances(109, 15, 25, 3)) {
    const auto sol = solve_dual(inst.prob, inst.family);
    if (sol.status != SolveStatus::Converged) continue;
    const auto ws = recover_weights(inst.prob, inst.family, sol);
    const double residual =
        (inst.prob.A.transpose() * ws.p_hat - inst.prob.b).lpNorm<Eigen::Infinity>();
    CHECK(residual <= 1e-6 * (1.0 + inst.prob.b.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("weights land in each family's range") {
  oracles::InstanceRng rng(113);
  const Eigen::MatrixXd X = 0.7 * rng.normal_matrix(30, 2);
  const Eigen::VectorXd Z = rng.treatment_balanced(30, 10);
  const auto bf = balance_functions_from_matrix(X);

  const auto shifted = build_single_set_problem(bf, Z, DistanceFamily::ShiftedRelativeEntropy);
  const auto sol_s = solve_dual(shifted, DistanceFamily::ShiftedRelativeEntropy);
  REQUIRE(sol_s.status == SolveStatus::Converged);
  const auto ws_s = recover_weights(shifted, DistanceFamily::ShiftedRelativeEntropy, sol_s);
  CHECK((ws_s.p_hat.array() > 1.0).all());

  const auto binary = build_single_set_problem(bf, Z, DistanceFamily::BinaryRelativeEntropy);
  const auto sol_b = solve_dual(binary, DistanceFamily::BinaryRelativeEntropy);
  REQUIRE(sol_b.status == SolveStatus::Converged);
  const auto ws_b = recover_weights(binary, DistanceFamily::BinaryRelativeEntropy, sol_b);
  CHECK((ws_b.p_hat.array() > 0.0).all());
  CHECK((ws_b.p_hat.array() < 1.0).all());
}

TEST_CASE("recover_weights rejects a tampered solution") {
  const auto bf = intercept_only(4);
  const auto prob = build_att_problem(bf, vec({1, 1, 1, 0}),
                                      DistanceFamily::UnnormalizedRelativeEntropy);
  auto sol = solve_dual(prob, DistanceFamily::UnnormalizedRelativeEntropy);
  REQUIRE(sol.status == SolveStatus::Converged);
  sol.lambda_hat[0] += 0.5;
  CHECK_THROWS_AS(recover_weights(prob, DistanceFamily::UnnormalizedRelativeEntropy, sol),
                  BalanceViolation);
}

TEST_CASE("CBPS stationarity identity in propensity form") {
  // read pi off the shifted single-set weights: treated p = 1/pi,
  // control p = 1/(1-pi); the balance constraint is then the inverse
  // propensity moment condition
  oracles::InstanceRng rng(127);
  const Eigen::MatrixXd X = 0.7 * rng.normal_matrix(24, 2);
  const Eigen::VectorXd Z = rng.treatment_balanced(24, 8);
  const auto bf = balance_functions_from_matrix(X);
  const auto prob = build_single_set_problem(bf, Z, DistanceFamily::ShiftedRelativeEntropy);
  const auto sol = solve_dual(prob, DistanceFamily::ShiftedRelativeEntropy);
  REQUIRE(sol.status == SolveStatus::Converged);
  const auto ws = recover_weights(prob, DistanceFamily::ShiftedRelativeEntropy, sol);
  for (Eigen::Index j = 0; j < bf.m(); ++j) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < 24; ++i) {
      const double pi = Z[i] == 1.0 ? 1.0 / ws.p_hat[i] : 1.0 - 1.0 / ws.p_hat[i];
      acc += Z[i] * bf.C(i, j) / pi - (1.0 - Z[i]) * bf.C(i, j) / (1.0 - pi);
    }
    CHECK_THAT(acc, WithinAbs(0.0, 1e-6));
  }
}

TEST_CASE("calibration and matched-target two-set designs give identical weights") {
  oracles::InstanceRng rng(131);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd X = 0.7 * rng.normal_matrix(22, 2);
    const Eigen::VectorXd Z = rng.treatment_balanced(22, 8);
    const auto bf = balance_functions_from_matrix(X);
    for (auto family : {DistanceFamily::UnnormalizedRelativeEntropy,
                        DistanceFamily::ShiftedRelativeEntropy}) {
      const auto omega0 = build_calibration_problem(bf, Z, family);
      const auto omega1 = build_icbps_problem(bf, Z, family);
      const auto sol0 = solve_dual(omega0, family);
      const auto sol1 = solve_dual(omega1, family);
      REQUIRE(sol0.status == SolveStatus::Converged);
      REQUIRE(sol1.status == SolveStatus::Converged);
      const auto w0 = recover_weights(omega0, family, sol0);
      const auto w1 = recover_weights(omega1, family, sol1);
      CHECK((w0.p_hat - w1.p_hat).lpNorm<Eigen::Infinity>() <= 1e-6);
    }
  }
}

TEST_CASE("solver weights match the cyclic-projection oracle") {
  for (const auto& inst : mixed_instances(137, 6, 16, 2)) {
    const auto sol = solve_dual(inst.prob, inst.family);
    if (sol.status != SolveStatus::Converged) continue;
    const auto ws = recover_weights(inst.prob, inst.family, sol);
    const Eigen::VectorXd oracle =
        oracles::cyclic_projection_weights(inst.prob, inst.family);
    CHECK((ws.p_hat - oracle).lpNorm<Eigen::Infinity>() <= 1e-5);
  }
}

TEST_CASE("duality gap certificate holds on random feasible instances") {
  for (const auto& inst : mixed_instances(139, 12, 20, 2)) {
    const auto sol = solve_dual(inst.prob, inst.family);
    if (sol.status != SolveStatus::Converged) continue;
    const double gap = duality_gap(inst.prob, inst.family, sol);
    CHECK(gap <= 1e-6 * (1.0 + std::abs(sol.primal_value)));
    // primal optimum value agrees with the independent minimizer
    const Eigen::VectorXd oracle =
        oracles::cyclic_projection_weights(inst.prob, inst.family);
    const double primal_oracle = distance(inst.family, oracle, inst.prob.q);
    CHECK_THAT(sol.primal_value,
               WithinAbs(primal_oracle, 1e-5 * (1.0 + std::abs(primal_oracle))));
  }
}
