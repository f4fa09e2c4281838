// bregbal: covariate-balancing weights via Bregman projections.
// Subcommands: balance (fit weights), estimate (effects + SEs),
// diagnose (balance report), simulate (replicated studies).

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bregbal/config.hpp"
#include "bregbal/csv.hpp"
#include "bregbal/design.hpp"
#include "bregbal/diagnostics.hpp"
#include "bregbal/errors.hpp"
#include "bregbal/estimators.hpp"
#include "bregbal/sim.hpp"
#include "bregbal/solver.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 2;       // parse / validation errors
constexpr int kExitInfeasible = 3;  // constraints do not admit interior weights
constexpr int kExitNumerical = 4;   // numerical failure

struct SolverFailure : std::runtime_error {
  bregbal::SolveStatus status;
  SolverFailure(bregbal::SolveStatus s, const std::string& msg)
      : std::runtime_error(msg), status(s) {}
};

struct DataOptions {
  std::string input;
  std::string treatment;
  std::string outcome;
  std::string balance_cols;  // comma separated column names
  std::string sampling_weights;
  std::string estimand = "ate";
  std::string distance;  // empty = default for the estimand
  bool standardize = false;
};

std::vector<std::string> split_names(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

bregbal::Estimand parse_estimand(const std::string& s) {
  if (s == "ate") return bregbal::Estimand::ATE;
  if (s == "att") return bregbal::Estimand::ATT;
  if (s == "owate") return bregbal::Estimand::OWATE_Single;
  if (s == "icbps") return bregbal::Estimand::ICBPS;
  if (s == "calibration") return bregbal::Estimand::Calibration;
  throw bregbal::ConfigError("unknown estimand '" + s + "'");
}

bregbal::DistanceFamily parse_distance(const std::string& s) {
  if (s == "entropy") return bregbal::DistanceFamily::UnnormalizedRelativeEntropy;
  if (s == "shifted") return bregbal::DistanceFamily::ShiftedRelativeEntropy;
  if (s == "binary") return bregbal::DistanceFamily::BinaryRelativeEntropy;
  throw bregbal::ConfigError("unknown distance '" + s + "'");
}

bregbal::DistanceFamily default_distance(bregbal::Estimand e) {
  switch (e) {
    case bregbal::Estimand::OWATE_Single: return bregbal::DistanceFamily::BinaryRelativeEntropy;
    case bregbal::Estimand::ICBPS: return bregbal::DistanceFamily::ShiftedRelativeEntropy;
    default: return bregbal::DistanceFamily::UnnormalizedRelativeEntropy;
  }
}

struct LoadedData {
  bregbal::Dataset data;
  bregbal::BalanceFunctions C;
  bregbal::Estimand estimand;
  bregbal::DistanceFamily family;
};

LoadedData load_data(const DataOptions& opt, bool need_outcome) {
  const bregbal::CsvTable table = bregbal::read_csv(opt.input);
  const std::size_t n = table.rows.size();
  if (n < 2) throw bregbal::ParseError("need at least 2 data rows");

  const auto names = split_names(opt.balance_cols);
  if (names.empty()) throw bregbal::ConfigError("--balance-cols must name at least one column");

  LoadedData out;
  out.estimand = parse_estimand(opt.estimand);
  out.family = opt.distance.empty() ? default_distance(out.estimand)
                                    : parse_distance(opt.distance);

  const int zcol = table.column(opt.treatment);
  out.data.Z.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = bregbal::parse_numeric(table.rows[i][zcol], opt.treatment, i + 2);
    if (z != 0.0 && z != 1.0)
      throw bregbal::ParseError("treatment column '" + opt.treatment +
                                "' must be 0/1; found '" + table.rows[i][zcol] +
                                "' at row " + std::to_string(i + 2));
    out.data.Z[i] = z;
  }

  out.data.X.resize(n, static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const int col = table.column(names[j]);
    for (std::size_t i = 0; i < n; ++i)
      out.data.X(i, j) = bregbal::parse_numeric(table.rows[i][col], names[j], i + 2);
  }
  out.data.column_names = names;

  if (!opt.outcome.empty()) {
    const int ycol = table.column(opt.outcome);
    out.data.Y.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out.data.Y[i] = bregbal::parse_numeric(table.rows[i][ycol], opt.outcome, i + 2);
  } else if (need_outcome) {
    throw bregbal::ConfigError("--outcome is required for this command");
  }

  if (!opt.sampling_weights.empty()) {
    const int qcol = table.column(opt.sampling_weights);
    out.data.q.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out.data.q[i] = bregbal::parse_numeric(table.rows[i][qcol], opt.sampling_weights, i + 2);
  }

  std::vector<int> indices(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) indices[j] = static_cast<int>(j);
  out.C = bregbal::build_balance_functions(out.data, indices, opt.standardize);
  bregbal::validate_treatment(out.data.Z);
  return out;
}

bregbal::BalanceProblem build_problem(const LoadedData& d) {
  switch (d.estimand) {
    case bregbal::Estimand::ATE:
      return bregbal::build_ate_problem(d.C, d.data.Z, d.family, d.data.q);
    case bregbal::Estimand::ATT:
      return bregbal::build_att_problem(d.C, d.data.Z, d.family, d.data.q);
    case bregbal::Estimand::OWATE_Single:
      return bregbal::build_single_set_problem(d.C, d.data.Z, d.family, d.data.q);
    case bregbal::Estimand::ICBPS:
      return bregbal::build_icbps_problem(d.C, d.data.Z, d.family, d.data.q);
    case bregbal::Estimand::Calibration:
      return bregbal::build_calibration_problem(d.C, d.data.Z, d.family, d.data.q);
  }
  throw bregbal::ConfigError("unhandled estimand");
}

bregbal::DualSolution solve_or_throw(const bregbal::BalanceProblem& prob,
                                     bregbal::DistanceFamily family, bool verbose) {
  bregbal::SolverOptions opts;
  opts.verbose = verbose;
  bregbal::DualSolution sol = bregbal::solve_dual(prob, family, opts);
  if (sol.status != bregbal::SolveStatus::Converged)
    throw SolverFailure(sol.status, "solver stopped: " +
                                        std::string(bregbal::status_name(sol.status)) +
                                        (sol.message.empty() ? "" : " (" + sol.message + ")"));
  return sol;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw bregbal::Error("cannot write '" + path + "'");
  out << text;
}

json solution_sidecar(const bregbal::BalanceProblem& prob, bregbal::DistanceFamily family,
                      const bregbal::DualSolution& sol, const bregbal::WeightSet& ws) {
  const Eigen::VectorXd residual = prob.A.transpose() * ws.p_hat - prob.b;
  json j;
  j["status"] = bregbal::status_name(sol.status);
  j["iterations"] = sol.iterations;
  j["grad_norm"] = sol.grad_norm_final;
  j["primal_value"] = sol.primal_value;
  j["dual_value"] = sol.dual_value;
  j["duality_gap"] = bregbal::duality_gap(prob, family, sol);
  j["lambda_hat"] = std::vector<double>(sol.lambda_hat.data(),
                                        sol.lambda_hat.data() + sol.lambda_hat.size());
  j["constraint_names"] = prob.constraint_names;
  j["constraint_residuals"] =
      std::vector<double>(residual.data(), residual.data() + residual.size());
  j["family"] = bregbal::family_name(family);
  j["estimand"] = bregbal::estimand_name(prob.estimand);
  j["n"] = prob.n();
  return j;
}

int cmd_balance(const DataOptions& data_opt, const std::string& weights_out, bool verbose) {
  const LoadedData d = load_data(data_opt, /*need_outcome=*/false);
  const bregbal::BalanceProblem prob = build_problem(d);
  const bregbal::DualSolution sol = solve_or_throw(prob, d.family, verbose);
  const bregbal::WeightSet ws = bregbal::recover_weights(prob, d.family, sol);

  std::ostringstream csv;
  csv << "unit,weight\n";
  for (Eigen::Index i = 0; i < ws.p_hat.size(); ++i)
    csv << (i + 1) << ',' << bregbal::format_numeric(ws.p_hat[i]) << '\n';
  write_text(weights_out, csv.str());
  write_text(weights_out.empty() || weights_out == "-" ? "-" : weights_out + ".json",
             solution_sidecar(prob, d.family, sol, ws).dump(2) + "\n");
  return 0;
}

Eigen::VectorXd read_weights_file(const std::string& path, Eigen::Index n) {
  const bregbal::CsvTable table = bregbal::read_csv(path);
  const int wcol = table.column("weight");
  if (static_cast<Eigen::Index>(table.rows.size()) != n)
    throw bregbal::ParseError("weights file has " + std::to_string(table.rows.size()) +
                              " rows, data has " + std::to_string(n));
  Eigen::VectorXd w(n);
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    w[static_cast<Eigen::Index>(i)] =
        bregbal::parse_numeric(table.rows[i][wcol], "weight", i + 2);
  return w;
}

int cmd_estimate(const DataOptions& data_opt, const std::string& method,
                 const std::string& weights_file, bool with_ci, const std::string& output,
                 const std::string& format, bool verbose) {
  const LoadedData d = load_data(data_opt, /*need_outcome=*/true);
  const bregbal::BalanceProblem prob = build_problem(d);

  bregbal::CausalEstimate est;
  std::optional<Eigen::VectorXd> weights;
  std::string method_used = method;

  if (!weights_file.empty()) {
    bregbal::WeightSet ws;
    ws.p_hat = read_weights_file(weights_file, d.data.Z.size());
    ws.estimand = d.estimand;
    ws.family = d.family;
    est = bregbal::ht_estimate(ws, d.data.Z, d.data.Y);
    if (with_ci) {
      const double se = bregbal::fixed_weight_se(ws, d.data.Z, d.data.Y);
      est.std_err = se;
      est.ci_lower = est.tau_hat - 1.96 * se;
      est.ci_upper = est.tau_hat + 1.96 * se;
    }
    weights = ws.p_hat;
    method_used = "weights-file";
  } else if (method == "dual") {
    const bregbal::DualSolution sol = solve_or_throw(prob, d.family, verbose);
    const bregbal::WeightSet ws = bregbal::recover_weights(prob, d.family, sol);
    est = bregbal::ht_estimate(ws, d.data.Z, d.data.Y);
    if (with_ci) {
      const double se = bregbal::sandwich_se(prob, d.family, sol, d.data.Y);
      est.std_err = se;
      est.ci_lower = est.tau_hat - 1.96 * se;
      est.ci_upper = est.tau_hat + 1.96 * se;
    }
    weights = ws.p_hat;
  } else if (method == "ipw") {
    if (d.estimand != bregbal::Estimand::ATE && d.estimand != bregbal::Estimand::ATT)
      throw bregbal::ConfigError("--method ipw supports --estimand ate or att");
    const bregbal::LogisticFit fit = bregbal::fit_logistic_mle(d.C, d.data.Z);
    if (!fit.converged)
      throw SolverFailure(bregbal::SolveStatus::NumericalFailure,
                          "logistic MLE did not converge (separation?)");
    const bregbal::WeightSet ws = bregbal::ipw_weights(fit, d.data.Z, d.estimand);
    est = bregbal::ht_estimate(ws, d.data.Z, d.data.Y);
    if (with_ci) {
      const double se = bregbal::fixed_weight_se(ws, d.data.Z, d.data.Y);
      est.std_err = se;
      est.ci_lower = est.tau_hat - 1.96 * se;
      est.ci_upper = est.tau_hat + 1.96 * se;
    }
    weights = ws.p_hat;
  } else if (method == "aipw") {
    const bregbal::LogisticFit fit = bregbal::fit_logistic_mle(d.C, d.data.Z);
    if (!fit.converged)
      throw SolverFailure(bregbal::SolveStatus::NumericalFailure,
                          "logistic MLE did not converge (separation?)");
    const bregbal::OutcomeFit outcome =
        bregbal::fit_outcome_regressions(d.C, d.data.Z, d.data.Y);
    est = bregbal::aipw_estimate(fit, outcome, d.C, d.data.Z, d.data.Y, with_ci);
    const bregbal::WeightSet ws = bregbal::ipw_weights(fit, d.data.Z, bregbal::Estimand::ATE);
    weights = ws.p_hat;
  } else {
    throw bregbal::ConfigError("unknown --method '" + method + "'");
  }

  json j;
  j["tau_hat"] = est.tau_hat;
  if (with_ci && est.std_err) {
    j["std_err"] = *est.std_err;
    j["ci_lower"] = *est.ci_lower;
    j["ci_upper"] = *est.ci_upper;
  }
  j["estimand"] = bregbal::estimand_name(d.estimand);
  j["n"] = est.n_used;
  j["method"] = method_used;
  if (weights) {
    const Eigen::VectorXd residual = prob.A.transpose() * *weights - prob.b;
    j["balance_residual_inf_norm"] = residual.lpNorm<Eigen::Infinity>();
  }

  if (format == "json") {
    write_text(output, j.dump(2) + "\n");
  } else if (format == "csv") {
    std::ostringstream csv;
    csv << "tau_hat,std_err,ci_lower,ci_upper,estimand,n,method\n";
    csv << bregbal::format_numeric(est.tau_hat) << ',';
    if (with_ci && est.std_err)
      csv << bregbal::format_numeric(*est.std_err) << ','
          << bregbal::format_numeric(*est.ci_lower) << ','
          << bregbal::format_numeric(*est.ci_upper) << ',';
    else
      csv << "NA,NA,NA,";
    csv << bregbal::estimand_name(d.estimand) << ',' << est.n_used << ',' << method_used
        << '\n';
    write_text(output, csv.str());
  } else {
    throw bregbal::ConfigError("unknown --format '" + format + "'");
  }
  return 0;
}

int cmd_diagnose(const DataOptions& data_opt, const std::string& method,
                 const std::string& weights_file, const std::string& output,
                 double threshold, bool verbose) {
  const LoadedData d = load_data(data_opt, /*need_outcome=*/false);
  const bregbal::BalanceProblem prob = build_problem(d);

  Eigen::VectorXd weights;
  std::string label = method;
  if (!weights_file.empty()) {
    weights = read_weights_file(weights_file, d.data.Z.size());
    label = "weights-file";
  } else if (method == "dual") {
    const bregbal::DualSolution sol = solve_or_throw(prob, d.family, verbose);
    weights = bregbal::recover_weights(prob, d.family, sol).p_hat;
  } else if (method == "ipw") {
    const bregbal::LogisticFit fit = bregbal::fit_logistic_mle(d.C, d.data.Z);
    if (!fit.converged)
      throw SolverFailure(bregbal::SolveStatus::NumericalFailure,
                          "logistic MLE did not converge (separation?)");
    const auto e = d.estimand == bregbal::Estimand::ATT ? bregbal::Estimand::ATT
                                                        : bregbal::Estimand::ATE;
    weights = bregbal::ipw_weights(fit, d.data.Z, e).p_hat;
  } else {
    throw bregbal::ConfigError("unknown --method '" + method + "'");
  }

  const bregbal::BalanceReport report =
      bregbal::balance_report(d.C, d.data.Z, weights, &prob, threshold);

  std::ostringstream csv;
  csv << "method,covariate,smd\n";
  for (const auto& rec : report.covariates)
    csv << "unweighted," << rec.name << ',' << bregbal::format_numeric(rec.unadjusted_smd)
        << '\n';
  for (const auto& rec : report.covariates)
    csv << label << ',' << rec.name << ',' << bregbal::format_numeric(rec.adjusted_smd)
        << '\n';
  write_text(output, csv.str());

  std::ostringstream info;
  info << "ess_treated=" << bregbal::format_numeric(report.ess_treated)
       << " ess_control=" << bregbal::format_numeric(report.ess_control) << '\n';
  for (const auto& rec : report.covariates)
    if (rec.flagged)
      info << "flagged: " << rec.name << " adjusted_smd="
           << bregbal::format_numeric(rec.adjusted_smd) << " > "
           << bregbal::format_numeric(report.threshold) << '\n';
  std::cerr << info.str();
  return 0;
}

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 std::optional<int> replications, const std::string& output,
                 const std::string& replicates_out) {
  bregbal::ScenarioConfig cfg =
      bregbal::scenario_config_from_json(bregbal::load_config_file(config_path));
  if (seed) cfg.base_seed = *seed;
  if (replications) cfg.replications = *replications;
  cfg.keep_replicates = !replicates_out.empty();
  for (const auto& note : bregbal::non_paper_settings(cfg))
    std::cerr << "note: " << note << " is outside the reference scenario grid\n";

  const bregbal::SimSummary summary = bregbal::run_study(cfg);

  std::ostringstream csv;
  csv << "n,sigma2,rho,treat_scenario,outcome_scenario,effect_type,method,"
         "avg_estimate,mc_std_err,mse,bias,n_failed\n";
  for (const auto& row : summary.rows) {
    csv << cfg.n << ',' << bregbal::format_numeric(cfg.sigma2) << ','
        << bregbal::format_numeric(cfg.rho) << ',' << cfg.treat_scenario << ','
        << cfg.outcome_scenario << ','
        << (cfg.effect_type == bregbal::EffectType::Constant ? "constant" : "linear") << ','
        << bregbal::method_name(row.method) << ','
        << bregbal::format_numeric(row.avg_estimate) << ',';
    if (std::isnan(row.mc_std_err))
      csv << "NA";
    else
      csv << bregbal::format_numeric(row.mc_std_err);
    csv << ',' << bregbal::format_numeric(row.mse) << ','
        << bregbal::format_numeric(row.bias) << ',' << row.n_failed << '\n';
  }
  write_text(output, csv.str());

  if (!replicates_out.empty()) {
    std::ostringstream rep_csv;
    rep_csv << "method,replication,estimate\n";
    for (std::size_t k = 0; k < summary.replicates.size(); ++k)
      for (std::size_t r = 0; r < summary.replicates[k].size(); ++r) {
        rep_csv << bregbal::method_name(cfg.methods[k]) << ',' << (r + 1) << ',';
        if (std::isnan(summary.replicates[k][r]))
          rep_csv << "NA";
        else
          rep_csv << bregbal::format_numeric(summary.replicates[k][r]);
        rep_csv << '\n';
      }
    write_text(replicates_out, rep_csv.str());
  }
  return 0;
}

void add_data_options(CLI::App* cmd, DataOptions& opt, bool need_outcome) {
  cmd->add_option("--input", opt.input, "input CSV (header required)")->required();
  cmd->add_option("--treatment", opt.treatment, "binary treatment column")->required();
  auto* oc = cmd->add_option("--outcome", opt.outcome, "outcome column");
  if (need_outcome) oc->required();
  cmd->add_option("--balance-cols", opt.balance_cols,
                  "comma-separated covariate columns to balance")
      ->required();
  cmd->add_option("--sampling-weights", opt.sampling_weights,
                  "optional sampling-weight column");
  cmd->add_option("--estimand", opt.estimand,
                  "one of: ate, att, owate, icbps, calibration");
  cmd->add_option("--distance", opt.distance,
                  "one of: entropy, shifted, binary (default depends on estimand)");
  cmd->add_flag("--standardize", opt.standardize,
                "center/scale balance columns before weighting");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covariate-balancing weights via Bregman projections"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("--verbose", verbose, "per-iteration solver trace on stderr");

  DataOptions balance_opt;
  std::string weights_out = "-";
  auto* balance = app.add_subcommand("balance", "fit balancing weights");
  add_data_options(balance, balance_opt, false);
  balance->add_option("--weights-out", weights_out, "weights CSV path ('-' = stdout)");

  DataOptions estimate_opt;
  std::string est_method = "dual", est_weights_file, est_output = "-", est_format = "json";
  bool with_ci = true;
  auto* estimate = app.add_subcommand("estimate", "estimate the causal effect");
  add_data_options(estimate, estimate_opt, true);
  estimate->add_option("--method", est_method, "dual, ipw, or aipw");
  estimate->add_option("--weights-file", est_weights_file,
                       "reuse weights written by 'balance'");
  estimate->add_flag("--ci,!--no-ci", with_ci, "include std_err and 95% CI (default on)");
  estimate->add_option("--output", est_output, "output path ('-' = stdout)");
  estimate->add_option("--format", est_format, "json or csv");

  DataOptions diagnose_opt;
  std::string diag_method = "dual", diag_weights_file, diag_output = "-";
  double diag_threshold = 0.05;
  auto* diagnose = app.add_subcommand("diagnose", "covariate balance report");
  add_data_options(diagnose, diagnose_opt, false);
  diagnose->add_option("--method", diag_method, "dual or ipw");
  diagnose->add_option("--weights-file", diag_weights_file,
                       "diagnose externally supplied weights");
  diagnose->add_option("--output", diag_output, "report CSV path ('-' = stdout)");
  diagnose->add_option("--smd-threshold", diag_threshold, "flag threshold (default 0.05)");

  std::string sim_config, sim_output = "-", sim_replicates_out;
  std::optional<std::uint64_t> sim_seed;
  std::optional<int> sim_replications;
  auto* simulate = app.add_subcommand("simulate", "run a replicated simulation study");
  simulate->add_option("--config", sim_config, "scenario config (TOML or JSON)")->required();
  simulate->add_option("--seed", sim_seed, "override base_seed");
  simulate->add_option("--replications", sim_replications, "override replications");
  simulate->add_option("--output", sim_output, "summary CSV path ('-' = stdout)");
  simulate->add_option("--replicates-out", sim_replicates_out,
                       "optional per-replication long CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (balance->parsed()) return cmd_balance(balance_opt, weights_out, verbose);
    if (estimate->parsed())
      return cmd_estimate(estimate_opt, est_method, est_weights_file, with_ci, est_output,
                          est_format, verbose);
    if (diagnose->parsed())
      return cmd_diagnose(diagnose_opt, diag_method, diag_weights_file, diag_output,
                          diag_threshold, verbose);
    if (simulate->parsed())
      return cmd_simulate(sim_config, sim_seed, sim_replications, sim_output,
                          sim_replicates_out);
  } catch (const SolverFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.status == bregbal::SolveStatus::Infeasible ? kExitInfeasible : kExitNumerical;
  } catch (const bregbal::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bregbal::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bregbal::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bregbal::RankDeficient& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bregbal::InsufficientData& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bregbal::UnsupportedConfig& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bregbal::DegenerateArm& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const bregbal::BalanceViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const bregbal::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
