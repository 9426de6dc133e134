#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "drflow/dro_opf.hpp"
#include "drflow/estimator.hpp"
#include "drflow/feeder.hpp"
#include "drflow/participants.hpp"

namespace drflow {

/* Which quantities the dispatcher is told the truth about. */
enum class OracleCase { oracle, beta_oracle, omega_oracle, oblivious };

OracleCase parse_case(const std::string& name);
const char* to_string(OracleCase c);

struct LoopConfig {
  int steps = 500;
  unsigned long long seed = 1;
  RiskConfig risk;
  double kappa = 25.0;
  double omega_lo = 30.0;
  double omega_hi = 200.0;
  NoiseFamily family = NoiseFamily::gaussian;
  PriorConfig prior;
  double forgetting = 1.0;
  // Observations enter the fit from this step count on; before that the
  // dispatcher runs on the prior.
  int warmup_steps = 3;
};

struct StepNodeRecord {
  double lambda = 0;       // broadcast price, from the dispatched target
  double lambda_dual = 0;  // locational dual price
  double x_star = 0;
  double x_obs = 0;
  double beta0_hat = 0;
  double beta1_hat = 0;
  bool used_prior = false;
  bool excluded = false;
  bool fit_valid = false;
  double fit_residual_mean = 0;
  double fit_residual_var = 0;
};

struct StepRecord {
  int t = 0;  // 1-based
  double omega = 0;
  DispatchSolution dispatch;
  std::vector<StepNodeRecord> node;  // size node_count, root rows zero
  double expC = 0;
  double obsC = 0;
  double zeta_en = 0;
  double zeta_bal = 0;
  double zeta_exp_cum = 0;
  double zeta_obs_cum = 0;
  double solve_seconds = 0;
  double moments_mu_mean = 0;
  double moments_sigma_trace = 0;
};

struct RunTrace {
  OracleCase oracle_case = OracleCase::oblivious;
  NetworkMode mode = NetworkMode::full;
  std::vector<StepRecord> steps;
  double usage_median = 0;  // percent of forecast load served by DR, per step
  double usage_min = 0;
  double usage_max = 0;
  double step_seconds_mean = 0;
  double step_seconds_max = 0;
};

struct ExperimentResult {
  std::vector<RunTrace> runs;  // oracle companion first within each mode
  std::vector<double> omega_stream;
  std::vector<Eigen::VectorXd> eps_stream;  // node order, root entry zero
};

/* Pregenerated exogenous streams shared by every run of one seed. */
struct ExogenousStreams {
  std::vector<double> omega;
  std::vector<Eigen::VectorXd> eps;
};

ExogenousStreams draw_streams(const ParticipantSet& participants, const LoopConfig& config);

/* Chooses what the dispatcher believes at step t for the given case. */
struct BeliefState {
  DrEstimates dr;
  MomentEstimate moments;
  std::vector<char> used_prior;
};

BeliefState select_estimate(const FeederModel& feeder, const ParticipantSet& participants,
                            OracleCase c, const LoopConfig& config,
                            const std::vector<History>& history, int t);

RunTrace run_loop(const FeederModel& feeder, const ParticipantSet& participants, OracleCase c,
                  NetworkMode mode, const LoopConfig& config, const ExogenousStreams& streams,
                  const RunTrace* oracle_companion);

ExperimentResult run_experiment(const FeederModel& feeder, const ParticipantSet& participants,
                                const std::vector<OracleCase>& cases,
                                const std::vector<NetworkMode>& modes, const LoopConfig& config);

/* Per-step energy-procurement regret. Sums over nodes with positive slope in
 * both the estimate and the truth; dispatch zeroes x elsewhere. */
double regret_energy(const Eigen::VectorXd& beta0_hat, const Eigen::VectorXd& beta1_hat,
                     const Eigen::VectorXd& beta0_true, const Eigen::VectorXd& beta1_true,
                     const Eigen::VectorXd& x_star);

/* Per-step balancing regret: sum_i c2_i alpha_i^2 (e'Sigma_hat e - e'Sigma e). */
double regret_balancing(const Eigen::VectorXd& alpha, const Eigen::VectorXd& c2,
                        const Eigen::MatrixXd& sigma_hat, const Eigen::MatrixXd& sigma_true);

/* Cumulative squared objective gaps of a run against its oracle companion. */
struct RegretSeries {
  std::vector<double> zeta_exp_cum;
  std::vector<double> zeta_obs_cum;
};
RegretSeries regret_metrics(const RunTrace& run, const RunTrace& oracle);

/* Broadcast price that makes the expected response hit the target, floored at 0. */
double price_from_target(double x_target, double beta0_hat, double beta1_hat);

/* Locational price from the balance duals, floored at 0. */
double price_from_duals(double pi_p, double gamma, double pi_q, double kappa);

}  // namespace drflow
