#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "drflow/estimator.hpp"
#include "drflow/feeder.hpp"
#include "drflow/qp.hpp"

namespace drflow {

enum class NetworkMode { none, flows, voltage, full };

NetworkMode parse_network_mode(const std::string& name);
const char* to_string(NetworkMode mode);

struct RiskConfig {
  double eta_g = 0.1;
  double eta_v = 0.1;
  double eta_f = 0.1;
  NetworkMode network_mode = NetworkMode::full;
  int polygon_sides = 12;  // even, >= 4

  void validate() const;
};

struct MarketScenario {
  double omega = 0;   // wholesale price at the root ($/MWh)
  double kappa = 25;  // retail tariff ($/MWh)
};

/* Node-indexed sensitivity estimates the dispatcher plans against.
 * active(i) marks nodes offered demand response; the root is never active. */
struct DrEstimates {
  Eigen::VectorXd beta0;
  Eigen::VectorXd beta1;
  std::vector<char> active;
};

struct OpfInstance {
  const FeederModel* feeder = nullptr;
  Eigen::VectorXd dP_forecast;  // node-indexed MW
  Eigen::VectorXd dQ_forecast;  // node-indexed MVAr
  DrEstimates dr;
  MomentEstimate moments;  // node-indexed disturbance moments
  MarketScenario market;
  RiskConfig risk;
};

/* Instance with forecasts taken from the feeder file. */
OpfInstance make_instance(const FeederModel& feeder, const DrEstimates& dr,
                          const MomentEstimate& moments, const MarketScenario& market,
                          const RiskConfig& risk);

/* Smallest s with inf_P P[a'eps <= s] >= 1 - eta over the (mu, Sigma) ambiguity set. */
double dro_margin(const Eigen::VectorXd& a, const MomentEstimate& moments, double eta);

enum class RowClass {
  dr_capacity,
  alpha_bound,
  gen_active,
  gen_reactive,
  voltage_band,
  flow_limit
};

const char* to_string(RowClass c);

struct OpfProgram {
  qp::Problem problem;
  std::vector<RowClass> row_class;  // one tag per inequality row
  std::vector<int> row_entity;      // node (or line) the row guards
  std::vector<int> support;         // recourse nodes, root first
  std::vector<int> excluded;        // DR nodes dropped for nonpositive beta1
  int node_count = 0;
  int line_count = 0;
  // variable block offsets into z
  int off_x = 0, off_gp = 0, off_gq = 0, off_fp = 0, off_fq = 0, off_u = 0, off_alpha = 0;
};

OpfProgram build_instance(const OpfInstance& instance);

struct DispatchSolution {
  Eigen::VectorXd x_star;       // node-indexed desired DR (MW)
  Eigen::VectorXd gP, gQ;       // node-indexed, zero off the recourse support
  Eigen::VectorXd fP, fQ;       // line-indexed flows
  Eigen::VectorXd u;            // node-indexed squared voltage, u(0) = u_root
  Eigen::VectorXd alpha;        // node-indexed participation factors
  Eigen::VectorXd pi_p, pi_q;   // nodal balance duals ($/MWh)
  std::vector<int> excluded_nodes;
  double objective = 0;         // expected cost at the solution ($)
  int qp_iterations = 0;
  int kelley_rounds = 0;
  double kkt_residual = 0;
};

DispatchSolution solve_opf(const OpfInstance& instance);

/* Desired DR implied by the balance duals at an interior optimum; zero at inactive nodes. */
Eigen::VectorXd optimal_dr_from_duals(const FeederModel& feeder, const Eigen::VectorXd& pi_p,
                                      const Eigen::VectorXd& pi_q, const DrEstimates& dr,
                                      double kappa);

}  // namespace drflow
