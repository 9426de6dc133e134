#pragma once

#include <Eigen/Dense>

namespace drflow::qp {

/* Convex quadratic program
 *   min 1/2 z'Pz + q'z   s.t.  Az = b,  Gz <= h.
 * P must be symmetric positive semidefinite on the nullspace of A. */
struct Problem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
};

struct Settings {
  double eps = 1e-10;        // scaled KKT residual target
  double eps_accept = 1e-6;  // largest residual still reported as optimal
  int max_iterations = 100;
};

enum class Status { optimal, iteration_limit, infeasible, numerical_error };

struct Solution {
  Status status = Status::numerical_error;
  Eigen::VectorXd z;
  Eigen::VectorXd y;       // equality multipliers: Pz + q + A'y + G'lambda = 0
  Eigen::VectorXd lambda;  // inequality multipliers, >= 0
  Eigen::VectorXd s;       // slacks h - Gz, >= 0
  double objective = 0;
  int iterations = 0;
  double kkt_residual = 0;  // max of the scaled stationarity/feasibility/gap residuals
};

Solution solve(const Problem& problem, const Settings& settings = {});

}  // namespace drflow::qp
