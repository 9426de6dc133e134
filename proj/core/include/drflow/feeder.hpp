#pragma once

// Radial network data model: tree topology, LinDistFlow structure, and the
// constant matrices that map demand-side uncertainty into flows and voltages.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace drflow {

/// Quadratic production cost c2 g^2 + c1 g + c0 and output bounds of a
/// controllable resource.
struct GeneratorParams {
  double c2 = 0.0;  ///< $/MW^2
  double c1 = 0.0;  ///< $/MWh
  double c0 = 0.0;  ///< $
  double gP_min = 0.0, gP_max = 0.0;  ///< MW
  double gQ_min = 0.0, gQ_max = 0.0;  ///< MVAr
};

struct Node {
  int id = -1;                ///< 0 is the root; ids are contiguous 0..m-1
  double dP_forecast = 0.0;   ///< active demand forecast, MW
  double dQ_forecast = 0.0;   ///< reactive demand forecast, MVAr
  double gamma = 0.0;         ///< reactive-to-active DR ratio
  double u_min = 0.81;        ///< squared voltage lower bound, p.u.^2
  double u_max = 1.21;        ///< squared voltage upper bound, p.u.^2
  std::optional<GeneratorParams> generator;
};

/// Lines are indexed by their downstream node: line i feeds node i.
struct Line {
  int downstream_node = -1;
  int upstream_node = -1;
  double R = 0.0;      ///< p.u. on the declared MVA base
  double X = 0.0;      ///< p.u.
  double S_max = 0.0;  ///< MVA
};

/// Immutable after construction; safe for concurrent reads.
class FeederModel {
 public:
  /// Validates the tree invariants and precomputes the path matrix and the
  /// voltage-drop coefficients. Throws io_error naming the offending record.
  static FeederModel build(std::vector<Node> nodes, std::vector<Line> lines,
                           double base_mva, double u_root = 1.0);

  int node_count() const { return static_cast<int>(nodes_.size()); }  ///< m
  int line_count() const { return static_cast<int>(lines_.size()); }  ///< n = m-1
  const std::vector<Node>& nodes() const { return nodes_; }
  /// Sorted by downstream node, so lines()[i] feeds node i+1.
  const std::vector<Line>& lines() const { return lines_; }
  double base_mva() const { return base_mva_; }
  double u_root() const { return u_root_; }

  /// Path incidence, n x m: A(i,j) = 1 iff line i+1 lies on the root->j path.
  /// Column 0 is all zeros.
  const Eigen::MatrixXd& A() const { return A_; }

  int ancestor(int node) const;  ///< parent id; node must be non-root
  const std::vector<int>& children(int node) const { return children_[node]; }

  /// Voltage-drop coefficients per line for flows expressed in MW/MVAr:
  /// u_down = u_up - 2 (r_eff fP + x_eff fQ). Equal to R/base_mva, X/base_mva.
  const Eigen::VectorXd& r_eff() const { return r_eff_; }
  const Eigen::VectorXd& x_eff() const { return x_eff_; }

  /// Per-node reactive-to-active DR ratios with the root entry forced to 0,
  /// so that all m x m products conform.
  const Eigen::VectorXd& gamma_vec() const { return gamma_vec_; }

  const std::vector<int>& generator_nodes() const { return gen_nodes_; }

  /// Row index into lines()/A() of the line feeding the given non-root node.
  int line_of(int down_node) const { return down_node - 1; }

 private:
  FeederModel() = default;

  std::vector<Node> nodes_;
  std::vector<Line> lines_;
  double base_mva_ = 1.0;
  double u_root_ = 1.0;
  Eigen::MatrixXd A_;
  Eigen::VectorXd r_eff_, x_eff_, gamma_vec_;
  std::vector<int> parent_;
  std::vector<std::vector<int>> children_;
  std::vector<int> gen_nodes_;
};

/// Loads nodes.csv, lines.csv and meta.csv from the given directory.
/// Schemas are documented in the README; all invariants are checked.
FeederModel load_feeder(const std::string& dir);

/// The path incidence matrix A of the model (n x m).
Eigen::MatrixXd path_matrix(const FeederModel& model);

/// C = alpha e^T - I. Requires sum(alpha) = 1 and alpha >= 0; every column of
/// the result sums to zero. Throws config_error on a violated precondition.
Eigen::MatrixXd injection_shift(const Eigen::VectorXd& alpha);

/// Same, additionally requiring alpha = 0 away from {root} + generator nodes.
Eigen::MatrixXd injection_shift(const Eigen::VectorXd& alpha, const FeederModel& model);

/// T_i(alpha) = -2 A(:,i)^T (R A C + X A C Gamma), the row vector mapping the
/// disturbance eps to the change of squared voltage at the given non-root
/// node under the affine recourse alpha.
Eigen::RowVectorXd voltage_sensitivity(const FeederModel& model,
                                       const Eigen::VectorXd& alpha, int node);

struct FlowSolution {
  Eigen::VectorXd fP;   ///< per line, MW
  Eigen::VectorXd fQ;   ///< per line, MVAr
  Eigen::VectorXd u;    ///< per node, p.u.^2; u[0] = u_root
  double slack_P = 0.0; ///< import at the root balancing the feeder, MW
  double slack_Q = 0.0; ///< MVAr
};

/// Deterministic lossless LinDistFlow evaluation. netP/netQ are nodal net
/// demands (demand minus local generation) for all m nodes; the root entry
/// only enters the slack import.
FlowSolution solve_lindistflow(const FeederModel& model, const Eigen::VectorXd& netP,
                               const Eigen::VectorXd& netQ);

}  // namespace drflow
