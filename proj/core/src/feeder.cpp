#include "drflow/feeder.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "drflow/detail/csv.hpp"
#include "drflow/errors.hpp"

namespace drflow {

namespace {

std::string node_ctx(const std::string& file, int lineno, int id) {
  return file + " line " + std::to_string(lineno) + " (node " + std::to_string(id) + ")";
}

}  // namespace

FeederModel FeederModel::build(std::vector<Node> nodes, std::vector<Line> lines,
                               double base_mva, double u_root) {
  FeederModel fm;
  if (nodes.empty()) throw io_error("feeder has no nodes");
  if (base_mva <= 0) throw io_error("base_mva must be positive");
  if (u_root <= 0) throw io_error("u_root must be positive");

  const int m = static_cast<int>(nodes.size());
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  for (int i = 0; i < m; ++i) {
    const Node& nd = nodes[i];
    if (nd.id != i)
      throw io_error("node ids must be contiguous 0..m-1; missing or duplicate id near " +
                     std::to_string(nd.id));
    if (!(nd.u_min < nd.u_max))
      throw io_error("node " + std::to_string(nd.id) + ": u_min must be below u_max");
    if (nd.gamma < 0) throw io_error("node " + std::to_string(nd.id) + ": gamma must be >= 0");
    if (nd.dP_forecast < 0)
      throw io_error("node " + std::to_string(nd.id) + ": dP must be >= 0");
    if (nd.generator) {
      const GeneratorParams& g = *nd.generator;
      if (g.c2 < 0) throw io_error("node " + std::to_string(nd.id) + ": c2 must be >= 0");
      if (g.gP_min > g.gP_max || g.gQ_min > g.gQ_max)
        throw io_error("node " + std::to_string(nd.id) + ": generator bounds out of order");
    }
  }
  if (!(nodes[0].u_min <= u_root && u_root <= nodes[0].u_max))
    throw io_error("u_root violates the root node voltage bounds");

  if (static_cast<int>(lines.size()) != m - 1)
    throw io_error("expected " + std::to_string(m - 1) + " lines for " + std::to_string(m) +
                   " nodes, got " + std::to_string(lines.size()));

  std::vector<int> seen(m, 0);
  for (const Line& ln : lines) {
    if (ln.downstream_node <= 0 || ln.downstream_node >= m)
      throw io_error("line references unknown downstream node " +
                     std::to_string(ln.downstream_node));
    if (ln.upstream_node < 0 || ln.upstream_node >= m)
      throw io_error("line " + std::to_string(ln.downstream_node) +
                     " references unknown upstream node " + std::to_string(ln.upstream_node));
    if (ln.R < 0 || ln.X < 0)
      throw io_error("line " + std::to_string(ln.downstream_node) + ": R and X must be >= 0");
    if (ln.S_max <= 0)
      throw io_error("line " + std::to_string(ln.downstream_node) + ": S_max must be positive");
    if (++seen[ln.downstream_node] > 1)
      throw io_error("node " + std::to_string(ln.downstream_node) +
                     " has two ancestors (duplicate downstream id)");
  }
  for (int i = 1; i < m; ++i)
    if (seen[i] == 0)
      throw io_error("node " + std::to_string(i) +
                     " has no feeding line (disconnected or second root)");

  std::sort(lines.begin(), lines.end(),
            [](const Line& a, const Line& b) { return a.downstream_node < b.downstream_node; });

  fm.parent_.assign(m, -1);
  fm.children_.assign(m, {});
  for (const Line& ln : lines) fm.parent_[ln.downstream_node] = ln.upstream_node;

  // Walk ancestor chains; every non-root node must reach the root.
  for (int i = 1; i < m; ++i) {
    int hops = 0;
    int cur = i;
    while (cur != 0) {
      cur = fm.parent_[cur];
      if (++hops > m)
        throw io_error("cycle detected on the ancestor chain of node " + std::to_string(i));
    }
  }
  for (int i = 1; i < m; ++i) fm.children_[fm.parent_[i]].push_back(i);

  const int n = m - 1;
  fm.A_ = Eigen::MatrixXd::Zero(n, m);
  for (int j = 1; j < m; ++j)
    for (int cur = j; cur != 0; cur = fm.parent_[cur]) fm.A_(cur - 1, j) = 1.0;

  fm.r_eff_.resize(n);
  fm.x_eff_.resize(n);
  for (int i = 0; i < n; ++i) {
    fm.r_eff_(i) = lines[i].R / base_mva;
    fm.x_eff_(i) = lines[i].X / base_mva;
  }

  fm.gamma_vec_.resize(m);
  for (int i = 0; i < m; ++i) fm.gamma_vec_(i) = i == 0 ? 0.0 : nodes[i].gamma;

  for (int i = 0; i < m; ++i)
    if (nodes[i].generator && i != 0) fm.gen_nodes_.push_back(i);

  fm.nodes_ = std::move(nodes);
  fm.lines_ = std::move(lines);
  fm.base_mva_ = base_mva;
  fm.u_root_ = u_root;
  return fm;
}

int FeederModel::ancestor(int node) const {
  if (node <= 0 || node >= node_count())
    throw config_error("ancestor() requires a non-root node id");
  return parent_[node];
}

FeederModel load_feeder(const std::string& dir) {
  using namespace detail;

  const std::string nodes_path = dir + "/nodes.csv";
  const std::string lines_path = dir + "/lines.csv";
  const std::string meta_path = dir + "/meta.csv";

  CsvTable meta = read_csv(meta_path);
  require_header(meta, "base_mva,u_root", meta_path);
  if (meta.rows.size() != 1 || meta.rows[0].size() != 2)
    throw io_error(meta_path + ": expected exactly one row 'base_mva,u_root'");
  const double base_mva = parse_double(meta.rows[0][0], meta_path);
  const double u_root = parse_double(meta.rows[0][1], meta_path);

  CsvTable nt = read_csv(nodes_path);
  require_header(nt, "id,dP,dQ,gamma,u_min,u_max,c2,c1,c0,gP_min,gP_max,gQ_min,gQ_max",
                 nodes_path);
  std::vector<Node> nodes;
  for (std::size_t r = 0; r < nt.rows.size(); ++r) {
    const auto& row = nt.rows[r];
    if (row.size() != 13)
      throw io_error(nodes_path + " line " + std::to_string(nt.line_numbers[r]) +
                     ": expected 13 fields, got " + std::to_string(row.size()));
    Node nd;
    nd.id = parse_int(row[0], nodes_path + " line " + std::to_string(nt.line_numbers[r]));
    const std::string ctx = node_ctx(nodes_path, nt.line_numbers[r], nd.id);
    nd.dP_forecast = parse_double(row[1], ctx);
    nd.dQ_forecast = parse_double(row[2], ctx);
    nd.gamma = parse_double(row[3], ctx);
    nd.u_min = parse_double(row[4], ctx);
    nd.u_max = parse_double(row[5], ctx);
    std::array<std::optional<double>, 7> gen;
    for (int k = 0; k < 7; ++k) gen[k] = parse_optional_double(row[6 + k], ctx);
    const int present = static_cast<int>(
        std::count_if(gen.begin(), gen.end(), [](const auto& o) { return o.has_value(); }));
    if (present == 7) {
      nd.generator = GeneratorParams{*gen[0], *gen[1], *gen[2], *gen[3], *gen[4], *gen[5], *gen[6]};
    } else if (present != 0) {
      throw io_error(ctx + ": generator columns must be all present or all blank");
    }
    nodes.push_back(nd);
  }

  CsvTable lt = read_csv(lines_path);
  require_header(lt, "down_node,up_node,R,X,S_max", lines_path);
  std::vector<Line> lines;
  for (std::size_t r = 0; r < lt.rows.size(); ++r) {
    const auto& row = lt.rows[r];
    const std::string ctx = lines_path + " line " + std::to_string(lt.line_numbers[r]);
    if (row.size() != 5) throw io_error(ctx + ": expected 5 fields");
    Line ln;
    ln.downstream_node = parse_int(row[0], ctx);
    ln.upstream_node = parse_int(row[1], ctx);
    ln.R = parse_double(row[2], ctx);
    ln.X = parse_double(row[3], ctx);
    ln.S_max = parse_double(row[4], ctx);
    lines.push_back(ln);
  }

  return FeederModel::build(std::move(nodes), std::move(lines), base_mva, u_root);
}

Eigen::MatrixXd path_matrix(const FeederModel& model) { return model.A(); }

namespace {

void check_simplex(const Eigen::VectorXd& alpha) {
  if (alpha.size() == 0) throw config_error("alpha must be non-empty");
  if (alpha.minCoeff() < -1e-12) throw config_error("alpha must be nonnegative");
  if (std::abs(alpha.sum() - 1.0) > 1e-9)
    throw config_error("alpha must sum to 1, got " + std::to_string(alpha.sum()));
}

}  // namespace

Eigen::MatrixXd injection_shift(const Eigen::VectorXd& alpha) {
  check_simplex(alpha);
  const auto m = alpha.size();
  Eigen::MatrixXd C = alpha * Eigen::RowVectorXd::Ones(m);
  C -= Eigen::MatrixXd::Identity(m, m);
  return C;
}

Eigen::MatrixXd injection_shift(const Eigen::VectorXd& alpha, const FeederModel& model) {
  if (alpha.size() != model.node_count())
    throw config_error("alpha dimension does not match the feeder");
  check_simplex(alpha);
  const auto& gens = model.generator_nodes();
  for (int i = 1; i < model.node_count(); ++i) {
    const bool is_gen = std::find(gens.begin(), gens.end(), i) != gens.end();
    if (!is_gen && std::abs(alpha(i)) > 1e-12)
      throw config_error("alpha must be zero at non-generator node " + std::to_string(i));
  }
  return injection_shift(alpha);
}

Eigen::RowVectorXd voltage_sensitivity(const FeederModel& model, const Eigen::VectorXd& alpha,
                                       int node) {
  if (node <= 0 || node >= model.node_count())
    throw config_error("voltage_sensitivity requires a non-root node id");
  const Eigen::MatrixXd C = injection_shift(alpha);
  const Eigen::MatrixXd& A = model.A();
  // Row vector a^T = A(:,node)^T diag(w) A for the R and X weights.
  Eigen::RowVectorXd rRow =
      (A.col(node).cwiseProduct(model.r_eff())).transpose() * A;  // 1 x m
  Eigen::RowVectorXd xRow =
      (A.col(node).cwiseProduct(model.x_eff())).transpose() * A;
  Eigen::RowVectorXd T = -2.0 * (rRow * C) - 2.0 * ((xRow * C) * model.gamma_vec().asDiagonal());
  return T;
}

FlowSolution solve_lindistflow(const FeederModel& model, const Eigen::VectorXd& netP,
                               const Eigen::VectorXd& netQ) {
  const int m = model.node_count();
  if (netP.size() != m || netQ.size() != m)
    throw config_error("net injection dimension does not match the feeder");
  FlowSolution s;
  s.fP = model.A() * netP;
  s.fQ = model.A() * netQ;
  const Eigen::VectorXd drop =
      2.0 * (model.A().transpose() *
             (model.r_eff().cwiseProduct(s.fP) + model.x_eff().cwiseProduct(s.fQ)));
  s.u = Eigen::VectorXd::Constant(m, model.u_root()) - drop;
  s.slack_P = netP.sum();
  s.slack_Q = netQ.sum();
  return s;
}

}  // namespace drflow
