#include "drflow/dro_opf.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "drflow/errors.hpp"

namespace drflow {

NetworkMode parse_network_mode(const std::string& name) {
  if (name == "none") return NetworkMode::none;
  if (name == "flows") return NetworkMode::flows;
  if (name == "voltage") return NetworkMode::voltage;
  if (name == "full") return NetworkMode::full;
  throw config_error("unknown network mode '" + name + "'");
}

const char* to_string(NetworkMode mode) {
  switch (mode) {
    case NetworkMode::none: return "none";
    case NetworkMode::flows: return "flows";
    case NetworkMode::voltage: return "voltage";
    case NetworkMode::full: return "full";
  }
  return "?";
}

const char* to_string(RowClass c) {
  switch (c) {
    case RowClass::dr_capacity: return "demand response capacity";
    case RowClass::alpha_bound: return "participation factor bound";
    case RowClass::gen_active: return "generator active power limit";
    case RowClass::gen_reactive: return "generator reactive power limit";
    case RowClass::voltage_band: return "voltage band";
    case RowClass::flow_limit: return "line flow limit";
  }
  return "?";
}

void RiskConfig::validate() const {
  for (double eta : {eta_g, eta_v, eta_f})
    if (!(eta > 0.0 && eta <= 0.5)) throw config_error("eta must lie in (0, 1/2]");
  if (polygon_sides < 4 || polygon_sides % 2 != 0)
    throw config_error("flow polygon needs an even side count of at least 4");
}

OpfInstance make_instance(const FeederModel& feeder, const DrEstimates& dr,
                          const MomentEstimate& moments, const MarketScenario& market,
                          const RiskConfig& risk) {
  OpfInstance inst;
  inst.feeder = &feeder;
  const int m = feeder.node_count();
  inst.dP_forecast.resize(m);
  inst.dQ_forecast.resize(m);
  for (int i = 0; i < m; ++i) {
    inst.dP_forecast(i) = feeder.nodes()[i].dP_forecast;
    inst.dQ_forecast(i) = feeder.nodes()[i].dQ_forecast;
  }
  inst.dr = dr;
  inst.moments = moments;
  inst.market = market;
  inst.risk = risk;
  return inst;
}

double dro_margin(const Eigen::VectorXd& a, const MomentEstimate& moments, double eta) {
  if (!(eta > 0.0 && eta <= 0.5)) throw config_error("eta must lie in (0, 1/2]");
  if (a.size() != moments.mu_hat.size())
    throw config_error("margin direction dimension disagrees with the moments");
  double quad = a.dot(moments.sigma_hat * a);
  const double sig_scale =
      moments.sigma_hat.size() ? moments.sigma_hat.cwiseAbs().maxCoeff() : 0.0;
  if (quad < -1e-9 * (1.0 + a.squaredNorm() * sig_scale))
    throw config_error("covariance quadratic form is negative; moments not PSD");
  quad = std::max(quad, 0.0);
  return moments.mu_hat.dot(a) + std::sqrt((1.0 - eta) / eta) * std::sqrt(quad);
}

namespace {

bool wants_voltage(NetworkMode m) {
  return m == NetworkMode::voltage || m == NetworkMode::full;
}
bool wants_flows(NetworkMode m) {
  return m == NetworkMode::flows || m == NetworkMode::full;
}

/* Shared assembly state for the base program and the margin cuts. */
struct Work {
  const OpfInstance* inst = nullptr;
  const FeederModel* f = nullptr;
  int m = 0, n = 0, r = 0, N = 0;
  std::vector<int> support;
  std::vector<char> eff_active;  // dr.active with nonpositive beta1 nodes dropped

  double k_g = 0, k_v = 0, k_f = 0;
  double mu_e = 0, mu_g = 0;    // mu'e, mu'gamma
  double see = 0, sgg = 0;      // e'Se, gamma'S gamma
  double sig_e = 0, sig_g = 0;
  bool stochastic = false;      // Sigma has any mass

  Eigen::VectorXd gvec;                  // node gammas, root 0
  std::vector<Eigen::RowVectorXd> rRow;  // per non-root node, 1 x m over nodes
  std::vector<Eigen::RowVectorXd> xRow;
  std::vector<Eigen::VectorXd> t0;       // per non-root node
  std::vector<double> mu_t0;

  double poly_scale = 1.0;
  std::vector<double> cosq, sinq;
  std::vector<Eigen::VectorXd> vK;       // per polygon angle, node space
  std::vector<double> mu_vK;

  OpfProgram prog;

  int xi(int i) const { return prog.off_x + i; }
  int gpi(int j) const { return prog.off_gp + j; }
  int gqi(int j) const { return prog.off_gq + j; }
  int fpi(int l) const { return prog.off_fp + l; }
  int fqi(int l) const { return prog.off_fq + l; }
  int ui(int i) const { return prog.off_u + i - 1; }  // i >= 1
  int ai(int j) const { return prog.off_alpha + j; }

  void append_row(RowClass c, int entity, const Eigen::RowVectorXd& row, double rhs) {
    auto& G = prog.problem.G;
    auto& h = prog.problem.h;
    const Eigen::Index k = G.rows();
    G.conservativeResize(k + 1, N);
    h.conservativeResize(k + 1);
    G.row(k) = row;
    h(k) = rhs;
    prog.row_class.push_back(c);
    prog.row_entity.push_back(entity);
  }

  /* Upper/lower voltage cut linearized at (chat, dhat); the norm term
   * phi(c,d) = ||S^1/2 (c e + d gamma + t0_i)|| is underestimated by its tangent. */
  void add_voltage_cuts(int i, double chat, double dhat) {
    const Eigen::VectorXd a = chat * Eigen::VectorXd::Ones(m) + dhat * gvec + t0[i - 1];
    const Eigen::VectorXd Sa = inst->moments.sigma_hat * a;
    const double phi = std::sqrt(std::max(a.dot(Sa), 0.0));
    if (phi <= 1e-14) return;
    const double gc = Sa.sum() / phi;
    const double gd = gvec.dot(Sa) / phi;
    const double tail = phi - gc * chat - gd * dhat;
    const Node& nd = f->nodes()[i];

    Eigen::RowVectorXd hi = Eigen::RowVectorXd::Zero(N);
    Eigen::RowVectorXd lo = Eigen::RowVectorXd::Zero(N);
    hi(ui(i)) = 1.0;
    lo(ui(i)) = -1.0;
    for (int j = 0; j < r; ++j) {
      const double rc = -2.0 * rRow[i - 1](support[j]);
      const double xc = -2.0 * xRow[i - 1](support[j]);
      hi(ai(j)) = (mu_e + k_v * gc) * rc + (mu_g + k_v * gd) * xc;
      lo(ai(j)) = (-mu_e + k_v * gc) * rc + (-mu_g + k_v * gd) * xc;
    }
    append_row(RowClass::voltage_band, i, hi, nd.u_max - mu_t0[i - 1] - k_v * tail);
    append_row(RowClass::voltage_band, i, lo, -nd.u_min + mu_t0[i - 1] - k_v * tail);
  }

  /* Flow polygon cut for line l, side k, linearized at rho_hat = A(l,:) alpha. */
  void add_flow_cut(int l, int k, double rho_hat) {
    const Eigen::VectorXd w = f->A().row(l).transpose().cwiseProduct(vK[k]);
    const Eigen::VectorXd a = rho_hat * vK[k] - w;
    const Eigen::VectorXd Sa = inst->moments.sigma_hat * a;
    const double psi = std::sqrt(std::max(a.dot(Sa), 0.0));
    if (psi <= 1e-14) return;
    const double grho = vK[k].dot(Sa) / psi;

    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(N);
    row(fpi(l)) = cosq[k];
    row(fqi(l)) = sinq[k];
    for (int j = 0; j < r; ++j)
      row(ai(j)) = (mu_vK[k] + k_f * grho) * f->A()(l, support[j]);
    const double smax = f->lines()[l].S_max;
    append_row(RowClass::flow_limit, l, row,
               smax * poly_scale + inst->moments.mu_hat.dot(w) - k_f * (psi - grho * rho_hat));
  }
};

Work make_work(const OpfInstance& inst) {
  if (inst.feeder == nullptr) throw config_error("dispatch instance has no feeder");
  inst.risk.validate();
  const FeederModel& f = *inst.feeder;
  const int m = f.node_count();
  if (inst.dP_forecast.size() != m || inst.dQ_forecast.size() != m)
    throw config_error("forecast dimension disagrees with the feeder");
  if (inst.dr.beta0.size() != m || inst.dr.beta1.size() != m ||
      static_cast<int>(inst.dr.active.size()) != m)
    throw config_error("sensitivity estimate dimension disagrees with the feeder");
  if (inst.moments.mu_hat.size() != m || inst.moments.sigma_hat.rows() != m)
    throw config_error("moment dimension disagrees with the feeder");
  if (m > 0 && f.nodes()[0].generator)
    throw config_error("root node carries a generator record; the root is the slack import");
  if (!(inst.market.omega >= 0) || !(inst.market.kappa >= 0))
    throw config_error("market prices must be finite and nonnegative");

  Work w;
  w.inst = &inst;
  w.f = &f;
  w.m = m;
  w.n = f.line_count();
  w.support.push_back(0);
  for (int g : f.generator_nodes()) w.support.push_back(g);
  w.r = static_cast<int>(w.support.size());
  w.N = m + 2 * w.r + 2 * w.n + (m - 1) + w.r;

  w.eff_active.assign(m, 0);
  for (int i = 1; i < m; ++i) {
    if (!inst.dr.active[i]) continue;
    if (inst.dr.beta1(i) > 0) {
      w.eff_active[i] = 1;
    } else {
      w.prog.excluded.push_back(i);
      std::cerr << "warning: node " << i
                << " excluded from demand response (nonpositive slope estimate)\n";
    }
  }

  w.k_g = std::sqrt((1.0 - inst.risk.eta_g) / inst.risk.eta_g);
  w.k_v = std::sqrt((1.0 - inst.risk.eta_v) / inst.risk.eta_v);
  w.k_f = std::sqrt((1.0 - inst.risk.eta_f) / inst.risk.eta_f);
  w.gvec = f.gamma_vec();
  w.mu_e = inst.moments.mu_hat.sum();
  w.mu_g = inst.moments.mu_hat.dot(w.gvec);
  const Eigen::VectorXd Se = inst.moments.sigma_hat.rowwise().sum();
  w.see = std::max(Se.sum(), 0.0);
  w.sgg = std::max(w.gvec.dot(inst.moments.sigma_hat * w.gvec), 0.0);
  w.sig_e = std::sqrt(w.see);
  w.sig_g = std::sqrt(w.sgg);
  w.stochastic = inst.moments.sigma_hat.cwiseAbs().maxCoeff() > 0.0;

  w.rRow.reserve(m - 1);
  for (int i = 1; i < m; ++i) {
    const Eigen::VectorXd pr = f.A().col(i).cwiseProduct(f.r_eff());
    const Eigen::VectorXd px = f.A().col(i).cwiseProduct(f.x_eff());
    w.rRow.push_back(pr.transpose() * f.A());
    w.xRow.push_back(px.transpose() * f.A());
    const Eigen::VectorXd t0 =
        2.0 * (w.rRow.back().transpose() + w.xRow.back().transpose().cwiseProduct(w.gvec));
    w.t0.push_back(t0);
    w.mu_t0.push_back(inst.moments.mu_hat.dot(t0));
  }

  const int K = inst.risk.polygon_sides;
  w.poly_scale = std::cos(M_PI / K);
  for (int k = 0; k < K; ++k) {
    const double th = 2.0 * M_PI * k / K;
    w.cosq.push_back(std::cos(th));
    w.sinq.push_back(std::sin(th));
    w.vK.push_back(w.cosq.back() * Eigen::VectorXd::Ones(m) + w.sinq.back() * w.gvec);
    w.mu_vK.push_back(inst.moments.mu_hat.dot(w.vK.back()));
  }

  OpfProgram& p = w.prog;
  p.node_count = m;
  p.line_count = w.n;
  p.support = w.support;
  p.off_x = 0;
  p.off_gp = m;
  p.off_gq = m + w.r;
  p.off_fp = m + 2 * w.r;
  p.off_fq = m + 2 * w.r + w.n;
  p.off_u = m + 2 * w.r + 2 * w.n;
  p.off_alpha = m + 2 * w.r + 2 * w.n + (m - 1);

  // Objective.
  p.problem.P = Eigen::MatrixXd::Zero(w.N, w.N);
  p.problem.q = Eigen::VectorXd::Zero(w.N);
  for (int i = 1; i < m; ++i) {
    if (!w.eff_active[i]) continue;
    p.problem.P(w.xi(i), w.xi(i)) = 1.0 / inst.dr.beta1(i);
    p.problem.q(w.xi(i)) = inst.market.kappa - inst.dr.beta0(i) / inst.dr.beta1(i);
  }
  p.problem.q(w.gpi(0)) = inst.market.omega;
  for (int j = 1; j < w.r; ++j) {
    const GeneratorParams& gp = *f.nodes()[w.support[j]].generator;
    p.problem.P(w.gpi(j), w.gpi(j)) = 2.0 * gp.c2;
    p.problem.q(w.gpi(j)) = gp.c1;
    p.problem.P(w.ai(j), w.ai(j)) = 2.0 * gp.c2 * w.see;
  }

  // Equalities: P balance, Q balance, voltage definitions, simplex, inactive pins.
  int pins = 0;
  for (int i = 0; i < m; ++i)
    if (!w.eff_active[i]) ++pins;
  const int ne = 2 * m + (m - 1) + 1 + pins;
  p.problem.A = Eigen::MatrixXd::Zero(ne, w.N);
  p.problem.b = Eigen::VectorXd::Zero(ne);
  auto& A = p.problem.A;
  auto& b = p.problem.b;
  for (int i = 0; i < m; ++i) {
    A(i, w.xi(i)) = -1.0;
    A(m + i, w.xi(i)) = -w.gvec(i);
    for (int c : f.children(i)) {
      A(i, w.fpi(f.line_of(c))) = 1.0;
      A(m + i, w.fqi(f.line_of(c))) = 1.0;
    }
    if (i > 0) {
      A(i, w.fpi(f.line_of(i))) = -1.0;
      A(m + i, w.fqi(f.line_of(i))) = -1.0;
    }
    b(i) = -inst.dP_forecast(i);
    b(m + i) = -inst.dQ_forecast(i);
  }
  for (int j = 0; j < w.r; ++j) {
    A(w.support[j], w.gpi(j)) = -1.0;
    A(m + w.support[j], w.gqi(j)) = -1.0;
  }
  for (int i = 1; i < m; ++i) {
    const int row = 2 * m + i - 1;
    A(row, w.ui(i)) = 1.0;
    for (int l = 0; l < w.n; ++l) {
      if (f.A()(l, i) == 0.0) continue;
      A(row, w.fpi(l)) = 2.0 * f.r_eff()(l);
      A(row, w.fqi(l)) = 2.0 * f.x_eff()(l);
    }
    b(row) = f.u_root();
  }
  {
    const int row = 2 * m + (m - 1);
    for (int j = 0; j < w.r; ++j) A(row, w.ai(j)) = 1.0;
    b(row) = 1.0;
  }
  {
    int row = 2 * m + (m - 1) + 1;
    for (int i = 0; i < m; ++i) {
      if (w.eff_active[i]) continue;
      A(row, w.xi(i)) = 1.0;
      b(row) = 0.0;
      ++row;
    }
  }

  // Base inequalities; the robust norm terms arrive later as cuts.
  p.problem.G.resize(0, w.N);
  p.problem.h.resize(0);
  for (int i = 1; i < m; ++i) {
    if (!w.eff_active[i]) continue;
    Eigen::RowVectorXd lo = Eigen::RowVectorXd::Zero(w.N);
    lo(w.xi(i)) = -1.0;
    w.append_row(RowClass::dr_capacity, i, lo, 0.0);
    Eigen::RowVectorXd hi = Eigen::RowVectorXd::Zero(w.N);
    hi(w.xi(i)) = 1.0;
    w.append_row(RowClass::dr_capacity, i, hi, inst.dP_forecast(i));
  }
  for (int j = 0; j < w.r; ++j) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(w.N);
    row(w.ai(j)) = -1.0;
    w.append_row(RowClass::alpha_bound, w.support[j], row, 0.0);
  }
  for (int j = 1; j < w.r; ++j) {
    const int node = w.support[j];
    const GeneratorParams& gp = *f.nodes()[node].generator;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(w.N);
    row(w.gpi(j)) = 1.0;
    row(w.ai(j)) = -w.mu_e + w.k_g * w.sig_e;
    w.append_row(RowClass::gen_active, node, row, gp.gP_max);
    row.setZero();
    row(w.gpi(j)) = -1.0;
    row(w.ai(j)) = w.mu_e + w.k_g * w.sig_e;
    w.append_row(RowClass::gen_active, node, row, -gp.gP_min);
    row.setZero();
    row(w.gqi(j)) = 1.0;
    row(w.ai(j)) = -w.mu_g + w.k_g * w.sig_g;
    w.append_row(RowClass::gen_reactive, node, row, gp.gQ_max);
    row.setZero();
    row(w.gqi(j)) = -1.0;
    row(w.ai(j)) = w.mu_g + w.k_g * w.sig_g;
    w.append_row(RowClass::gen_reactive, node, row, -gp.gQ_min);
  }
  if (wants_voltage(inst.risk.network_mode)) {
    for (int i = 1; i < m; ++i) {
      const Node& nd = f.nodes()[i];
      Eigen::RowVectorXd hi = Eigen::RowVectorXd::Zero(w.N);
      Eigen::RowVectorXd lo = Eigen::RowVectorXd::Zero(w.N);
      hi(w.ui(i)) = 1.0;
      lo(w.ui(i)) = -1.0;
      for (int j = 0; j < w.r; ++j) {
        const double rc = -2.0 * w.rRow[i - 1](w.support[j]);
        const double xc = -2.0 * w.xRow[i - 1](w.support[j]);
        hi(w.ai(j)) = w.mu_e * rc + w.mu_g * xc;
        lo(w.ai(j)) = -(w.mu_e * rc + w.mu_g * xc);
      }
      w.append_row(RowClass::voltage_band, i, hi, nd.u_max - w.mu_t0[i - 1]);
      w.append_row(RowClass::voltage_band, i, lo, -nd.u_min + w.mu_t0[i - 1]);
    }
  }
  if (wants_flows(inst.risk.network_mode)) {
    for (int l = 0; l < w.n; ++l) {
      const double smax = f.lines()[l].S_max;
      for (int k = 0; k < inst.risk.polygon_sides; ++k) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(w.N);
        row(w.fpi(l)) = w.cosq[k];
        row(w.fqi(l)) = w.sinq[k];
        double mu_w = 0;
        for (int i = 1; i < m; ++i)
          mu_w += inst.moments.mu_hat(i) * f.A()(l, i) * w.vK[k](i);
        for (int j = 0; j < w.r; ++j) row(w.ai(j)) = w.mu_vK[k] * f.A()(l, w.support[j]);
        w.append_row(RowClass::flow_limit, l, row, smax * w.poly_scale + mu_w);
      }
    }
  }
  return w;
}

/* True robust slack of each norm constraint at the candidate point; appends cuts
 * for violated rows and reports whether all margins already hold. */
bool refine_margins(Work& w, const Eigen::VectorXd& z) {
  const OpfInstance& inst = *w.inst;
  if (!w.stochastic) return true;
  Eigen::VectorXd alpha_node = Eigen::VectorXd::Zero(w.m);
  for (int j = 0; j < w.r; ++j) alpha_node(w.support[j]) = z(w.ai(j));
  bool ok = true;
  if (wants_voltage(inst.risk.network_mode)) {
    for (int i = 1; i < w.m; ++i) {
      const Node& nd = w.f->nodes()[i];
      const double c = -2.0 * w.rRow[i - 1].dot(alpha_node);
      const double d = -2.0 * w.xRow[i - 1].dot(alpha_node);
      const Eigen::VectorXd a =
          c * Eigen::VectorXd::Ones(w.m) + d * w.gvec + w.t0[i - 1];
      const double mu_a = inst.moments.mu_hat.dot(a);
      const double phi =
          std::sqrt(std::max(a.dot(inst.moments.sigma_hat * a), 0.0));
      const double ui = z(w.ui(i));
      const double tol = 1e-9 * (1.0 + std::abs(nd.u_max));
      const bool hi_bad = ui + mu_a + w.k_v * phi > nd.u_max + tol;
      const bool lo_bad = ui + mu_a - w.k_v * phi < nd.u_min - tol;
      if (hi_bad || lo_bad) {
        ok = false;
        w.add_voltage_cuts(i, c, d);
      }
    }
  }
  if (wants_flows(inst.risk.network_mode)) {
    for (int l = 0; l < w.n; ++l) {
      const double smax = w.f->lines()[l].S_max;
      const double rho = w.f->A().row(l).dot(alpha_node);
      const double tol = 1e-9 * (1.0 + smax);
      for (int k = 0; k < inst.risk.polygon_sides; ++k) {
        const Eigen::VectorXd wv = w.f->A().row(l).transpose().cwiseProduct(w.vK[k]);
        const Eigen::VectorXd a = rho * w.vK[k] - wv;
        const double mu_a = inst.moments.mu_hat.dot(a);
        const double psi =
            std::sqrt(std::max(a.dot(inst.moments.sigma_hat * a), 0.0));
        const double lhs =
            w.cosq[k] * z(w.fpi(l)) + w.sinq[k] * z(w.fqi(l)) + mu_a + w.k_f * psi;
        if (lhs > smax * w.poly_scale + tol) {
          ok = false;
          w.add_flow_cut(l, k, rho);
        }
      }
    }
  }
  return ok;
}

[[noreturn]] void diagnose_infeasible(const Work& w) {
  const qp::Problem& base = w.prog.problem;
  const Eigen::Index N = base.P.rows();
  const Eigen::Index ni = base.G.rows();
  qp::Problem el;
  el.P = Eigen::MatrixXd::Zero(N + ni, N + ni);
  el.P.topLeftCorner(N, N) = base.P;
  el.P.bottomRightCorner(ni, ni).diagonal().setConstant(1e-3);
  el.q = Eigen::VectorXd::Zero(N + ni);
  el.q.head(N) = base.q;
  el.q.tail(ni).setConstant(1e6);
  el.A = Eigen::MatrixXd::Zero(base.A.rows(), N + ni);
  el.A.leftCols(N) = base.A;
  el.b = base.b;
  el.G = Eigen::MatrixXd::Zero(2 * ni, N + ni);
  el.G.topLeftCorner(ni, N) = base.G;
  el.G.block(0, N, ni, ni) = -Eigen::MatrixXd::Identity(ni, ni);
  el.G.block(ni, N, ni, ni) = -Eigen::MatrixXd::Identity(ni, ni);
  el.h = Eigen::VectorXd::Zero(2 * ni);
  el.h.head(ni) = base.h;

  qp::Settings cfg;
  cfg.eps = 1e-9;
  const qp::Solution es = qp::solve(el, cfg);
  if (es.status == qp::Status::optimal && ni > 0) {
    Eigen::Index worst = 0;
    const double slack = es.z.tail(ni).maxCoeff(&worst);
    if (slack > 1e-7) {
      const RowClass c = w.prog.row_class[worst];
      const char* what = (c == RowClass::flow_limit) ? "line" : "node";
      throw infeasible_error(std::string("dispatch infeasible: ") + to_string(c) + " at " +
                             what + " " + std::to_string(w.prog.row_entity[worst]) +
                             " violated by " + std::to_string(slack));
    }
  }
  throw infeasible_error("dispatch infeasible: no constraint class could be isolated");
}

}  // namespace

OpfProgram build_instance(const OpfInstance& instance) { return make_work(instance).prog; }

DispatchSolution solve_opf(const OpfInstance& instance) {
  Work w = make_work(instance);
  const OpfInstance& inst = instance;
  const FeederModel& f = *inst.feeder;

  // Seed cuts at the root-only and uniform recourse anchors.
  if (w.stochastic) {
    Eigen::VectorXd root_only = Eigen::VectorXd::Zero(w.m);
    root_only(0) = 1.0;
    Eigen::VectorXd uniform = Eigen::VectorXd::Zero(w.m);
    for (int j = 0; j < w.r; ++j) uniform(w.support[j]) = 1.0 / w.r;
    for (const Eigen::VectorXd& anchor : {root_only, uniform}) {
      if (wants_voltage(inst.risk.network_mode)) {
        for (int i = 1; i < w.m; ++i)
          w.add_voltage_cuts(i, -2.0 * w.rRow[i - 1].dot(anchor),
                             -2.0 * w.xRow[i - 1].dot(anchor));
      }
      if (wants_flows(inst.risk.network_mode)) {
        for (int l = 0; l < w.n; ++l)
          for (int k = 0; k < inst.risk.polygon_sides; ++k)
            w.add_flow_cut(l, k, f.A().row(l).dot(anchor));
      }
    }
  }

  qp::Settings cfg;
  qp::Solution qs;
  constexpr int kMaxRounds = 30;
  int round = 0;
  for (;; ++round) {
    if (round >= kMaxRounds)
      throw infeasible_error("dispatch margin refinement did not converge");
    qs = qp::solve(w.prog.problem, cfg);
    if (qs.status == qp::Status::numerical_error)
      throw infeasible_error("dispatch solve failed numerically");
    if (qs.status != qp::Status::optimal) diagnose_infeasible(w);
    if (refine_margins(w, qs.z)) break;
  }

  DispatchSolution out;
  const int m = w.m;
  out.x_star = Eigen::VectorXd::Zero(m);
  for (int i = 1; i < m; ++i)
    if (w.eff_active[i]) out.x_star(i) = qs.z(w.xi(i));
  out.gP = Eigen::VectorXd::Zero(m);
  out.gQ = Eigen::VectorXd::Zero(m);
  out.alpha = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < w.r; ++j) {
    out.gP(w.support[j]) = qs.z(w.gpi(j));
    out.gQ(w.support[j]) = qs.z(w.gqi(j));
    out.alpha(w.support[j]) = qs.z(w.ai(j));
  }
  out.fP = qs.z.segment(w.prog.off_fp, w.n);
  out.fQ = qs.z.segment(w.prog.off_fq, w.n);
  out.u = Eigen::VectorXd::Constant(m, f.u_root());
  for (int i = 1; i < m; ++i) out.u(i) = qs.z(w.ui(i));
  out.pi_p = qs.y.head(m);
  out.pi_q = qs.y.segment(m, m);
  out.excluded_nodes = w.prog.excluded;
  out.qp_iterations = qs.iterations;
  out.kelley_rounds = round;
  out.kkt_residual = qs.kkt_residual;

  double obj = inst.market.omega * out.gP(0);
  for (int j = 1; j < w.r; ++j) {
    const int node = w.support[j];
    const GeneratorParams& gp = *f.nodes()[node].generator;
    const double g = out.gP(node);
    obj += gp.c2 * g * g + gp.c1 * g + gp.c0;
    obj += gp.c2 * out.alpha(node) * out.alpha(node) * w.see;
  }
  for (int i = 1; i < m; ++i) {
    if (!w.eff_active[i]) continue;
    const double x = out.x_star(i);
    obj += inst.market.kappa * x + x * (x - inst.dr.beta0(i)) / (2.0 * inst.dr.beta1(i));
  }
  out.objective = obj;
  return out;
}

Eigen::VectorXd optimal_dr_from_duals(const FeederModel& feeder, const Eigen::VectorXd& pi_p,
                                      const Eigen::VectorXd& pi_q, const DrEstimates& dr,
                                      double kappa) {
  const int m = feeder.node_count();
  if (pi_p.size() != m || pi_q.size() != m)
    throw config_error("dual vectors disagree with the feeder dimension");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  for (int i = 1; i < m; ++i) {
    if (!dr.active[i] || !(dr.beta1(i) > 0)) continue;
    x(i) = dr.beta1(i) * (pi_p(i) + feeder.gamma_vec()(i) * pi_q(i) - kappa) + dr.beta0(i);
  }
  return x;
}

}  // namespace drflow
