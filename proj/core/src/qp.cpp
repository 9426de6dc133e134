#include "drflow/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drflow/errors.hpp"

namespace drflow::qp {
namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/* Largest step a >= 0 with v + a*dv >= 0 componentwise; uncapped. */
double boundary_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1e30;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
  return a;
}

/* LU of the regularized KKT matrix with one refinement pass against the exact one. */
struct KktSolver {
  Eigen::MatrixXd K;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;

  void factor(Eigen::MatrixXd kkt, Eigen::Index nz, double reg) {
    K = kkt;
    kkt.topLeftCorner(nz, nz).diagonal().array() += reg;
    if (kkt.rows() > nz)
      kkt.bottomRightCorner(kkt.rows() - nz, kkt.rows() - nz).diagonal().array() -= reg;
    lu.compute(kkt);
  }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd x = lu.solve(rhs);
    x += lu.solve(rhs - K * x);
    return x;
  }
};

struct Direction {
  Eigen::VectorXd dz, dy, ds, dlam;
};

}  // namespace

Solution solve(const Problem& prob, const Settings& cfg) {
  const Eigen::Index nz = prob.P.rows();
  const Eigen::Index ne = prob.A.rows();
  const Eigen::Index ni = prob.G.rows();
  if (prob.P.cols() != nz || prob.q.size() != nz) throw config_error("qp: P/q dimensions disagree");
  if (ne > 0 && prob.A.cols() != nz) throw config_error("qp: A column count disagrees with P");
  if (prob.b.size() != ne) throw config_error("qp: b length disagrees with A");
  if (ni > 0 && prob.G.cols() != nz) throw config_error("qp: G column count disagrees with P");
  if (prob.h.size() != ni) throw config_error("qp: h length disagrees with G");

  Solution sol;
  sol.z = Eigen::VectorXd::Zero(nz);
  sol.y = Eigen::VectorXd::Zero(ne);
  sol.lambda = Eigen::VectorXd::Zero(ni);
  sol.s = Eigen::VectorXd::Zero(ni);

  const double bscale = 1.0 + inf_norm(prob.b);
  const double hscale = 1.0 + inf_norm(prob.h);
  const double qscale = 1.0 + inf_norm(prob.q);
  const double reg = 1e-11 * (1.0 + (nz ? prob.P.cwiseAbs().maxCoeff() : 0.0));
  const Eigen::Index dim = nz + ne;

  Eigen::MatrixXd K0 = Eigen::MatrixXd::Zero(dim, dim);
  K0.topLeftCorner(nz, nz) = prob.P;
  if (ne) {
    K0.topRightCorner(nz, ne) = prob.A.transpose();
    K0.bottomLeftCorner(ne, nz) = prob.A;
  }

  auto objective = [&](const Eigen::VectorXd& z) {
    return 0.5 * z.dot(prob.P * z) + prob.q.dot(z);
  };

  if (ni == 0) {
    // Equality-constrained QP: one saddle-point solve.
    KktSolver ks;
    ks.factor(K0, nz, std::max(reg, 1e-12));
    Eigen::VectorXd rhs(dim);
    rhs.head(nz) = -prob.q;
    rhs.tail(ne) = prob.b;
    const Eigen::VectorXd zy = ks.solve(rhs);
    sol.z = zy.head(nz);
    sol.y = zy.tail(ne);
    sol.objective = objective(sol.z);
    const Eigen::VectorXd rd = prob.P * sol.z + prob.q + prob.A.transpose() * sol.y;
    const double rp = ne ? inf_norm(prob.A * sol.z - prob.b) : 0.0;
    sol.kkt_residual = std::max(inf_norm(rd) / qscale, rp / bscale);
    sol.iterations = 1;
    sol.status = std::isfinite(sol.kkt_residual) && sol.kkt_residual <= cfg.eps_accept
                     ? Status::optimal
                     : Status::numerical_error;
    return sol;
  }

  {
    // Initial point: damped least-squares solve treating Gz <= h as Gz ~ h.
    Eigen::MatrixXd Ki = K0;
    Ki.topLeftCorner(nz, nz) += prob.G.transpose() * prob.G;
    Ki.topLeftCorner(nz, nz).diagonal().array() += 1e-8;
    if (ne) Ki.bottomRightCorner(ne, ne).diagonal().array() -= 1e-8;
    Eigen::VectorXd rhs(dim);
    rhs.head(nz) = -prob.q + prob.G.transpose() * prob.h;
    rhs.tail(ne) = prob.b;
    const Eigen::VectorXd zy = Eigen::PartialPivLU<Eigen::MatrixXd>(Ki).solve(rhs);
    if (!zy.allFinite()) {
      sol.status = Status::numerical_error;
      return sol;
    }
    sol.z = zy.head(nz);
    sol.y = zy.tail(ne);
  }
  const Eigen::VectorXd shat = prob.h - prob.G * sol.z;
  const double sfloor = 1e-4 * hscale;
  sol.s = (shat.array() + std::max(0.0, -1.5 * shat.minCoeff())).cwiseMax(sfloor);
  sol.lambda.setConstant(std::max(1.0, 0.1 * qscale));

  Solution best = sol;
  best.kkt_residual = std::numeric_limits<double>::infinity();
  double last_rp_rel = 0, last_ri_rel = 0, last_gap_rel = 0;

  // Farkas certificate scaled from the last finite multipliers: y, lambda >= 0
  // with A'y + G'lambda ~ 0 and b'y + h'lambda < 0 proves the primal has no
  // feasible point. Diverging multipliers line up with such a ray when one exists.
  Eigen::VectorXd cert_y = sol.y, cert_lam = sol.lambda;
  auto certified_infeasible = [&]() {
    const double scale = std::max(inf_norm(cert_lam), ne ? inf_norm(cert_y) : 0.0);
    if (!(scale > 0.0) || !std::isfinite(scale)) return false;
    const Eigen::VectorXd lam = cert_lam / scale;
    if (!lam.allFinite()) return false;
    Eigen::VectorXd ray = prob.G.transpose() * lam;
    double value = prob.h.dot(lam);
    if (ne) {
      const Eigen::VectorXd yn = cert_y / scale;
      if (!yn.allFinite()) return false;
      ray += prob.A.transpose() * yn;
      value += prob.b.dot(yn);
    }
    return ray.allFinite() && inf_norm(ray) <= 1e-6 && value <= -1e-6;
  };

  bool abnormal = false;
  for (int it = 0;; ++it) {
    Eigen::VectorXd rd = prob.P * sol.z + prob.q + prob.G.transpose() * sol.lambda;
    if (ne) rd += prob.A.transpose() * sol.y;
    const Eigen::VectorXd rp = ne ? (prob.A * sol.z - prob.b).eval() : Eigen::VectorXd();
    const Eigen::VectorXd rI = prob.G * sol.z + sol.s - prob.h;
    const double mu = sol.s.dot(sol.lambda) / static_cast<double>(ni);
    sol.objective = objective(sol.z);
    last_rp_rel = inf_norm(rp) / bscale;
    last_ri_rel = inf_norm(rI) / hscale;
    last_gap_rel = mu / (1.0 + std::abs(sol.objective));
    const double res = std::max({inf_norm(rd) / qscale, last_rp_rel, last_ri_rel, last_gap_rel});
    sol.kkt_residual = res;
    sol.iterations = it;
    if (sol.lambda.allFinite() && sol.y.allFinite()) {
      cert_y = sol.y;
      cert_lam = sol.lambda;
    }
    if (!std::isfinite(res) || inf_norm(sol.z) > 1e10) {
      abnormal = true;
      break;
    }
    if (res < best.kkt_residual) best = sol;
    if (res <= cfg.eps) {
      sol.status = Status::optimal;
      return sol;
    }
    if (it >= cfg.max_iterations) break;

    Eigen::MatrixXd Kw = K0;
    const Eigen::ArrayXd w = sol.lambda.array() / sol.s.array();
    Kw.topLeftCorner(nz, nz) += prob.G.transpose() * w.matrix().asDiagonal() * prob.G;
    KktSolver ks;
    ks.factor(std::move(Kw), nz, reg);

    auto direction = [&](const Eigen::ArrayXd& rc) {
      Direction d;
      Eigen::VectorXd rhs(dim);
      rhs.head(nz) =
          -rd - prob.G.transpose() *
                    ((rc + sol.lambda.array() * rI.array()) / sol.s.array()).matrix();
      if (ne) rhs.tail(ne) = -rp;
      const Eigen::VectorXd zy = ks.solve(rhs);
      d.dz = zy.head(nz);
      d.dy = zy.tail(ne);
      d.ds = -rI - prob.G * d.dz;
      d.dlam = ((rc - sol.lambda.array() * d.ds.array()) / sol.s.array()).matrix();
      return d;
    };

    const Eigen::ArrayXd sl = sol.s.array() * sol.lambda.array();
    const Direction aff = direction(-sl);
    if (!aff.dz.allFinite() || !aff.dlam.allFinite()) {
      abnormal = true;
      break;
    }
    const double a_aff =
        std::min({1.0, boundary_step(sol.s, aff.ds), boundary_step(sol.lambda, aff.dlam)});
    const double mu_aff = (sol.s + a_aff * aff.ds).dot(sol.lambda + a_aff * aff.dlam) /
                          static_cast<double>(ni);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const Eigen::ArrayXd rc = -sl + sigma * mu - aff.ds.array() * aff.dlam.array();
    const Direction dir = direction(rc);
    if (!dir.dz.allFinite() || !dir.dlam.allFinite() || !dir.ds.allFinite()) {
      abnormal = true;
      break;
    }
    const double ap = std::min(1.0, 0.99 * boundary_step(sol.s, dir.ds));
    const double ad = std::min(1.0, 0.99 * boundary_step(sol.lambda, dir.dlam));

    sol.z += ap * dir.dz;
    sol.s += ap * dir.ds;
    sol.y += ad * dir.dy;
    sol.lambda += ad * dir.dlam;
  }

  // The best iterate is the answer; how the loop stopped only matters when
  // that iterate is not acceptable.
  const bool certified = certified_infeasible();
  sol = best;
  if (sol.kkt_residual <= cfg.eps_accept) {
    sol.status = Status::optimal;
  } else if (certified || (!abnormal && last_gap_rel <= 1e3 * cfg.eps &&
                           std::max(last_rp_rel, last_ri_rel) > 1e3 * cfg.eps)) {
    sol.status = Status::infeasible;
  } else if (abnormal) {
    sol.status = Status::numerical_error;
  } else {
    sol.status = Status::iteration_limit;
  }
  return sol;
}

}  // namespace drflow::qp
