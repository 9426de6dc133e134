#include "drflow/estimator.hpp"

#include <cmath>

#include "drflow/errors.hpp"

namespace drflow {

std::optional<SensitivityEstimate> fit_lse(const History& history, double forgetting) {
  if (forgetting <= 0 || forgetting > 1.0)
    throw config_error("forgetting factor must lie in (0, 1]");
  const int k = history.size();
  if (k < 2) return std::nullopt;

  // Weight w^(k-1-tau) so the newest sample has weight 1.
  double W = 0, sl = 0, sx = 0;
  for (int tau = 0; tau < k; ++tau) {
    const double w = std::pow(forgetting, k - 1 - tau);
    W += w;
    sl += w * history.lambda[tau];
    sx += w * history.x[tau];
  }
  const double lbar = sl / W;
  const double xbar = sx / W;
  double sll = 0, slx = 0;
  for (int tau = 0; tau < k; ++tau) {
    const double w = std::pow(forgetting, k - 1 - tau);
    const double dl = history.lambda[tau] - lbar;
    sll += w * dl * dl;
    slx += w * dl * (history.x[tau] - xbar);
  }
  if (sll <= 1e-10 * (1.0 + lbar * lbar)) return std::nullopt;  // degenerate design

  SensitivityEstimate est;
  est.beta1_hat = slx / (2.0 * sll);
  est.beta0_hat = xbar - 2.0 * est.beta1_hat * lbar;
  est.sample_count = k;
  return est;
}

std::vector<double> residuals(const History& history, const SensitivityEstimate& estimate) {
  std::vector<double> r(history.size());
  for (int tau = 0; tau < history.size(); ++tau)
    r[tau] = history.x[tau] -
             (2.0 * estimate.beta1_hat * history.lambda[tau] + estimate.beta0_hat);
  return r;
}

Eigen::MatrixXd psd_floor(const Eigen::MatrixXd& S) {
  Eigen::MatrixXd sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.eigenvalues().minCoeff() >= 0) return sym;
  Eigen::MatrixXd out = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
                        es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

MomentEstimate make_moments(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != mu.size() || sigma.cols() != mu.size())
    throw config_error("moment dimensions do not match");
  MomentEstimate m;
  m.mu_hat = mu;
  m.sigma_hat = psd_floor(sigma);
  const auto d = mu.size();
  m.omega_hat.resize(d + 1, d + 1);
  m.omega_hat.topLeftCorner(d, d) = m.sigma_hat + mu * mu.transpose();
  m.omega_hat.topRightCorner(d, 1) = mu;
  m.omega_hat.bottomLeftCorner(1, d) = mu.transpose();
  m.omega_hat(d, d) = 1.0;
  return m;
}

std::optional<MomentEstimate> empirical_moments(
    const std::vector<Eigen::VectorXd>& residual_vectors) {
  const int k = static_cast<int>(residual_vectors.size());
  if (k < 2) return std::nullopt;
  const auto d = residual_vectors[0].size();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  for (const auto& e : residual_vectors) {
    if (e.size() != d) throw config_error("residual vectors must share a dimension");
    mu += e;
  }
  mu /= static_cast<double>(k);  // 1/(t-1) with t = k+1
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : residual_vectors) {
    const Eigen::VectorXd c = e - mu;
    sigma += c * c.transpose();
  }
  sigma /= static_cast<double>(k - 1);  // 1/(t-2)
  return make_moments(mu, sigma);
}

EstimatorDiagnostics diagnostics(const History& history,
                                 const std::optional<Eigen::Vector2d>& truth) {
  EstimatorDiagnostics d;
  const int k = history.size();
  double sl = 0, sll = 0;
  for (double l : history.lambda) {
    sl += l;
    sll += l * l;
  }
  d.F << sll, sl, sl, static_cast<double>(k);
  if (k > 0) {
    const double lbar = sl / k;
    for (double l : history.lambda) d.L += (l - lbar) * (l - lbar);
  }
  if (truth) {
    if (auto est = fit_lse(history))
      d.B_t = Eigen::Vector2d(est->beta1_hat - (*truth)(0), est->beta0_hat - (*truth)(1));
  }
  return d;
}

}  // namespace drflow
