#pragma once

// Online least-squares estimation of the DR sensitivities, residual and
// moment tracking, and the diagnostic quantities of the regret analysis.

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace drflow {

/// Per-node price/response observation lists, append-only.
struct History {
  std::vector<double> lambda;  ///< $/MWh
  std::vector<double> x;       ///< MW

  void append(double price, double response) {
    lambda.push_back(price);
    x.push_back(response);
  }
  int size() const { return static_cast<int>(lambda.size()); }
};

struct SensitivityEstimate {
  double beta0_hat = 0.0;
  double beta1_hat = 0.0;
  int sample_count = 0;
};

struct MomentEstimate {
  Eigen::VectorXd mu_hat;     ///< m
  Eigen::MatrixXd sigma_hat;  ///< m x m, PSD after the floor
  Eigen::MatrixXd omega_hat;  ///< (m+1) x (m+1) second-order moment matrix
};

struct EstimatorDiagnostics {
  Eigen::Matrix2d F = Eigen::Matrix2d::Zero();  ///< Fisher information
  double L = 0.0;                               ///< sum (lambda - mean)^2
  std::optional<Eigen::Vector2d> B_t;           ///< (beta1, beta0) estimation error
};

/// Least squares for x = 2 b1 lambda + b0, intercept b0 = xbar - 2 b1 lbar
/// (the first-order-condition form; it zeroes the residual mean). Returns
/// nullopt when fewer than 2 observations exist or the price variance is
/// degenerate; the caller falls back to its prior. `forgetting` in (0, 1]
/// applies exponential down-weighting of old samples; 1 disables it.
std::optional<SensitivityEstimate> fit_lse(const History& history, double forgetting = 1.0);

/// eps_tau = x_tau - (2 b1 lambda_tau + b0) for every recorded observation.
std::vector<double> residuals(const History& history, const SensitivityEstimate& estimate);

/// Projects onto the PSD cone by clipping negative eigenvalues at zero.
Eigen::MatrixXd psd_floor(const Eigen::MatrixXd& S);

/// Builds a MomentEstimate from given moments: floors sigma and assembles
/// omega = [[sigma + mu mu^T, mu], [mu^T, 1]].
MomentEstimate make_moments(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma);

/// Empirical moments of k residual vectors observed by time t = k+1:
/// mu = (1/k) sum eps, sigma = (1/(k-1)) sum (eps-mu)(eps-mu)^T. Requires
/// k >= 2 so the covariance denominator is positive; otherwise nullopt and
/// the caller keeps its warm-up moments.
std::optional<MomentEstimate> empirical_moments(const std::vector<Eigen::VectorXd>& residual_vectors);

/// F = [[sum l^2, sum l], [sum l, k]], L = sum (l - mean)^2; B_t = beta_hat -
/// beta when the truth (beta1, beta0) is supplied and a fit exists.
EstimatorDiagnostics diagnostics(const History& history,
                                 const std::optional<Eigen::Vector2d>& truth = std::nullopt);

/// Warm-up values used by the operator before enough data exists (t < 4).
struct PriorConfig {
  double beta1 = 0.005;      ///< MW per $/MWh
  double beta0 = 0.0;        ///< MW
  double sigma_frac = 0.05;  ///< prior residual std as a fraction of dP forecast
};

}  // namespace drflow
