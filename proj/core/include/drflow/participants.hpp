#pragma once

// Ground-truth simulator of DR participants: noisy responses to broadcast
// prices and the realized demands the operator observes.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace drflow {

struct ParticipantTruth {
  int node = -1;
  double beta0 = 0.0;  ///< MW
  double beta1 = 0.0;  ///< MW per $/MWh, >= 0
  double sigma = 0.0;  ///< response std-dev, MW
};

enum class NoiseFamily { gaussian, two_point, uniform };

struct NoiseSpec {
  /// m x m PSD disturbance covariance; diagonal equals sigma_i^2, root
  /// row/column zero.
  Eigen::MatrixXd covariance;
  NoiseFamily family = NoiseFamily::gaussian;
  std::uint64_t seed = 0;
};

/// Maps the participant's discomfort-cost parameters to the linear DR model:
/// beta1 = 1/(2 nu1), beta0 = -nu0/nu1. Requires nu1 > 0.
std::pair<double, double> from_cost_params(double nu0, double nu1);

/// h(beta, lambda) = 2 beta1 lambda + beta0.
double expected_response(const ParticipantTruth& truth, double lambda);

/// Draws zero-mean vectors with the spec's covariance. The family fixes the
/// scalar driver pushed through a PSD factor of the covariance: gaussian,
/// symmetric two-point (+-1), or uniform on [-sqrt(3), sqrt(3)]; all are
/// zero-mean with unit variance, so the covariance is matched exactly.
class NoiseSampler {
 public:
  explicit NoiseSampler(NoiseSpec spec);
  Eigen::VectorXd draw(std::mt19937_64& rng) const;
  const NoiseSpec& spec() const { return spec_; }
  int dim() const { return static_cast<int>(factor_.rows()); }

 private:
  NoiseSpec spec_;
  Eigen::MatrixXd factor_;  // F with F F^T = covariance
};

/// Deterministic response core: x_i = 2 beta1_i lambda_i + beta0_i + eps_i at
/// participant nodes, eps_i elsewhere. lambda and eps are m-vectors.
Eigen::VectorXd response_given_noise(const std::vector<ParticipantTruth>& truths,
                                     const Eigen::VectorXd& lambda,
                                     const Eigen::VectorXd& eps);

/// Observed response x_t = h(beta, lambda) + eps with eps drawn from the
/// noise spec. Reproducible under a fixed rng state.
Eigen::VectorXd respond(const std::vector<ParticipantTruth>& truths,
                        const Eigen::VectorXd& lambda, const NoiseSpec& noise,
                        std::mt19937_64& rng);

/// d = dP_forecast - expected_response - eps; the round trip
/// x = dP_forecast - d recovers expected_response + eps up to rounding.
double realized_demand(double dP_forecast, double expected_response, double eps);

/// Reactive counterpart: dQ_forecast - gamma (expected_response + eps).
double realized_demand_q(double dQ_forecast, double gamma, double expected_response,
                         double eps);

/// One sample of the worst-case two-point distribution of y = a^T eps matched
/// to (mean, var): mass eta at mean + sqrt(var (1-eta)/eta), mass 1-eta at
/// mean - sqrt(var eta/(1-eta)). Attains the DRO margin violation exactly.
double sample_extremal_scalar(double mean, double var, double eta, std::mt19937_64& rng);

struct ParticipantSet {
  std::vector<ParticipantTruth> truths;  ///< sorted by node id
  Eigen::MatrixXd covariance;            ///< m x m; diagonal when no covariance.csv
};

/// Reads participants.csv (header node,beta0,beta1,sigma) and, when present,
/// a dense covariance.csv next to it. node_count fixes the dimension m.
ParticipantSet load_participants(const std::string& path, int node_count);

}  // namespace drflow
