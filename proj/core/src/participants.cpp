#include "drflow/participants.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "drflow/detail/csv.hpp"
#include "drflow/errors.hpp"

namespace drflow {

std::pair<double, double> from_cost_params(double nu0, double nu1) {
  if (nu1 <= 0) throw config_error("nu1 must be positive (convex discomfort)");
  return {-nu0 / nu1, 1.0 / (2.0 * nu1)};
}

double expected_response(const ParticipantTruth& truth, double lambda) {
  return 2.0 * truth.beta1 * lambda + truth.beta0;
}

NoiseSampler::NoiseSampler(NoiseSpec spec) : spec_(std::move(spec)) {
  const Eigen::MatrixXd& S = spec_.covariance;
  if (S.rows() != S.cols()) throw config_error("covariance must be square");
  if (!S.isApprox(S.transpose(), 1e-9)) throw config_error("covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-9 * scale)
    throw config_error("covariance is not positive semidefinite");
  factor_ = es.eigenvectors() *
            es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::VectorXd NoiseSampler::draw(std::mt19937_64& rng) const {
  const int m = dim();
  Eigen::VectorXd z(m);
  switch (spec_.family) {
    case NoiseFamily::gaussian: {
      std::normal_distribution<double> nd(0.0, 1.0);
      for (int i = 0; i < m; ++i) z(i) = nd(rng);
      break;
    }
    case NoiseFamily::two_point: {
      for (int i = 0; i < m; ++i) z(i) = (rng() >> 63) ? 1.0 : -1.0;
      break;
    }
    case NoiseFamily::uniform: {
      const double half = std::sqrt(3.0);
      std::uniform_real_distribution<double> ud(-half, half);
      for (int i = 0; i < m; ++i) z(i) = ud(rng);
      break;
    }
  }
  return factor_ * z;
}

Eigen::VectorXd response_given_noise(const std::vector<ParticipantTruth>& truths,
                                     const Eigen::VectorXd& lambda,
                                     const Eigen::VectorXd& eps) {
  if (lambda.size() != eps.size())
    throw config_error("lambda and eps dimensions must match");
  Eigen::VectorXd x = eps;
  for (const ParticipantTruth& p : truths) {
    if (p.node < 0 || p.node >= lambda.size())
      throw config_error("participant node out of range");
    x(p.node) += expected_response(p, lambda(p.node));
  }
  return x;
}

Eigen::VectorXd respond(const std::vector<ParticipantTruth>& truths,
                        const Eigen::VectorXd& lambda, const NoiseSpec& noise,
                        std::mt19937_64& rng) {
  for (int i = 0; i < lambda.size(); ++i)
    if (lambda(i) < 0) throw config_error("broadcast prices must be nonnegative");
  NoiseSampler sampler(noise);
  if (sampler.dim() != lambda.size())
    throw config_error("noise covariance dimension does not match lambda");
  return response_given_noise(truths, lambda, sampler.draw(rng));
}

double realized_demand(double dP_forecast, double expected_response, double eps) {
  return dP_forecast - expected_response - eps;
}

double realized_demand_q(double dQ_forecast, double gamma, double expected_response,
                         double eps) {
  return dQ_forecast - gamma * (expected_response + eps);
}

double sample_extremal_scalar(double mean, double var, double eta, std::mt19937_64& rng) {
  if (eta <= 0 || eta > 0.5) throw config_error("eta must lie in (0, 0.5]");
  if (var < 0) throw config_error("variance must be nonnegative");
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  if (ud(rng) < eta) return mean + std::sqrt(var * (1.0 - eta) / eta);
  return mean - std::sqrt(var * eta / (1.0 - eta));
}

namespace {

Eigen::MatrixXd read_covariance(const std::string& path, int m) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open file: " + path);
  Eigen::MatrixXd S(m, m);
  std::string line;
  int r = 0;
  while (std::getline(in, line)) {
    std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    if (r >= m) throw io_error(path + ": more than " + std::to_string(m) + " rows");
    auto fields = detail::split_csv_line(stripped);
    if (static_cast<int>(fields.size()) != m)
      throw io_error(path + " row " + std::to_string(r) + ": expected " + std::to_string(m) +
                     " fields");
    for (int c = 0; c < m; ++c)
      S(r, c) = detail::parse_double(detail::trim(fields[c]),
                                     path + " row " + std::to_string(r));
    ++r;
  }
  if (r != m) throw io_error(path + ": expected " + std::to_string(m) + " rows");
  return S;
}

}  // namespace

ParticipantSet load_participants(const std::string& path, int node_count) {
  using namespace detail;
  CsvTable t = read_csv(path);
  require_header(t, "node,beta0,beta1,sigma", path);

  ParticipantSet ps;
  std::vector<bool> seen(node_count, false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + " line " + std::to_string(t.line_numbers[r]);
    if (row.size() != 4) throw io_error(ctx + ": expected 4 fields");
    ParticipantTruth p;
    p.node = parse_int(row[0], ctx);
    p.beta0 = parse_double(row[1], ctx);
    p.beta1 = parse_double(row[2], ctx);
    p.sigma = parse_double(row[3], ctx);
    if (p.node <= 0 || p.node >= node_count)
      throw io_error(ctx + ": node must be a non-root feeder node");
    if (seen[p.node]) throw io_error(ctx + ": duplicate participant node");
    seen[p.node] = true;
    if (p.beta1 < 0) throw io_error(ctx + ": beta1 must be >= 0");
    if (p.sigma < 0) throw io_error(ctx + ": sigma must be >= 0");
    ps.truths.push_back(p);
  }
  std::sort(ps.truths.begin(), ps.truths.end(),
            [](const ParticipantTruth& a, const ParticipantTruth& b) { return a.node < b.node; });

  ps.covariance = Eigen::MatrixXd::Zero(node_count, node_count);
  for (const auto& p : ps.truths) ps.covariance(p.node, p.node) = p.sigma * p.sigma;

  const std::filesystem::path cov_path =
      std::filesystem::path(path).parent_path() / "covariance.csv";
  if (std::filesystem::exists(cov_path)) {
    Eigen::MatrixXd S = read_covariance(cov_path.string(), node_count);
    for (int i = 0; i < node_count; ++i) {
      const double want = ps.covariance(i, i);
      if (std::abs(S(i, i) - want) > 1e-8 * std::max(1.0, want))
        throw io_error(cov_path.string() + ": diagonal entry " + std::to_string(i) +
                       " does not equal sigma^2 from participants.csv");
    }
    // Symmetry and PSD are enforced by NoiseSampler at use time as well.
    if (!S.isApprox(S.transpose(), 1e-9))
      throw io_error(cov_path.string() + ": matrix must be symmetric");
    ps.covariance = std::move(S);
  }
  return ps;
}

}  // namespace drflow
