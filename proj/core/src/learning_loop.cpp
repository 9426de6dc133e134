#include "drflow/learning_loop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>

#include "drflow/errors.hpp"

namespace drflow {

OracleCase parse_case(const std::string& name) {
  if (name == "oracle") return OracleCase::oracle;
  if (name == "beta_oracle") return OracleCase::beta_oracle;
  if (name == "omega_oracle") return OracleCase::omega_oracle;
  if (name == "oblivious") return OracleCase::oblivious;
  throw config_error("unknown case '" + name + "'");
}

const char* to_string(OracleCase c) {
  switch (c) {
    case OracleCase::oracle: return "oracle";
    case OracleCase::beta_oracle: return "beta_oracle";
    case OracleCase::omega_oracle: return "omega_oracle";
    case OracleCase::oblivious: return "oblivious";
  }
  return "?";
}

double price_from_target(double x_target, double beta0_hat, double beta1_hat) {
  if (!(beta1_hat > 0.0)) return 0.0;
  return std::max((x_target - beta0_hat) / (2.0 * beta1_hat), 0.0);
}

double price_from_duals(double pi_p, double gamma, double pi_q, double kappa) {
  return std::max(pi_p + gamma * pi_q - kappa, 0.0);
}

namespace {

struct SplitMix64 {
  std::uint64_t s;
  std::uint64_t next() {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

void validate_config(const LoopConfig& config) {
  if (config.steps < 1) throw config_error("the loop needs at least one step");
  if (!(config.omega_hi >= config.omega_lo) || !(config.omega_lo >= 0.0))
    throw config_error("the wholesale price range must satisfy 0 <= lo <= hi");
  if (!(config.kappa >= 0.0)) throw config_error("kappa must be nonnegative");
  if (!(config.forgetting > 0.0 && config.forgetting <= 1.0))
    throw config_error("forgetting factor must lie in (0, 1]");
  if (config.warmup_steps < 0) throw config_error("warmup step count must be nonnegative");
  config.risk.validate();
}

MomentEstimate prior_moments(const FeederModel& feeder, const ParticipantSet& participants,
                             const PriorConfig& prior) {
  const int m = feeder.node_count();
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(m, m);
  for (const ParticipantTruth& p : participants.truths) {
    const double s = prior.sigma_frac * feeder.nodes()[p.node].dP_forecast;
    sigma(p.node, p.node) = s * s;
  }
  return make_moments(Eigen::VectorXd::Zero(m), sigma);
}

}  // namespace

ExogenousStreams draw_streams(const ParticipantSet& participants, const LoopConfig& config) {
  validate_config(config);
  ExogenousStreams st;
  SplitMix64 root{config.seed};
  const std::uint64_t omega_seed = root.next();
  const std::uint64_t noise_seed = root.next();
  SplitMix64 om{omega_seed};
  st.omega.reserve(config.steps);
  for (int t = 0; t < config.steps; ++t)
    st.omega.push_back(config.omega_lo +
                       (config.omega_hi - config.omega_lo) * unit_double(om.next()));
  NoiseSpec spec;
  spec.covariance = participants.covariance;
  spec.family = config.family;
  spec.seed = noise_seed;
  NoiseSampler sampler(spec);
  std::mt19937_64 rng(noise_seed);
  st.eps.reserve(config.steps);
  for (int t = 0; t < config.steps; ++t) st.eps.push_back(sampler.draw(rng));
  return st;
}

double regret_energy(const Eigen::VectorXd& beta0_hat, const Eigen::VectorXd& beta1_hat,
                     const Eigen::VectorXd& beta0_true, const Eigen::VectorXd& beta1_true,
                     const Eigen::VectorXd& x_star) {
  const Eigen::Index m = x_star.size();
  if (beta0_hat.size() != m || beta1_hat.size() != m || beta0_true.size() != m ||
      beta1_true.size() != m)
    throw config_error("regret inputs must share one dimension");
  double z = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(beta1_hat(i) > 0.0) || !(beta1_true(i) > 0.0)) continue;
    const double x = x_star(i);
    z += (1.0 / (2.0 * beta1_hat(i)) - 1.0 / (2.0 * beta1_true(i))) * x * x -
         (beta0_hat(i) / (2.0 * beta1_hat(i)) - beta0_true(i) / (2.0 * beta1_true(i))) * x;
  }
  return z;
}

double regret_balancing(const Eigen::VectorXd& alpha, const Eigen::VectorXd& c2,
                        const Eigen::MatrixXd& sigma_hat, const Eigen::MatrixXd& sigma_true) {
  if (alpha.size() != c2.size()) throw config_error("regret inputs must share one dimension");
  const double see_hat = sigma_hat.sum();
  const double see_true = sigma_true.sum();
  double z = 0.0;
  for (Eigen::Index i = 0; i < alpha.size(); ++i)
    z += c2(i) * alpha(i) * alpha(i) * (see_hat - see_true);
  return z;
}

RegretSeries regret_metrics(const RunTrace& run, const RunTrace& oracle) {
  if (run.steps.size() != oracle.steps.size())
    throw config_error("regret series require runs of equal length");
  RegretSeries rs;
  double ce = 0.0, co = 0.0;
  for (std::size_t k = 0; k < run.steps.size(); ++k) {
    const double de = run.steps[k].expC - oracle.steps[k].expC;
    const double dob = run.steps[k].obsC - oracle.steps[k].obsC;
    ce += de * de;
    co += dob * dob;
    rs.zeta_exp_cum.push_back(ce);
    rs.zeta_obs_cum.push_back(co);
  }
  return rs;
}

BeliefState select_estimate(const FeederModel& feeder, const ParticipantSet& participants,
                            OracleCase c, const LoopConfig& config,
                            const std::vector<History>& history, int t) {
  const int m = feeder.node_count();
  if (static_cast<int>(history.size()) != m)
    throw config_error("history size disagrees with the feeder");
  BeliefState bs;
  bs.dr.beta0 = Eigen::VectorXd::Zero(m);
  bs.dr.beta1 = Eigen::VectorXd::Zero(m);
  bs.dr.active.assign(m, 0);
  bs.used_prior.assign(m, 0);
  const bool true_beta = (c == OracleCase::oracle || c == OracleCase::beta_oracle);
  const bool true_moments = (c == OracleCase::oracle || c == OracleCase::omega_oracle);

  for (const ParticipantTruth& p : participants.truths) {
    bs.dr.active[p.node] = 1;
    if (true_beta) {
      bs.dr.beta0(p.node) = p.beta0;
      bs.dr.beta1(p.node) = p.beta1;
      continue;
    }
    std::optional<SensitivityEstimate> fit;
    if (history[p.node].size() >= config.warmup_steps)
      fit = fit_lse(history[p.node], config.forgetting);
    if (fit) {
      bs.dr.beta0(p.node) = fit->beta0_hat;
      bs.dr.beta1(p.node) = fit->beta1_hat;
    } else {
      bs.dr.beta0(p.node) = config.prior.beta0;
      bs.dr.beta1(p.node) = config.prior.beta1;
      bs.used_prior[p.node] = 1;
    }
  }

  if (true_moments) {
    bs.moments = make_moments(Eigen::VectorXd::Zero(m), participants.covariance);
    return bs;
  }
  const int k = (m > 0 && !participants.truths.empty())
                    ? history[participants.truths.front().node].size()
                    : 0;
  if (t <= config.warmup_steps || k < 2) {
    bs.moments = prior_moments(feeder, participants, config.prior);
    return bs;
  }
  std::vector<Eigen::VectorXd> resid(k, Eigen::VectorXd::Zero(m));
  for (const ParticipantTruth& p : participants.truths) {
    const History& h = history[p.node];
    const double b0 = bs.dr.beta0(p.node);
    const double b1 = bs.dr.beta1(p.node);
    for (int tau = 0; tau < k; ++tau)
      resid[tau](p.node) = h.x[tau] - (2.0 * b1 * h.lambda[tau] + b0);
  }
  if (auto em = empirical_moments(resid)) {
    bs.moments = *em;
  } else {
    bs.moments = prior_moments(feeder, participants, config.prior);
  }
  return bs;
}

RunTrace run_loop(const FeederModel& feeder, const ParticipantSet& participants, OracleCase c,
                  NetworkMode mode, const LoopConfig& config, const ExogenousStreams& streams,
                  const RunTrace* oracle_companion) {
  validate_config(config);
  const int m = feeder.node_count();
  if (static_cast<int>(streams.omega.size()) < config.steps ||
      static_cast<int>(streams.eps.size()) < config.steps)
    throw config_error("exogenous streams are shorter than the configured horizon");
  if (oracle_companion &&
      static_cast<int>(oracle_companion->steps.size()) < config.steps)
    throw config_error("oracle companion trace is shorter than the configured horizon");

  Eigen::VectorXd beta0_true = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd beta1_true = Eigen::VectorXd::Zero(m);
  for (const ParticipantTruth& p : participants.truths) {
    beta0_true(p.node) = p.beta0;
    beta1_true(p.node) = p.beta1;
  }
  Eigen::VectorXd c2_vec = Eigen::VectorXd::Zero(m);
  for (int node : feeder.generator_nodes()) c2_vec(node) = feeder.nodes()[node].generator->c2;
  double sum_dP = 0.0;
  for (const Node& nd : feeder.nodes()) sum_dP += nd.dP_forecast;

  RiskConfig risk = config.risk;
  risk.network_mode = mode;

  RunTrace trace;
  trace.oracle_case = c;
  trace.mode = mode;
  trace.steps.reserve(config.steps);
  std::vector<History> history(m);
  std::vector<double> usage;
  usage.reserve(config.steps);
  double cum_exp = 0.0, cum_obs = 0.0;

  for (int t = 1; t <= config.steps; ++t) {
    const auto tic = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.t = t;
    rec.omega = streams.omega[t - 1];

    BeliefState bs = select_estimate(feeder, participants, c, config, history, t);
    MarketScenario market;
    market.omega = rec.omega;
    market.kappa = config.kappa;
    const OpfInstance inst = make_instance(feeder, bs.dr, bs.moments, market, risk);
    try {
      rec.dispatch = solve_opf(inst);
    } catch (const infeasible_error& e) {
      throw infeasible_error("step " + std::to_string(t) + ": " + e.what());
    }
    std::vector<char> excluded(m, 0);
    for (int i : rec.dispatch.excluded_nodes) excluded[i] = 1;

    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
    for (const ParticipantTruth& p : participants.truths) {
      if (excluded[p.node]) continue;
      lambda(p.node) = price_from_target(rec.dispatch.x_star(p.node), bs.dr.beta0(p.node),
                                         bs.dr.beta1(p.node));
    }
    const Eigen::VectorXd& eps = streams.eps[t - 1];
    const Eigen::VectorXd x_obs = response_given_noise(participants.truths, lambda, eps);
    for (const ParticipantTruth& p : participants.truths)
      history[p.node].append(lambda(p.node), x_obs(p.node));

    rec.expC = rec.dispatch.objective;
    const double eps_sum = eps.sum();
    double obsC = rec.omega * (rec.dispatch.gP(0) - rec.dispatch.alpha(0) * eps_sum);
    for (int node : feeder.generator_nodes()) {
      const GeneratorParams& gp = *feeder.nodes()[node].generator;
      const double g = rec.dispatch.gP(node) - rec.dispatch.alpha(node) * eps_sum;
      obsC += gp.c2 * g * g + gp.c1 * g + gp.c0;
    }
    for (const ParticipantTruth& p : participants.truths)
      obsC += (config.kappa + lambda(p.node)) * x_obs(p.node);
    rec.obsC = obsC;

    rec.zeta_en = regret_energy(bs.dr.beta0, bs.dr.beta1, beta0_true, beta1_true,
                                rec.dispatch.x_star);
    rec.zeta_bal =
        regret_balancing(rec.dispatch.alpha, c2_vec, bs.moments.sigma_hat,
                         participants.covariance);
    if (oracle_companion) {
      const StepRecord& orc = oracle_companion->steps[t - 1];
      const double de = rec.expC - orc.expC;
      const double dob = rec.obsC - orc.obsC;
      cum_exp += de * de;
      cum_obs += dob * dob;
    }
    rec.zeta_exp_cum = cum_exp;
    rec.zeta_obs_cum = cum_obs;

    rec.node.assign(m, StepNodeRecord{});
    for (const ParticipantTruth& p : participants.truths) {
      StepNodeRecord& nr = rec.node[p.node];
      nr.lambda = lambda(p.node);
      nr.lambda_dual = price_from_duals(rec.dispatch.pi_p(p.node),
                                        feeder.gamma_vec()(p.node),
                                        rec.dispatch.pi_q(p.node), config.kappa);
      nr.x_star = rec.dispatch.x_star(p.node);
      nr.x_obs = x_obs(p.node);
      nr.used_prior = bs.used_prior[p.node] != 0;
      nr.excluded = excluded[p.node] != 0;
      const std::optional<SensitivityEstimate> fit = fit_lse(history[p.node], config.forgetting);
      nr.fit_valid = fit.has_value();
      const double b0 = fit ? fit->beta0_hat : bs.dr.beta0(p.node);
      const double b1 = fit ? fit->beta1_hat : bs.dr.beta1(p.node);
      nr.beta0_hat = b0;
      nr.beta1_hat = b1;
      SensitivityEstimate se;
      se.beta0_hat = b0;
      se.beta1_hat = b1;
      se.sample_count = history[p.node].size();
      const std::vector<double> res = residuals(history[p.node], se);
      double mean = 0.0;
      for (double v : res) mean += v;
      mean /= static_cast<double>(res.size());
      double var = 0.0;
      for (double v : res) var += (v - mean) * (v - mean);
      var /= static_cast<double>(res.size());
      nr.fit_residual_mean = mean;
      nr.fit_residual_var = var;
    }
    rec.moments_mu_mean = bs.moments.mu_hat.mean();
    rec.moments_sigma_trace = bs.moments.sigma_hat.trace();

    usage.push_back(sum_dP > 0.0 ? 100.0 * rec.dispatch.x_star.sum() / sum_dP : 0.0);
    rec.solve_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    trace.steps.push_back(std::move(rec));
  }

  std::vector<double> sorted = usage;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t ns = sorted.size();
  trace.usage_median = (ns % 2 == 1) ? sorted[ns / 2]
                                     : 0.5 * (sorted[ns / 2 - 1] + sorted[ns / 2]);
  trace.usage_min = sorted.front();
  trace.usage_max = sorted.back();
  double sum_s = 0.0, max_s = 0.0;
  for (const StepRecord& r : trace.steps) {
    sum_s += r.solve_seconds;
    max_s = std::max(max_s, r.solve_seconds);
  }
  trace.step_seconds_mean = sum_s / static_cast<double>(trace.steps.size());
  trace.step_seconds_max = max_s;
  return trace;
}

ExperimentResult run_experiment(const FeederModel& feeder, const ParticipantSet& participants,
                                const std::vector<OracleCase>& cases,
                                const std::vector<NetworkMode>& modes,
                                const LoopConfig& config) {
  const ExogenousStreams streams = draw_streams(participants, config);
  ExperimentResult res;
  res.omega_stream = streams.omega;
  res.eps_stream = streams.eps;
  for (NetworkMode mode : modes) {
    RunTrace oracle_run =
        run_loop(feeder, participants, OracleCase::oracle, mode, config, streams, nullptr);
    std::vector<RunTrace> rest;
    for (OracleCase c : cases) {
      if (c == OracleCase::oracle) continue;
      rest.push_back(run_loop(feeder, participants, c, mode, config, streams, &oracle_run));
    }
    res.runs.push_back(std::move(oracle_run));
    for (RunTrace& r : rest) res.runs.push_back(std::move(r));
  }
  return res;
}

}  // namespace drflow
