#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "drflow/errors.hpp"
#include "drflow/learning_loop.hpp"

using namespace drflow;

namespace {

const char* data_dir() { return DRFLOW_DATA_DIR; }

FeederModel& feeder15() {
  static FeederModel fm = load_feeder(std::string(data_dir()) + "/feeder15");
  return fm;
}

ParticipantSet noiseless_participants(const FeederModel& fm, double beta1 = 1.0 / 150.0) {
  ParticipantSet ps;
  const int m = fm.node_count();
  ps.covariance = Eigen::MatrixXd::Zero(m, m);
  for (int i = 1; i < m; ++i) {
    ParticipantTruth t;
    t.node = i;
    t.beta0 = 0.0;
    t.beta1 = beta1;
    t.sigma = 0.0;
    ps.truths.push_back(t);
  }
  return ps;
}

ParticipantSet noisy_participants() {
  static ParticipantSet ps = load_participants(
      std::string(data_dir()) + "/feeder15/participants.csv", feeder15().node_count());
  return ps;
}

LoopConfig short_config(int steps, unsigned long long seed) {
  LoopConfig c;
  c.steps = steps;
  c.seed = seed;
  c.kappa = 25.0;
  c.omega_lo = 30.0;
  c.omega_hi = 200.0;
  return c;
}

}  // namespace

TEST_CASE("case names round trip") {
  for (const char* name : {"oracle", "beta_oracle", "omega_oracle", "oblivious"}) {
    CHECK(std::string(to_string(parse_case(name))) == name);
  }
  CHECK_THROWS_AS(parse_case("clairvoyant"), config_error);
}

TEST_CASE("price helpers") {
  CHECK(price_from_target(1.0, 0.0, 1.0 / 150.0) == doctest::Approx(75.0).epsilon(1e-12));
  CHECK(price_from_target(0.0, 0.0, 0.005) == 0.0);
  CHECK(price_from_target(0.1, 0.5, 0.005) == 0.0);  // target below the intercept
  CHECK(price_from_target(1.0, 0.0, 0.0) == 0.0);
  CHECK(price_from_target(1.0, 0.0, -0.2) == 0.0);

  CHECK(price_from_duals(30.0, 0.5, 2.0, 25.0) == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(price_from_duals(20.0, 0.0, 0.0, 25.0) == 0.0);
}

TEST_CASE("the broadcast price is half the dual price at the dispatched target") {
  // x = beta1 (pi_p + gamma pi_q - kappa) gives lambda = (x - beta0)/(2 beta1)
  // = lambda_dual / 2 for any positive-slope node.
  const double beta1 = 1.0 / 150.0;
  const double dual = price_from_duals(30.0, 0.5, 2.0, 25.0);
  const double x = beta1 * dual;
  CHECK(x == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(price_from_target(x, 0.0, beta1) == doctest::Approx(dual / 2.0).epsilon(1e-12));
}

TEST_CASE("energy regret of a half-confident estimate") {
  Eigen::VectorXd b0h = Eigen::VectorXd::Zero(2), b1h = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd b0t = Eigen::VectorXd::Zero(2), b1t = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  b1h(1) = 0.5;
  b1t(1) = 1.0;
  x(1) = 1.0;
  CHECK(regret_energy(b0h, b1h, b0t, b1t, x) == doctest::Approx(0.5).epsilon(1e-12));

  // Exact estimates carry no regret.
  CHECK(regret_energy(b0t, b1t, b0t, b1t, x) == 0.0);

  // Nodes without a positive true slope are skipped.
  b1t(1) = 0.0;
  CHECK(regret_energy(b0h, b1h, b0t, b1t, x) == 0.0);

  Eigen::VectorXd wrong = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(regret_energy(b0h, b1h, b0t, b1t, wrong), config_error);
}

TEST_CASE("balancing regret of an inflated variance belief") {
  Eigen::VectorXd alpha(1), c2(1);
  alpha << 1.0;
  c2 << 2.0;
  Eigen::MatrixXd sh(1, 1), st(1, 1);
  sh << 3.0;
  st << 1.0;
  CHECK(regret_balancing(alpha, c2, sh, st) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(regret_balancing(alpha, c2, st, st) == 0.0);
  Eigen::VectorXd wrong(2);
  CHECK_THROWS_AS(regret_balancing(wrong, c2, sh, st), config_error);
}

TEST_CASE("regret series accumulate squared objective gaps") {
  RunTrace orc, run;
  for (double v : {1.0, 2.0}) {
    StepRecord s;
    s.expC = v;
    s.obsC = 0.0;
    orc.steps.push_back(s);
  }
  {
    StepRecord s;
    s.expC = 3.0;
    s.obsC = 2.0;
    run.steps.push_back(s);
    s.expC = 3.0;
    s.obsC = 1.0;
    run.steps.push_back(s);
  }
  const RegretSeries rs = regret_metrics(run, orc);
  REQUIRE(rs.zeta_exp_cum.size() == 2);
  CHECK(rs.zeta_exp_cum[0] == doctest::Approx(4.0));
  CHECK(rs.zeta_exp_cum[1] == doctest::Approx(5.0));
  CHECK(rs.zeta_obs_cum[0] == doctest::Approx(4.0));
  CHECK(rs.zeta_obs_cum[1] == doctest::Approx(5.0));

  RunTrace shorter;
  shorter.steps.push_back(StepRecord{});
  CHECK_THROWS_AS(regret_metrics(shorter, orc), config_error);

  const RegretSeries self = regret_metrics(orc, orc);
  CHECK(self.zeta_exp_cum.back() == 0.0);
  CHECK(self.zeta_obs_cum.back() == 0.0);
}

TEST_CASE("exogenous streams are reproducible and respect their ranges") {
  const ParticipantSet ps = noisy_participants();
  const LoopConfig cfg = short_config(12, 42);
  const ExogenousStreams a = draw_streams(ps, cfg);
  const ExogenousStreams b = draw_streams(ps, cfg);
  REQUIRE(a.omega.size() == 12);
  REQUIRE(a.eps.size() == 12);
  for (int t = 0; t < 12; ++t) {
    CHECK(a.omega[t] == b.omega[t]);
    CHECK(a.omega[t] >= cfg.omega_lo);
    CHECK(a.omega[t] <= cfg.omega_hi);
    CHECK((a.eps[t] - b.eps[t]).norm() == 0.0);
    CHECK(a.eps[t](0) == 0.0);  // the root carries no disturbance
    CHECK(a.eps[t].size() == feeder15().node_count());
  }

  LoopConfig other = cfg;
  other.seed = 43;
  const ExogenousStreams c = draw_streams(ps, other);
  bool differs = false;
  for (int t = 0; t < 12 && !differs; ++t) differs = c.omega[t] != a.omega[t];
  CHECK(differs);
}

TEST_CASE("loop configuration validation") {
  const ParticipantSet ps = noisy_participants();
  LoopConfig c = short_config(0, 1);
  CHECK_THROWS_AS(draw_streams(ps, c), config_error);
  c = short_config(3, 1);
  c.omega_lo = 50;
  c.omega_hi = 40;
  CHECK_THROWS_AS(draw_streams(ps, c), config_error);
  c = short_config(3, 1);
  c.kappa = -1;
  CHECK_THROWS_AS(draw_streams(ps, c), config_error);
  c = short_config(3, 1);
  c.forgetting = 0.0;
  CHECK_THROWS_AS(draw_streams(ps, c), config_error);
  c = short_config(3, 1);
  c.warmup_steps = -1;
  CHECK_THROWS_AS(draw_streams(ps, c), config_error);

  const LoopConfig good = short_config(3, 1);
  const ExogenousStreams st = draw_streams(ps, good);
  LoopConfig longer = good;
  longer.steps = 5;
  CHECK_THROWS_AS(run_loop(feeder15(), ps, OracleCase::oracle, NetworkMode::none, longer, st,
                           nullptr),
                  config_error);
}

TEST_CASE("belief selection by case") {
  const FeederModel& fm = feeder15();
  const ParticipantSet ps = noisy_participants();
  const LoopConfig cfg = short_config(10, 1);
  const int m = fm.node_count();
  std::vector<History> empty(m);

  const BeliefState oracle = select_estimate(fm, ps, OracleCase::oracle, cfg, empty, 1);
  CHECK(oracle.dr.beta1(1) == doctest::Approx(1.0 / 150.0));
  CHECK(oracle.dr.active[1] == 1);
  CHECK(oracle.dr.active[0] == 0);
  CHECK((oracle.moments.sigma_hat - ps.covariance).norm() < 1e-12);
  CHECK(oracle.moments.mu_hat.norm() == 0.0);

  const BeliefState blind = select_estimate(fm, ps, OracleCase::oblivious, cfg, empty, 1);
  CHECK(blind.dr.beta1(1) == doctest::Approx(cfg.prior.beta1));
  CHECK(blind.used_prior[1] == 1);
  const double s1 = cfg.prior.sigma_frac * fm.nodes()[1].dP_forecast;
  CHECK(blind.moments.sigma_hat(1, 1) == doctest::Approx(s1 * s1));

  const BeliefState half_beta = select_estimate(fm, ps, OracleCase::beta_oracle, cfg, empty, 1);
  CHECK(half_beta.dr.beta1(1) == doctest::Approx(1.0 / 150.0));
  CHECK(half_beta.moments.sigma_hat(1, 1) == doctest::Approx(s1 * s1));

  const BeliefState half_omega = select_estimate(fm, ps, OracleCase::omega_oracle, cfg, empty, 1);
  CHECK(half_omega.dr.beta1(1) == doctest::Approx(cfg.prior.beta1));
  CHECK((half_omega.moments.sigma_hat - ps.covariance).norm() < 1e-12);

  // A history on an exact line is recovered once past the warm-up gate.
  std::vector<History> lined(m);
  for (const ParticipantTruth& p : ps.truths) {
    for (double l : {40.0, 90.0, 150.0}) lined[p.node].append(l, 2.0 * 0.01 * l + 0.2);
  }
  const BeliefState fit = select_estimate(fm, ps, OracleCase::oblivious, cfg, lined, 5);
  CHECK(fit.dr.beta1(1) == doctest::Approx(0.01).epsilon(1e-10));
  CHECK(fit.dr.beta0(1) == doctest::Approx(0.2).epsilon(1e-10));
  CHECK(fit.used_prior[1] == 0);
  CHECK(fit.moments.sigma_hat.norm() < 1e-12);

  std::vector<History> wrong(m - 1);
  CHECK_THROWS_AS(select_estimate(fm, ps, OracleCase::oracle, cfg, wrong, 1), config_error);
}

TEST_CASE("noiseless oblivious run locks onto the truth after warm-up") {
  const FeederModel& fm = feeder15();
  const ParticipantSet ps = noiseless_participants(fm);
  const LoopConfig cfg = short_config(8, 7);
  const ExperimentResult res = run_experiment(
      fm, ps, {OracleCase::oblivious}, {NetworkMode::none}, cfg);
  REQUIRE(res.runs.size() == 2);
  CHECK(res.runs[0].oracle_case == OracleCase::oracle);
  const RunTrace& run = res.runs[1];
  CHECK(run.oracle_case == OracleCase::oblivious);
  REQUIRE(static_cast<int>(run.steps.size()) == cfg.steps);

  for (const StepRecord& rec : run.steps) {
    for (const ParticipantTruth& p : ps.truths) {
      const StepNodeRecord& nr = rec.node[p.node];
      if (rec.t <= cfg.warmup_steps) {
        CHECK(nr.used_prior);
      } else {
        CHECK_FALSE(nr.used_prior);
        CHECK(nr.fit_valid);
        CHECK(std::abs(nr.beta1_hat - 1.0 / 150.0) < 1e-9);
        CHECK(std::abs(nr.beta0_hat) < 1e-9);
        CHECK(std::abs(nr.fit_residual_mean) < 1e-9);
        CHECK(nr.fit_residual_var < 1e-18);
      }
    }
    if (rec.t > cfg.warmup_steps) {
      CHECK(std::abs(rec.obsC - rec.expC) <= 1e-8 * (1.0 + std::abs(rec.expC)));
      CHECK(std::abs(rec.zeta_en) < 1e-6);
    } else {
      // The prior overstates the response cost, so early regret is positive.
      CHECK(rec.zeta_en > 0.0);
    }
  }
}

TEST_CASE("the oracle run carries zero learning regret") {
  const FeederModel& fm = feeder15();
  const ParticipantSet ps = noisy_participants();
  const LoopConfig cfg = short_config(4, 11);
  const ExperimentResult res =
      run_experiment(fm, ps, {OracleCase::oracle}, {NetworkMode::none}, cfg);
  REQUIRE(res.runs.size() == 1);
  for (const StepRecord& rec : res.runs[0].steps) {
    CHECK(rec.zeta_en == 0.0);
    CHECK(rec.zeta_bal == 0.0);
    CHECK(rec.zeta_exp_cum == 0.0);
    CHECK(rec.zeta_obs_cum == 0.0);
  }
}

TEST_CASE("runs of one experiment share the exogenous draw") {
  const FeederModel& fm = feeder15();
  const ParticipantSet ps = noisy_participants();
  const LoopConfig cfg = short_config(3, 5);
  const ExperimentResult res = run_experiment(
      fm, ps, {OracleCase::oblivious, OracleCase::omega_oracle}, {NetworkMode::none}, cfg);
  REQUIRE(res.runs.size() == 3);
  const ExogenousStreams st = draw_streams(ps, cfg);
  for (int t = 0; t < cfg.steps; ++t) {
    CHECK(res.omega_stream[t] == st.omega[t]);
    for (const RunTrace& run : res.runs) CHECK(run.steps[t].omega == st.omega[t]);
  }
}

TEST_CASE("identical configurations reproduce bit-identical traces") {
  const FeederModel& fm = feeder15();
  const ParticipantSet ps = noisy_participants();
  const LoopConfig cfg = short_config(3, 9);
  const ExperimentResult a =
      run_experiment(fm, ps, {OracleCase::oblivious}, {NetworkMode::none}, cfg);
  const ExperimentResult b =
      run_experiment(fm, ps, {OracleCase::oblivious}, {NetworkMode::none}, cfg);
  REQUIRE(a.runs.size() == b.runs.size());
  for (std::size_t r = 0; r < a.runs.size(); ++r) {
    REQUIRE(a.runs[r].steps.size() == b.runs[r].steps.size());
    for (std::size_t t = 0; t < a.runs[r].steps.size(); ++t) {
      const StepRecord& sa = a.runs[r].steps[t];
      const StepRecord& sb = b.runs[r].steps[t];
      CHECK(sa.expC == sb.expC);
      CHECK(sa.obsC == sb.obsC);
      CHECK(sa.zeta_obs_cum == sb.zeta_obs_cum);
      for (int i = 0; i < fm.node_count(); ++i) {
        CHECK(sa.node[i].lambda == sb.node[i].lambda);
        CHECK(sa.node[i].x_obs == sb.node[i].x_obs);
      }
    }
  }
}

TEST_CASE("trace bookkeeping invariants hold on a noisy run") {
  const FeederModel& fm = feeder15();
  const ParticipantSet ps = noisy_participants();
  const LoopConfig cfg = short_config(6, 13);
  const ExperimentResult res =
      run_experiment(fm, ps, {OracleCase::oblivious}, {NetworkMode::none}, cfg);
  for (const RunTrace& run : res.runs) {
    CHECK(run.usage_min <= run.usage_median);
    CHECK(run.usage_median <= run.usage_max);
    CHECK(run.step_seconds_mean <= run.step_seconds_max + 1e-12);
    double prev_exp = 0.0, prev_obs = 0.0;
    for (const StepRecord& rec : run.steps) {
      CHECK(rec.zeta_exp_cum >= prev_exp);
      CHECK(rec.zeta_obs_cum >= prev_obs);
      prev_exp = rec.zeta_exp_cum;
      prev_obs = rec.zeta_obs_cum;
      for (const ParticipantTruth& p : ps.truths) {
        const StepNodeRecord& nr = rec.node[p.node];
        if (nr.fit_valid) CHECK(std::abs(nr.fit_residual_mean) <= 1e-8);
        CHECK(nr.lambda >= 0.0);
      }
      // The regret comparison agrees with the series helper.
      if (run.oracle_case != OracleCase::oracle) {
        const RegretSeries rs = regret_metrics(run, res.runs[0]);
        CHECK(rec.zeta_exp_cum == rs.zeta_exp_cum[rec.t - 1]);
        CHECK(rec.zeta_obs_cum == rs.zeta_obs_cum[rec.t - 1]);
      }
    }
  }
}
