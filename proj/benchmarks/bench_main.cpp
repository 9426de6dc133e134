#include <random>

#include <Eigen/Dense>
#include <benchmark/benchmark.h>

#include "drflow/dro_opf.hpp"
#include "drflow/estimator.hpp"
#include "drflow/feeder.hpp"
#include "drflow/learning_loop.hpp"
#include "drflow/participants.hpp"

namespace {

const drflow::FeederModel& feeder15() {
  static const drflow::FeederModel model = drflow::load_feeder(DRFLOW_DATA_DIR "/feeder15");
  return model;
}

const drflow::FeederModel& feeder141() {
  static const drflow::FeederModel model = drflow::load_feeder(DRFLOW_DATA_DIR "/feeder141");
  return model;
}

drflow::History lined_history(int samples) {
  drflow::History h;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> price(20.0, 120.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int k = 0; k < samples; ++k) {
    const double lambda = price(rng);
    h.append(lambda, 2.0 * 0.007 * lambda + 0.3 + noise(rng));
  }
  return h;
}

drflow::OpfInstance full_instance(const drflow::FeederModel& fm) {
  const int m = fm.node_count();
  drflow::DrEstimates dr;
  dr.beta0 = Eigen::VectorXd::Zero(m);
  dr.beta1 = Eigen::VectorXd::Constant(m, 1.0 / 150.0);
  dr.active.assign(m, 1);
  dr.active[0] = 0;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd sd(m);
  for (int i = 0; i < m; ++i) sd(i) = 0.05 * fm.nodes()[i].dP_forecast;
  const drflow::MomentEstimate mom =
      drflow::make_moments(mu, sd.cwiseProduct(sd).asDiagonal());
  drflow::MarketScenario market;
  market.omega = 50.0;
  drflow::RiskConfig risk;
  risk.network_mode = drflow::NetworkMode::full;
  return drflow::make_instance(fm, dr, mom, market, risk);
}

void bm_fit_lse(benchmark::State& state) {
  const drflow::History h = lined_history(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(drflow::fit_lse(h, 0.98));
  }
}

void bm_dro_margin(benchmark::State& state) {
  const int d = 15;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Eigen::VectorXd mu(d), a(d);
  Eigen::MatrixXd root(d, d);
  for (int i = 0; i < d; ++i) {
    mu(i) = u01(rng);
    a(i) = u01(rng) - 0.5;
    for (int j = 0; j < d; ++j) root(i, j) = u01(rng) - 0.5;
  }
  const drflow::MomentEstimate mom = drflow::make_moments(mu, root * root.transpose());
  for (auto _ : state) {
    benchmark::DoNotOptimize(drflow::dro_margin(a, mom, 0.1));
  }
}

void bm_lindistflow_141(benchmark::State& state) {
  const drflow::FeederModel& fm = feeder141();
  const int m = fm.node_count();
  Eigen::VectorXd netP(m), netQ(m);
  for (int i = 0; i < m; ++i) {
    netP(i) = fm.nodes()[i].dP_forecast;
    netQ(i) = fm.nodes()[i].dQ_forecast;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(drflow::solve_lindistflow(fm, netP, netQ));
  }
}

void bm_solve_opf_full_15(benchmark::State& state) {
  const drflow::OpfInstance instance = full_instance(feeder15());
  for (auto _ : state) {
    benchmark::DoNotOptimize(drflow::solve_opf(instance));
  }
}

void bm_loop_step(benchmark::State& state) {
  const drflow::FeederModel& fm = feeder15();
  const drflow::ParticipantSet ps =
      drflow::load_participants(DRFLOW_DATA_DIR "/feeder15/participants.csv", fm.node_count());
  drflow::LoopConfig cfg;
  cfg.steps = 1;
  cfg.seed = 3;
  const drflow::ExogenousStreams st = drflow::draw_streams(ps, cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(drflow::run_loop(fm, ps, drflow::OracleCase::oblivious,
                                              drflow::NetworkMode::full, cfg, st, nullptr));
  }
}

BENCHMARK(bm_fit_lse)->Arg(50)->Arg(500);
BENCHMARK(bm_dro_margin);
BENCHMARK(bm_lindistflow_141);
BENCHMARK(bm_solve_opf_full_15)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_loop_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
