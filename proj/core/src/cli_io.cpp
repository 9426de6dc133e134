#include "drflow/cli_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "drflow/errors.hpp"

#ifndef DRFLOW_VERSION
#define DRFLOW_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace drflow {

namespace detail {

namespace {

constexpr std::uint32_t kSha256K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
    0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
    0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
    0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
    0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
    0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
    0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

struct Sha256 {
  std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  unsigned char buf[64];
  std::size_t fill = 0;
  std::uint64_t total = 0;

  static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

  void compress(const unsigned char* p) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
    std::uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = hh + S1 + ch + kSha256K[i] + w[i];
      const std::uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = S0 + maj;
      hh = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += f;
    h[6] += g;
    h[7] += hh;
  }

  void update(const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    total += n;
    while (n > 0) {
      const std::size_t take = std::min(n, sizeof(buf) - fill);
      std::memcpy(buf + fill, p, take);
      fill += take;
      p += take;
      n -= take;
      if (fill == sizeof(buf)) {
        compress(buf);
        fill = 0;
      }
    }
  }

  std::string hex() {
    const std::uint64_t bits = total * 8;
    const unsigned char pad = 0x80;
    const unsigned char zero = 0;
    update(&pad, 1);
    while (fill != 56) update(&zero, 1);
    unsigned char len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len, 8);
    char out[65];
    for (int i = 0; i < 8; ++i) std::snprintf(out + 8 * i, 9, "%08x", h[i]);
    return std::string(out, 64);
  }
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256 s;
  s.update(data, size);
  return s.hex();
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read '" + path + "'");
  Sha256 s;
  char chunk[65536];
  while (in) {
    in.read(chunk, sizeof(chunk));
    s.update(chunk, static_cast<std::size_t>(in.gcount()));
  }
  return s.hex();
}

std::string format_double(double v) {
  char out[64];
  std::snprintf(out, sizeof(out), "%.17g", v);
  return out;
}

}  // namespace detail

std::string CliOptions::participants_path() const {
  if (!participants.empty()) return participants;
  return feeder + "/participants.csv";
}

LoopConfig CliOptions::loop_config() const {
  LoopConfig lc;
  lc.steps = steps;
  lc.seed = seed;
  lc.kappa = kappa;
  lc.omega_lo = price_lo;
  lc.omega_hi = price_hi;
  lc.risk.eta_v = eta_v;
  lc.risk.eta_g = eta_g;
  lc.risk.eta_f = eta_f;
  return lc;
}

namespace {

std::vector<OracleCase> all_cases() {
  return {OracleCase::oracle, OracleCase::beta_oracle, OracleCase::omega_oracle,
          OracleCase::oblivious};
}

std::vector<NetworkMode> all_modes() {
  return {NetworkMode::none, NetworkMode::flows, NetworkMode::voltage, NetworkMode::full};
}

void parse_price_range(const std::string& text, CliOptions& o) {
  const std::size_t colon = text.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= text.size())
    throw config_error("price range must be written as lo:hi");
  std::size_t used = 0;
  try {
    o.price_lo = std::stod(text.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument("");
    const std::string hi = text.substr(colon + 1);
    o.price_hi = std::stod(hi, &used);
    if (used != hi.size()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw config_error("price range must be written as lo:hi");
  }
  if (!(o.price_hi >= o.price_lo) || !(o.price_lo >= 0.0))
    throw config_error("the wholesale price range must satisfy 0 <= lo <= hi");
}

void validate_options(const CliOptions& o) {
  o.loop_config().risk.validate();
  if (!(o.kappa >= 0.0)) throw config_error("kappa must be nonnegative");
  if (o.cases.empty() || o.modes.empty()) throw config_error("nothing selected to run");
}

}  // namespace

ParseResult parse_cli(int argc, const char* const* argv) {
  ParseResult pr;
  CliOptions& o = pr.options;
  CLI::App app{"closed-loop distributionally robust dispatch with online DR learning"};
  app.name("drflow");
  std::string case_arg = "all";
  std::string mode_arg = "all";
  std::string price_range = "30:200";
  app.add_option("--feeder", o.feeder, "feeder data directory")->capture_default_str();
  app.add_option("--participants", o.participants,
                 "participants csv, defaults to <feeder>/participants.csv");
  app.add_option("--case", case_arg, "oracle, beta_oracle, omega_oracle, oblivious or all")
      ->capture_default_str();
  app.add_option("--network-mode", mode_arg, "none, flows, voltage, full or all")
      ->capture_default_str();
  app.add_option("--steps", o.steps, "number of market intervals")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--seed", o.seed, "seed of the exogenous streams")->capture_default_str();
  app.add_option("--eta-v", o.eta_v, "voltage chance level, in (0, 1/2]")->capture_default_str();
  app.add_option("--eta-g", o.eta_g, "generator chance level, in (0, 1/2]")
      ->capture_default_str();
  app.add_option("--eta-f", o.eta_f, "flow chance level, in (0, 1/2]")->capture_default_str();
  app.add_option("--kappa", o.kappa, "DR availability price, $/MWh")->capture_default_str();
  app.add_option("--price-range", price_range, "wholesale price range lo:hi, $/MWh")
      ->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    pr.exit_code = (app.exit(e) == 0) ? 0 : 2;
    return pr;
  }
  try {
    o.cases = (case_arg == "all") ? all_cases() : std::vector<OracleCase>{parse_case(case_arg)};
    o.modes = (mode_arg == "all") ? all_modes()
                                  : std::vector<NetworkMode>{parse_network_mode(mode_arg)};
    parse_price_range(price_range, o);
    validate_options(o);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    pr.exit_code = 2;
  }
  return pr;
}

CliOptions options_from_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw io_error("cannot read '" + manifest_path + "'");
  ordered_json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw config_error("malformed manifest: " + std::string(e.what()));
  }
  if (!doc.contains("config")) throw config_error("manifest has no config block");
  const auto& c = doc["config"];
  CliOptions o;
  try {
    o.feeder = c.at("feeder").get<std::string>();
    o.participants = c.at("participants").get<std::string>();
    o.cases.clear();
    for (const auto& name : c.at("cases")) o.cases.push_back(parse_case(name.get<std::string>()));
    o.modes.clear();
    for (const auto& name : c.at("modes"))
      o.modes.push_back(parse_network_mode(name.get<std::string>()));
    o.steps = c.at("steps").get<int>();
    o.seed = c.at("seed").get<unsigned long long>();
    o.eta_v = c.at("eta_v").get<double>();
    o.eta_g = c.at("eta_g").get<double>();
    o.eta_f = c.at("eta_f").get<double>();
    o.kappa = c.at("kappa").get<double>();
    o.price_lo = c.at("price_range").at(0).get<double>();
    o.price_hi = c.at("price_range").at(1).get<double>();
    o.out_dir = c.at("out_dir").get<std::string>();
  } catch (const std::exception& e) {
    throw config_error("malformed manifest config: " + std::string(e.what()));
  }
  validate_options(o);
  return o;
}

std::string run_basename(OracleCase c, NetworkMode mode) {
  return std::string(to_string(c)) + "_" + to_string(mode);
}

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw io_error("cannot write '" + path + "'");
}

void append_int(std::string& s, long long v) {
  char out[32];
  std::snprintf(out, sizeof(out), "%lld", v);
  s += out;
}

void append_d(std::string& s, double v) {
  s += ',';
  s += detail::format_double(v);
}

}  // namespace

void write_trace_csv(const std::string& path, const RunTrace& trace) {
  std::string s =
      "t,omega,node,lambda,x_star,x_obs,expC,obsC,zeta_en,zeta_bal,zeta_exp_cum,zeta_obs_cum\n";
  s.reserve(s.size() + trace.steps.size() * 16 * 160);
  for (const StepRecord& r : trace.steps) {
    for (std::size_t i = 0; i < r.node.size(); ++i) {
      append_int(s, r.t);
      append_d(s, r.omega);
      s += ',';
      append_int(s, static_cast<long long>(i));
      append_d(s, r.node[i].lambda);
      append_d(s, r.node[i].x_star);
      append_d(s, r.node[i].x_obs);
      append_d(s, r.expC);
      append_d(s, r.obsC);
      append_d(s, r.zeta_en);
      append_d(s, r.zeta_bal);
      append_d(s, r.zeta_exp_cum);
      append_d(s, r.zeta_obs_cum);
      s += '\n';
    }
  }
  write_text(path, s);
}

void write_solution_csv(const std::string& path, const RunTrace& trace) {
  std::string s = "t,node,x_star,gP,gQ,u,pi_p,pi_q,lambda\n";
  s.reserve(s.size() + trace.steps.size() * 16 * 120);
  for (const StepRecord& r : trace.steps) {
    const DispatchSolution& d = r.dispatch;
    for (int i = 0; i < d.x_star.size(); ++i) {
      append_int(s, r.t);
      s += ',';
      append_int(s, i);
      append_d(s, d.x_star(i));
      append_d(s, d.gP(i));
      append_d(s, d.gQ(i));
      append_d(s, d.u(i));
      append_d(s, d.pi_p(i));
      append_d(s, d.pi_q(i));
      append_d(s, r.node[static_cast<std::size_t>(i)].lambda);
      s += '\n';
    }
  }
  write_text(path, s);
}

void write_estimator_csv(const std::string& path, const RunTrace& trace,
                         const std::vector<int>& participant_nodes) {
  std::string s = "t,node,beta0_hat,beta1_hat,residual_mean,residual_var\n";
  s.reserve(s.size() + trace.steps.size() * participant_nodes.size() * 100);
  for (const StepRecord& r : trace.steps) {
    for (int i : participant_nodes) {
      const StepNodeRecord& nr = r.node[static_cast<std::size_t>(i)];
      append_int(s, r.t);
      s += ',';
      append_int(s, i);
      append_d(s, nr.beta0_hat);
      append_d(s, nr.beta1_hat);
      append_d(s, nr.fit_residual_mean);
      append_d(s, nr.fit_residual_var);
      s += '\n';
    }
  }
  write_text(path, s);
}

namespace {

const RunTrace* find_run(const ExperimentResult& res, OracleCase c, NetworkMode mode) {
  for (const RunTrace& r : res.runs)
    if (r.oracle_case == c && r.mode == mode) return &r;
  return nullptr;
}

void write_plot_files(const std::string& out_dir, NetworkMode mode, const RunTrace& orc,
                      const RunTrace& obl, std::vector<std::string>& files) {
  const std::string suffix = std::string(to_string(mode)) + ".csv";
  {
    std::string s = "t,expC_oracle,expC_oblivious,gap_abs\n";
    for (std::size_t k = 0; k < obl.steps.size(); ++k) {
      append_int(s, obl.steps[k].t);
      append_d(s, orc.steps[k].expC);
      append_d(s, obl.steps[k].expC);
      append_d(s, std::abs(obl.steps[k].expC - orc.steps[k].expC));
      s += '\n';
    }
    const std::string name = "plot_objective_gap_" + suffix;
    write_text(out_dir + "/" + name, s);
    files.push_back(name);
  }
  {
    const std::size_t m = obl.steps.empty() ? 0 : obl.steps.front().node.size();
    std::string s = "t";
    for (std::size_t i = 1; i < m; ++i) {
      s += ",node_";
      append_int(s, static_cast<long long>(i));
    }
    s += '\n';
    for (std::size_t k = 0; k < obl.steps.size(); ++k) {
      append_int(s, obl.steps[k].t);
      for (std::size_t i = 1; i < m; ++i)
        append_d(s, obl.steps[k].node[i].lambda - orc.steps[k].node[i].lambda);
      s += '\n';
    }
    const std::string name = "plot_price_diff_" + suffix;
    write_text(out_dir + "/" + name, s);
    files.push_back(name);
  }
  {
    std::string s = "t,zeta_obs,zeta_exp,env_lo=20*log(t),env_hi=200*log(t)\n";
    for (const StepRecord& r : obl.steps) {
      append_int(s, r.t);
      append_d(s, r.zeta_obs_cum);
      append_d(s, r.zeta_exp_cum);
      append_d(s, 20.0 * std::log(static_cast<double>(r.t)));
      append_d(s, 200.0 * std::log(static_cast<double>(r.t)));
      s += '\n';
    }
    const std::string name = "plot_regret_" + suffix;
    write_text(out_dir + "/" + name, s);
    files.push_back(name);
  }
  {
    std::string s = "t,mu_mean,sigma_trace\n";
    for (const StepRecord& r : obl.steps) {
      append_int(s, r.t);
      append_d(s, r.moments_mu_mean);
      append_d(s, r.moments_sigma_trace);
      s += '\n';
    }
    const std::string name = "plot_moments_" + suffix;
    write_text(out_dir + "/" + name, s);
    files.push_back(name);
  }
  {
    std::string s = "t,delta_eps,delta_learning\n";
    for (std::size_t k = 0; k < obl.steps.size(); ++k) {
      const double d_eps = orc.steps[k].obsC - orc.steps[k].expC;
      const double d_all = obl.steps[k].obsC - obl.steps[k].expC;
      append_int(s, obl.steps[k].t);
      append_d(s, d_eps);
      append_d(s, d_all - d_eps);
      s += '\n';
    }
    const std::string name = "plot_learning_error_" + suffix;
    write_text(out_dir + "/" + name, s);
    files.push_back(name);
  }
}

std::string utc_now() {
  const std::time_t tt = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char out[32];
  std::strftime(out, sizeof(out), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return out;
}

}  // namespace

std::vector<std::string> run_cli(const CliOptions& options) {
  validate_options(options);
  const auto wall_tic = std::chrono::steady_clock::now();
  const FeederModel feeder = load_feeder(options.feeder);
  const ParticipantSet participants =
      load_participants(options.participants_path(), feeder.node_count());
  std::vector<int> participant_nodes;
  for (const ParticipantTruth& p : participants.truths) participant_nodes.push_back(p.node);

  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw io_error("cannot create output directory '" + options.out_dir + "'");

  const ExperimentResult res =
      run_experiment(feeder, participants, options.cases, options.modes, options.loop_config());

  std::vector<std::string> files;
  for (const RunTrace& run : res.runs) {
    const std::string base = run_basename(run.oracle_case, run.mode);
    write_trace_csv(options.out_dir + "/" + base + "_trace.csv", run);
    files.push_back(base + "_trace.csv");
    write_solution_csv(options.out_dir + "/" + base + "_solution.csv", run);
    files.push_back(base + "_solution.csv");
    write_estimator_csv(options.out_dir + "/" + base + "_estimator.csv", run, participant_nodes);
    files.push_back(base + "_estimator.csv");
  }
  for (NetworkMode mode : options.modes) {
    const RunTrace* orc = find_run(res, OracleCase::oracle, mode);
    const RunTrace* obl = find_run(res, OracleCase::oblivious, mode);
    if (orc && obl) write_plot_files(options.out_dir, mode, *orc, *obl, files);
  }

  ordered_json summary;
  summary["runs"] = ordered_json::array();
  for (const RunTrace& run : res.runs) {
    ordered_json jr;
    jr["case"] = to_string(run.oracle_case);
    jr["mode"] = to_string(run.mode);
    jr["steps"] = static_cast<int>(run.steps.size());
    jr["usage_percent"] = {{"median", run.usage_median},
                           {"min", run.usage_min},
                           {"max", run.usage_max}};
    const StepRecord& last = run.steps.back();
    jr["regret"] = {{"zeta_exp_cum", last.zeta_exp_cum}, {"zeta_obs_cum", last.zeta_obs_cum}};
    int excluded_steps = 0;
    for (const StepRecord& r : run.steps)
      if (!r.dispatch.excluded_nodes.empty()) ++excluded_steps;
    jr["excluded_steps"] = excluded_steps;
    jr["timing_seconds"] = {{"step_mean", run.step_seconds_mean},
                            {"step_max", run.step_seconds_max}};
    summary["runs"].push_back(jr);
  }
  write_text(options.out_dir + "/summary.json", summary.dump(2) + "\n");
  files.push_back("summary.json");

  ordered_json manifest;
  manifest["version"] = DRFLOW_VERSION;
  manifest["created_utc"] = utc_now();
  ordered_json cfg;
  cfg["feeder"] = options.feeder;
  cfg["participants"] = options.participants_path();
  cfg["cases"] = ordered_json::array();
  for (OracleCase c : options.cases) cfg["cases"].push_back(to_string(c));
  cfg["modes"] = ordered_json::array();
  for (NetworkMode m : options.modes) cfg["modes"].push_back(to_string(m));
  cfg["steps"] = options.steps;
  cfg["seed"] = options.seed;
  cfg["eta_v"] = options.eta_v;
  cfg["eta_g"] = options.eta_g;
  cfg["eta_f"] = options.eta_f;
  cfg["kappa"] = options.kappa;
  cfg["price_range"] = {options.price_lo, options.price_hi};
  cfg["out_dir"] = options.out_dir;
  manifest["config"] = cfg;
  ordered_json inputs;
  for (const char* name : {"meta.csv", "nodes.csv", "lines.csv"}) {
    const std::string path = options.feeder + "/" + name;
    inputs[path] = detail::sha256_file(path);
  }
  inputs[options.participants_path()] = detail::sha256_file(options.participants_path());
  {
    const fs::path cov = fs::path(options.participants_path()).parent_path() / "covariance.csv";
    if (fs::exists(cov)) inputs[cov.string()] = detail::sha256_file(cov.string());
  }
  manifest["inputs"] = inputs;
  ordered_json outputs;
  for (const std::string& name : files)
    outputs[name] = detail::sha256_file(options.out_dir + "/" + name);
  manifest["outputs"] = outputs;
  ordered_json timing;
  timing["total_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_tic).count();
  timing["runs"] = ordered_json::array();
  for (const RunTrace& run : res.runs) {
    timing["runs"].push_back({{"case", to_string(run.oracle_case)},
                              {"mode", to_string(run.mode)},
                              {"step_mean", run.step_seconds_mean},
                              {"step_max", run.step_seconds_max}});
  }
  manifest["timing"] = timing;
  write_text(options.out_dir + "/manifest.json", manifest.dump(2) + "\n");
  files.push_back("manifest.json");
  return files;
}

}  // namespace drflow
