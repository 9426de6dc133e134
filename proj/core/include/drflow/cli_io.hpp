#pragma once

#include <string>
#include <vector>

#include "drflow/learning_loop.hpp"

namespace drflow {

namespace detail {

/// SHA-256 of a byte buffer, lowercase hex.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& bytes);
/// Throws io_error when the file cannot be read.
std::string sha256_file(const std::string& path);

/// Shortest round-trip decimal representation ("%.17g").
std::string format_double(double v);

}  // namespace detail

struct CliOptions {
  std::string feeder = "data/feeder15";
  std::string participants;  // empty resolves to <feeder>/participants.csv
  std::vector<OracleCase> cases = {OracleCase::oracle, OracleCase::beta_oracle,
                                   OracleCase::omega_oracle, OracleCase::oblivious};
  std::vector<NetworkMode> modes = {NetworkMode::none, NetworkMode::flows,
                                    NetworkMode::voltage, NetworkMode::full};
  int steps = 500;
  unsigned long long seed = 1;
  double eta_v = 0.1;
  double eta_g = 0.1;
  double eta_f = 0.1;
  double kappa = 25.0;
  double price_lo = 30.0;
  double price_hi = 200.0;
  std::string out_dir = "out";

  std::string participants_path() const;
  LoopConfig loop_config() const;
};

/// exit_code < 0 means run with the parsed options; otherwise print-and-exit
/// has already happened (help text or a usage error).
struct ParseResult {
  int exit_code = -1;
  CliOptions options;
};

ParseResult parse_cli(int argc, const char* const* argv);

/// Rebuilds the options block recorded in a manifest written by run_cli.
CliOptions options_from_manifest(const std::string& manifest_path);

std::string run_basename(OracleCase c, NetworkMode mode);

void write_trace_csv(const std::string& path, const RunTrace& trace);
void write_solution_csv(const std::string& path, const RunTrace& trace);
void write_estimator_csv(const std::string& path, const RunTrace& trace,
                         const std::vector<int>& participant_nodes);

/// Runs the configured experiment and writes every artifact under out_dir:
/// per-run trace/solution/estimator CSVs, per-mode plot CSVs, summary.json
/// and manifest.json. Returns the relative names of the files written.
std::vector<std::string> run_cli(const CliOptions& options);

}  // namespace drflow
