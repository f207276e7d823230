#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spsr/baselines.hpp"
#include "spsr/model.hpp"
#include "spsr/scenarios.hpp"

namespace spsr {

/// Batch experiment description: scenarios x algorithms x seeds, optionally
/// swept along one axis. Loadable from a key-value text file; CLI flags
/// override individual fields.
struct ExperimentConfig {
  std::vector<std::string> scenarios = {"grid"};
  std::vector<std::string> algorithms = {"dmp-lfw-p"};
  std::vector<uint64_t> seeds = {1};
  int iters = 2000;
  StepSchedule schedule = StepSchedule::constant(0.05);
  std::string sweep_axis = "none";  // none | lambda | eta
  std::vector<double> sweep_values;
  std::string outdir = "results";
  int threads = 1;
  bool timings = false;  // write measured wall_ms instead of 0 (breaks byte-identity)
  bool dump_state = false;  // per-run flow and gradient CSVs of the final state
  uint64_t scenario_seed = 1;
};

ExperimentConfig load_experiment_config(const std::string& path);

/// Scenario by preset name or by path to a scenario file.
Instance instance_for(const std::string& scenario, uint64_t scenario_seed);

/// Executes every (scenario, algorithm, seed) run on a work pool and writes
/// results.csv (one row per iteration), summary.csv (converged J, normalized
/// per scenario) and plots.txt (column-to-figure map). Returns a process exit
/// code: 0 ok, 1 config error.
int cmd_run(const ExperimentConfig& cfg);

/// Lambda axis: rerun converged optimization per transition-rate value.
/// Eta axis: rerun per preference value and emit the (avg QoS, avg latency)
/// frontier of the converged states.
int cmd_sweep(const ExperimentConfig& cfg);

/// Self-checks on one scenario: finite-difference gradients, protocol-oracle
/// equivalence, the cost-quality identity, and the fixed-point residual.
/// `inject_bug` perturbs one protocol gradient (test fixture) and must make
/// the equivalence check fail. Returns 0 or 2 (verification failure).
int cmd_verify(const std::string& scenario, uint64_t seed, bool fast, bool inject_bug);

int cmd_gen_scenario(const std::string& name, uint64_t seed, const std::string& out_path);

// CSV helpers shared with the tests
std::string format_double(double v);
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace spsr
