// spsr: flow-level simulator and decentralized optimizer for AI service
// placement, selection and request routing in mobile networks.
//
// Subcommands: run, sweep, verify, gen-scenario. Exit codes: 0 success,
// 1 configuration error, 2 verification failure.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spsr/runner.hpp"

namespace {

std::vector<uint64_t> parse_seeds(const std::string& text) {
  std::vector<uint64_t> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoull(item));
  return out;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

spsr::StepSchedule parse_step(const std::string& text) {
  auto values = parse_values(text.substr(text.find(':') + 1));
  if (text.rfind("constant", 0) == 0 && values.size() == 1)
    return spsr::StepSchedule::constant(values[0]);
  if (text.rfind("diminishing", 0) == 0 && values.size() == 2)
    return spsr::StepSchedule::diminishing(values[0], values[1]);
  throw spsr::ConfigError("step must be constant:<a> or diminishing:<a>:<b>");
}

void apply_common_flags(spsr::ExperimentConfig& cfg, const std::string& config_path,
                        const std::string& scenarios, const std::string& algorithms,
                        const std::string& seeds, int iters, const std::string& step,
                        const std::string& outdir, int threads, bool timings) {
  if (!config_path.empty()) cfg = spsr::load_experiment_config(config_path);
  if (!scenarios.empty()) {
    cfg.scenarios.clear();
    std::string item;
    std::istringstream ss(scenarios);
    while (std::getline(ss, item, ','))
      if (!item.empty()) cfg.scenarios.push_back(item);
  }
  if (!algorithms.empty()) {
    cfg.algorithms.clear();
    std::string item;
    std::istringstream ss(algorithms);
    while (std::getline(ss, item, ','))
      if (!item.empty()) cfg.algorithms.push_back(item);
  }
  if (!seeds.empty()) cfg.seeds = parse_seeds(seeds);
  if (iters >= 0) cfg.iters = iters;
  if (!step.empty()) cfg.schedule = parse_step(step);
  if (!outdir.empty()) cfg.outdir = outdir;
  if (threads > 0) cfg.threads = threads;
  cfg.timings = cfg.timings || timings;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-level service placement, selection and routing optimizer"};
  app.require_subcommand(1);

  std::string config_path, scenarios, algorithms, seeds, step, outdir, axis, values;
  int iters = -1, threads = 0;
  bool timings = false, dump_state = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file");
    cmd->add_option("--scenario,--scenarios", scenarios,
                    "comma-separated presets (grid, grid-uni, mec, er, dtel, sw) or file paths");
    cmd->add_option("--algorithms", algorithms,
                    "comma-separated: dmp-lfw-p,lfw-greedy,static-lfw,sm,lpr,maxtp");
    cmd->add_option("--seeds", seeds, "comma-separated run seeds");
    cmd->add_option("--iters", iters, "iteration budget per run");
    cmd->add_option("--step", step, "constant:<a> or diminishing:<a>:<b>");
    cmd->add_option("--outdir", outdir, "output directory");
    cmd->add_option("--threads", threads, "work-pool size for independent runs");
    cmd->add_flag("--timings", timings, "write measured wall_ms (not byte-reproducible)");
    cmd->add_flag("--dump-state", dump_state, "write flow and gradient CSVs of final states");
  };

  CLI::App* run = app.add_subcommand("run", "run algorithms on scenarios, write CSVs");
  add_common(run);

  CLI::App* sweep = app.add_subcommand("sweep", "parameter sweep along lambda or eta");
  add_common(sweep);
  sweep->add_option("--axis", axis, "lambda or eta")->required();
  sweep->add_option("--values", values, "comma-separated sweep values")->required();

  std::string verify_scenario = "grid";
  uint64_t verify_seed = 1;
  bool fast = false, inject_bug = false;
  CLI::App* verify = app.add_subcommand("verify", "run the numerical self-checks");
  verify->add_option("--scenario", verify_scenario, "scenario preset or file");
  verify->add_option("--seed", verify_seed, "state seed");
  verify->add_flag("--fast", fast, "cap the finite-difference pair count");
  verify->add_flag("--inject-bug", inject_bug, "test fixture: corrupt one gradient");

  std::string gen_name = "grid", gen_out;
  uint64_t gen_seed = 1;
  CLI::App* gen = app.add_subcommand("gen-scenario", "write a generated scenario file");
  gen->add_option("--name", gen_name, "preset name");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output path ('-' = stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spsr::ExperimentConfig cfg;
    if (run->parsed()) {
      apply_common_flags(cfg, config_path, scenarios, algorithms, seeds, iters, step, outdir,
                         threads, timings);
      cfg.dump_state = cfg.dump_state || dump_state;
      return spsr::cmd_run(cfg);
    }
    if (sweep->parsed()) {
      apply_common_flags(cfg, config_path, scenarios, algorithms, seeds, iters, step, outdir,
                         threads, timings);
      cfg.sweep_axis = axis;
      cfg.sweep_values = parse_values(values);
      return spsr::cmd_sweep(cfg);
    }
    if (verify->parsed()) return spsr::cmd_verify(verify_scenario, verify_seed, fast, inject_bug);
    if (gen->parsed()) return spsr::cmd_gen_scenario(gen_name, gen_seed, gen_out);
  } catch (const spsr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const spsr::FileNotFound& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const spsr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
