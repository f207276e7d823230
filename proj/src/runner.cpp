#include "spsr/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "spsr/dmp.hpp"
#include "spsr/flow.hpp"
#include "spsr/grad.hpp"
#include "spsr/io.hpp"

namespace spsr {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, target);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open config: " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  auto split_list = [](const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(text);
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(item);
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::string rest;
    std::getline(ls, rest);
    rest.erase(0, rest.find_first_not_of(" \t"));
    try {
      if (key == "scenarios") cfg.scenarios = split_list(rest);
      else if (key == "algorithms") cfg.algorithms = split_list(rest);
      else if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& s : split_list(rest)) cfg.seeds.push_back(std::stoull(s));
      } else if (key == "iters") cfg.iters = std::stoi(rest);
      else if (key == "step") {
        auto parts = split_list(rest);
        if (parts.at(0) == "constant") cfg.schedule = StepSchedule::constant(std::stod(parts.at(1)));
        else if (parts.at(0) == "diminishing")
          cfg.schedule = StepSchedule::diminishing(std::stod(parts.at(1)), std::stod(parts.at(2)));
        else throw ConfigError("step must be constant,<a> or diminishing,<a>,<b>");
      } else if (key == "sweep") cfg.sweep_axis = rest;
      else if (key == "sweep_values") {
        cfg.sweep_values.clear();
        for (const auto& s : split_list(rest)) cfg.sweep_values.push_back(std::stod(s));
      } else if (key == "outdir") cfg.outdir = rest;
      else if (key == "threads") cfg.threads = std::stoi(rest);
      else if (key == "timings") cfg.timings = rest == "1" || rest == "true";
      else if (key == "dump_state") cfg.dump_state = rest == "1" || rest == "true";
      else if (key == "scenario_seed") cfg.scenario_seed = std::stoull(rest);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

Instance instance_for(const std::string& scenario, uint64_t scenario_seed) {
  if (fs::exists(scenario) && !fs::is_directory(scenario)) return load_scenario_file(scenario);
  ScenarioSpec spec = table1_spec(scenario);
  spec.seed = scenario_seed;
  return generate_scenario(spec);
}

namespace {

struct Job {
  std::string scenario;
  std::string algorithm;
  uint64_t seed = 1;
  double sweep_value = 0.0;
};

struct JobResult {
  Trajectory traj;
  double avg_qos = 0.0;
  double avg_latency = 0.0;
  std::string error;
};

JobResult execute_job(const ExperimentConfig& cfg, const Job& job, double* lambda_override,
                      double* eta_override) {
  JobResult out;
  try {
    Instance inst;
    if (fs::exists(job.scenario) && !fs::is_directory(job.scenario)) {
      inst = load_scenario_file(job.scenario);
    } else {
      ScenarioSpec spec = table1_spec(job.scenario);
      spec.seed = cfg.scenario_seed;
      if (lambda_override) spec.lambda = *lambda_override;
      if (eta_override) spec.eta = *eta_override;
      inst = generate_scenario(spec);
    }
    BaselineOptions opts;
    opts.iters = cfg.iters;
    opts.schedule = cfg.schedule;
    out.traj = run_baseline(inst, baseline_from_name(job.algorithm), job.seed, opts);
    if (!out.traj.aborted) {
      FlowState flow = solve_flow_fixed_point(inst, out.traj.final_state);
      QosLatency ql = average_qos_latency(inst, flow, out.traj.final_state);
      out.avg_qos = ql.avg_qos;
      out.avg_latency = ql.avg_latency;
    }
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

void run_pool(const ExperimentConfig& cfg, const std::vector<Job>& jobs,
              std::vector<JobResult>& results, bool sweep_lambda, bool sweep_eta) {
  results.resize(jobs.size());
  std::atomic<size_t> next{0};
  int n_threads = std::max(1, cfg.threads);
  auto worker = [&]() {
    while (true) {
      size_t idx = next.fetch_add(1);
      if (idx >= jobs.size()) break;
      double value = jobs[idx].sweep_value;
      results[idx] = execute_job(cfg, jobs[idx], sweep_lambda ? &value : nullptr,
                                 sweep_eta ? &value : nullptr);
    }
  };
  std::vector<std::thread> threads;
  for (int t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& th : threads) th.join();
}

const char* kTrajectoryHeader =
    "scenario,algorithm,seed,iter,J,Q,res_s,res_phi,res_y,msgs_per_node,flops_per_node,"
    "wall_ms,status\n";

void append_trajectory(std::string& csv, const ExperimentConfig& cfg, const Job& job,
                       const JobResult& res) {
  for (const IterStats& row : res.traj.rows) {
    csv += job.scenario;
    csv += ',';
    csv += job.algorithm;
    csv += ',';
    csv += std::to_string(job.seed);
    csv += ',';
    csv += std::to_string(row.iter);
    csv += ',';
    csv += format_double(row.total_cost);
    csv += ',';
    csv += format_double(row.avg_quality);
    csv += ',';
    csv += format_double(row.res_s);
    csv += ',';
    csv += format_double(row.res_phi);
    csv += ',';
    csv += format_double(row.res_y);
    csv += ',';
    csv += format_double(row.msgs_per_node);
    csv += ',';
    csv += format_double(row.flops_per_node);
    csv += ',';
    csv += format_double(cfg.timings ? row.wall_ms : 0.0);
    csv += ',';
    csv += row.status;
    csv += '\n';
  }
  if (!res.error.empty()) {
    csv += job.scenario + ',' + job.algorithm + ',' + std::to_string(job.seed) +
           ",0,nan,nan,0,0,0,0,0,0,error: " + res.error + '\n';
  }
}

}  // namespace

int cmd_run(const ExperimentConfig& cfg) {
  std::vector<Job> jobs;
  for (const auto& sc : cfg.scenarios)
    for (const auto& algo : cfg.algorithms)
      for (uint64_t seed : cfg.seeds) jobs.push_back({sc, algo, seed, 0.0});
  std::vector<JobResult> results;
  run_pool(cfg, jobs, results, false, false);

  std::string csv = kTrajectoryHeader;
  for (size_t idx = 0; idx < jobs.size(); ++idx) append_trajectory(csv, cfg, jobs[idx], results[idx]);
  write_file_atomic(cfg.outdir + "/results.csv", csv);

  if (cfg.dump_state) {
    for (size_t idx = 0; idx < jobs.size(); ++idx) {
      const Job& job = jobs[idx];
      const JobResult& res = results[idx];
      if (!res.error.empty() || res.traj.aborted) continue;
      Instance inst = instance_for(job.scenario, cfg.scenario_seed);
      FlowState flow = solve_flow_fixed_point(inst, res.traj.final_state);
      GradientBundle g = compute_gradients(inst, res.traj.final_state, flow);
      // file-path scenarios reduce to their stem so dumps stay in outdir
      std::string tag = fs::path(job.scenario).stem().string();
      if (tag.empty()) tag = job.scenario;
      std::string prefix = cfg.outdir + "/" + tag + "_" + job.algorithm + "_" +
                           std::to_string(job.seed);
      dump_flow_csv(inst, flow, prefix);
      dump_gradient_csv(inst, g, prefix);
    }
  }

  // converged summary with per-scenario normalization
  std::map<std::string, std::map<std::string, std::vector<double>>> finals;
  for (size_t idx = 0; idx < jobs.size(); ++idx)
    if (results[idx].error.empty() && !results[idx].traj.aborted)
      finals[jobs[idx].scenario][jobs[idx].algorithm].push_back(results[idx].traj.final_cost());
  std::string summary = "scenario,algorithm,mean_final_J,normalized_J,runs\n";
  for (const auto& [sc, per_algo] : finals) {
    double max_j = -std::numeric_limits<double>::infinity();
    std::map<std::string, double> means;
    for (const auto& [algo, vals] : per_algo) {
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= double(vals.size());
      means[algo] = mean;
      max_j = std::max(max_j, mean);
    }
    for (const auto& [algo, mean] : means) {
      summary += sc + ',' + algo + ',' + format_double(mean) + ',' +
                 format_double(max_j != 0.0 ? mean / max_j : 0.0) + ',' +
                 std::to_string(per_algo.at(algo).size()) + '\n';
    }
  }
  write_file_atomic(cfg.outdir + "/summary.csv", summary);

  std::string manifest =
      "results.csv: per-iteration trajectories; J vs iter reproduces the convergence plot\n"
      "results.csv: msgs_per_node and flops_per_node reproduce the overhead comparison\n"
      "summary.csv: normalized_J per scenario reproduces the cross-scenario bar chart\n";
  write_file_atomic(cfg.outdir + "/plots.txt", manifest);
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep_axis != "lambda" && cfg.sweep_axis != "eta")
    throw ConfigError("sweep axis must be lambda or eta");
  if (cfg.sweep_values.empty()) throw ConfigError("sweep_values must not be empty");
  bool is_lambda = cfg.sweep_axis == "lambda";

  std::vector<Job> jobs;
  for (double value : cfg.sweep_values)
    for (const auto& sc : cfg.scenarios)
      for (const auto& algo : cfg.algorithms)
        for (uint64_t seed : cfg.seeds) jobs.push_back({sc, algo, seed, value});
  std::vector<JobResult> results;
  run_pool(cfg, jobs, results, is_lambda, !is_lambda);

  std::string csv = is_lambda
                        ? "scenario,algorithm,seed,lambda,final_J,status\n"
                        : "scenario,algorithm,seed,eta,final_J,avg_qos,avg_latency,status\n";
  for (size_t idx = 0; idx < jobs.size(); ++idx) {
    const Job& job = jobs[idx];
    const JobResult& res = results[idx];
    std::string status = !res.error.empty()
                             ? "error: " + res.error
                             : (res.traj.aborted ? res.traj.abort_reason : "ok");
    csv += job.scenario + ',' + job.algorithm + ',' + std::to_string(job.seed) + ',' +
           format_double(job.sweep_value) + ',' + format_double(res.traj.final_cost());
    if (!is_lambda) csv += ',' + format_double(res.avg_qos) + ',' + format_double(res.avg_latency);
    csv += ',' + status + '\n';
  }
  write_file_atomic(cfg.outdir + (is_lambda ? "/lambda_sweep.csv" : "/eta_sweep.csv"), csv);

  std::string manifest = is_lambda
                             ? "lambda_sweep.csv: J vs transition rate per algorithm\n"
                             : "eta_sweep.csv: QoS-latency tradeoff frontier vs preference\n";
  write_file_atomic(cfg.outdir + "/plots.txt", manifest);
  return 0;
}

int cmd_verify(const std::string& scenario, uint64_t seed, bool fast, bool inject_bug) {
  Instance inst = instance_for(scenario, 1);
  int failures = 0;
  auto report = [&failures](const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << "\n";
    if (!ok) ++failures;
  };

  DecisionState st = random_feasible_state(inst, seed, PlacementMode::Joint);

  {
    FdCheckOptions opts;
    if (fast) opts.max_pairs = 40;
    FdCheckResult res = finite_diff_check(inst, st, opts);
    report("gradient-finite-difference", res.ok(),
           std::to_string(res.n_pairs) + " pairs, worst ratio " + format_double(res.worst_ratio) +
               (res.ok() ? "" : ", worst " + res.worst_pair));
  }
  {
    double worst = 0.0;
    for (uint64_t s = seed; s < seed + 20; ++s) {
      DecisionState probe = random_feasible_state(inst, s, PlacementMode::Joint);
      FlowState flow = solve_flow_fixed_point(inst, probe);
      GradientBundle oracle = compute_gradients(inst, probe, flow);
      DmpResult dmp = run_dmp(inst, probe, flow);
      if (inject_bug && s == seed && !dmp.bundle.dJ_ds.empty()) dmp.bundle.dJ_ds[0] += 0.5;
      for (size_t i = 0; i < oracle.dJ_ds.size(); ++i)
        worst = std::max(worst, std::abs(oracle.dJ_ds[i] - dmp.bundle.dJ_ds[i]));
      for (size_t i = 0; i < oracle.dJ_dphi.size(); ++i)
        worst = std::max(worst, std::abs(oracle.dJ_dphi[i] - dmp.bundle.dJ_dphi[i]));
      for (size_t i = 0; i < oracle.dJ_dy.size(); ++i)
        worst = std::max(worst, std::abs(oracle.dJ_dy[i] - dmp.bundle.dJ_dy[i]));
    }
    report("dmp-oracle-equivalence", worst <= 1e-9, "max |dmp - oracle| = " + format_double(worst));
  }
  {
    double worst = 0.0;
    double total_rate = inst.demand.total();
    for (uint64_t s = seed; s < seed + 20; ++s) {
      DecisionState probe = random_feasible_state(inst, s, PlacementMode::Joint);
      FlowState flow = solve_flow_fixed_point(inst, probe);
      Objective obj = evaluate_objective(inst, flow, probe);
      double lhs = std::abs(obj.total_cost + total_rate * obj.avg_quality);
      worst = std::max(worst, lhs / (1.0 + std::abs(obj.total_cost)));
    }
    report("cost-quality-identity", worst <= 1e-9, "max scaled residual = " + format_double(worst));
  }
  {
    FlowState flow = solve_flow_fixed_point(inst, st);
    FlowState probe = flow;
    std::vector<double> before = probe.flow_tun;
    compute_tunneling(inst, st, probe);
    double resid = 0.0;
    for (size_t a = 0; a < before.size(); ++a)
      resid = std::max(resid, std::abs(probe.flow_tun[a] - before[a]));
    report("fixed-point-residual", resid <= 1e-10, "one-sweep residual = " + format_double(resid));
  }
  return failures == 0 ? 0 : 2;
}

int cmd_gen_scenario(const std::string& name, uint64_t seed, const std::string& out_path) {
  ScenarioSpec spec = table1_spec(name);
  spec.seed = seed;
  Instance inst = generate_scenario(spec);
  std::string text = scenario_to_string(inst, name);
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
  }
  return 0;
}

}  // namespace spsr
