#pragma once

#include <cstdint>
#include <string>

#include "spsr/lfw.hpp"
#include "spsr/model.hpp"

namespace spsr {

/// The proposed algorithm plus the five comparison schemes. Every entry
/// produces states evaluated by the identical flow engine and metrics.
enum class BaselineKind {
  DmpLfwP,    // joint placement, DMP gradients (the proposed scheme)
  LfwGreedy,  // greedy popularity placement, DMP + LFW for the rest
  StaticLfw,  // DMP without MSG1: gradients ignore tunneling
  Sm,         // service migration instead of tunneling, static evaluation
  Lpr,        // uncongested linear program: shortest paths + best model
  MaxTp,      // flow-level backpressure proxy on queue utilizations
};

const char* baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);

struct BaselineOptions {
  int iters = 500;
  StepSchedule schedule = StepSchedule::constant(0.05);
  double fp_tol = 1e-10;
  int greedy_refresh = 50;  // LFW-Greedy re-measures popularity this often
  int block_step = 50;      // cadence of the joint scheme's placement block steps
  /// Extra iterations appended with a decaying step (matched to the main
  /// schedule's final value) so constant-step runs settle to a well-defined
  /// converged objective. Applied symmetrically to every iterative scheme.
  int cooldown_iters = 0;
};

/// Greedy placement by measured popularity: every service first gets one host
/// at its highest-traffic node, then nodes fill leftover storage by t
/// descending. phi is re-projected onto the new routing DAGs; s is kept.
DecisionState greedy_placement(const Instance& inst, const DecisionState& current,
                               const FlowState& flow);

/// Migration-model evaluation: the tunneling flow is replaced by model
/// transfers L_mod * r * s * p on same-layer links (layer = annotation or hop
/// distance from node 0), resolved through the same fixed-point structure.
struct SmEvaluation {
  double total_cost = 0.0;
  double migration_flow_total = 0.0;
  double tunneling_flow_total = 0.0;  // what tunneling would have carried
};
SmEvaluation evaluate_migration_model(const Instance& inst, const DecisionState& state,
                                      double fp_tol = 1e-10);

/// Runs one algorithm from the seed-derived random feasible state.
Trajectory run_baseline(const Instance& inst, BaselineKind kind, uint64_t seed,
                        const BaselineOptions& opts);

}  // namespace spsr
