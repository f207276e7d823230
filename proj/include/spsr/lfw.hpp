#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spsr/dmp.hpp"
#include "spsr/flow.hpp"
#include "spsr/grad.hpp"
#include "spsr/model.hpp"

namespace spsr {

/// Complement representation of the blocked node sets: the arcs each node may
/// still use per service. Built once from the initial placement and held
/// fixed so the feasible set does not move under the optimizer.
struct BlockedSets {
  std::vector<std::vector<std::vector<int>>> allowed;  // [sid][node] -> arc ids

  const std::vector<int>& arcs(int sid, int node) const {
    return allowed[size_t(sid)][size_t(node)];
  }
  bool empty() const { return allowed.empty(); }
};

/// Per-service DAG with maximal edge coverage: nodes are totally ordered by
/// (hop distance to the nearest host, node id); an arc is allowed iff it
/// points down the order. Hosts are the nodes with y >= 0.5.
BlockedSets build_blocked_sets(const Instance& inst, const DecisionState& placement);

struct StepSchedule {
  enum class Kind { Constant, Diminishing };
  Kind kind = Kind::Constant;
  double alpha = 0.05;  // constant step
  double a = 2.0;       // diminishing a/(n+b)
  double b = 40.0;

  double at(int n) const {
    return kind == Kind::Constant ? alpha : a / (double(n) + b);
  }
  static StepSchedule constant(double alpha) {
    StepSchedule s;
    s.kind = Kind::Constant;
    s.alpha = alpha;
    return s;
  }
  static StepSchedule diminishing(double a, double b) {
    StepSchedule s;
    s.kind = Kind::Diminishing;
    s.a = a;
    s.b = b;
    return s;
  }
};

/// Frank-Wolfe target vertex: basis vectors per simplex group.
struct DirectionVectors {
  std::vector<double> s;    // [i*S + sid]
  std::vector<double> phi;  // [sid*E + a]
  std::vector<double> y;    // [i*S + sid]
};

/// Closed-form directions with fixed placement: argmin model per (i,k) and
/// argmin unblocked neighbor per (i,k,m), ties to the smallest index.
DirectionVectors fw_direction_fixed(const Instance& inst, const GradientBundle& g,
                                    const BlockedSets& blocked, const DecisionState& state);

/// Joint placement direction: per node, the exact LP minimizer over
/// {y + sum phi = 1 per service, sum L_mod y <= R_i} solved as a fractional
/// knapsack ordered by hosting savings per resource unit.
DirectionVectors fw_direction_joint(const Instance& inst, const GradientBundle& g,
                                    const BlockedSets& blocked, const DecisionState& state);

enum class GradSource { Oracle, Dmp, StaticDmp };

struct LfwOptions {
  PlacementMode mode = PlacementMode::Fixed;
  GradSource grad_source = GradSource::Oracle;
  StepSchedule schedule = StepSchedule::constant(0.05);
  int iters = 500;
  double fp_tol = 1e-10;
  double rtt_noise_sigma = 0.0;
  uint64_t noise_seed = 0;
  /// Joint mode: every this many iterations take the exact minimizer of the
  /// linearized objective on the placement block (the knapsack vertex the
  /// direction solver already computes) instead of a fractional step, rebuild
  /// the routing DAGs around the new full hosts and re-project phi. The jump
  /// is kept only when it does not worsen J. 0 disables block steps.
  int placement_block_step = 0;
  /// Added to the iteration index when evaluating the step schedule, so a
  /// segmented run continues its sequence instead of restarting it.
  int schedule_offset = 0;
};

struct IterStats {
  int iter = 0;
  double total_cost = 0.0;   // J
  double avg_quality = 0.0;  // Q
  double res_s = 0.0, res_phi = 0.0, res_y = 0.0;
  double msgs_per_node = 0.0;
  double flops_per_node = 0.0;
  double wall_ms = 0.0;
  std::string status = "ok";
};

struct Trajectory {
  std::vector<IterStats> rows;  // one per evaluated iterate (iters + 1 when clean)
  DecisionState final_state;
  BlockedSets final_blocked;  // the routing DAGs in force at the end
  bool aborted = false;
  std::string abort_reason;

  double final_cost() const { return rows.empty() ? 0.0 : rows.back().total_cost; }
};

/// Algorithm loop: evaluate flow fixed point, obtain gradients (oracle or
/// protocol), record metrics, step x <- x + alpha(n) (d - x). Every iterate
/// stays feasible and loop-free inside the blocked sets. InfeasibleLoad and
/// NonConvergent abort the run with a diagnostic row instead of throwing.
Trajectory lfw_run(const Instance& inst, const DecisionState& init, const BlockedSets& blocked,
                   const LfwOptions& opts);

/// Hosts of one service under binary-or-relaxed placement (y >= 0.5).
std::vector<int> hosts_of(const DecisionState& state, int sid);

}  // namespace spsr
