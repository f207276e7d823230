#include "spsr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace spsr {

const char* baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::DmpLfwP: return "dmp-lfw-p";
    case BaselineKind::LfwGreedy: return "lfw-greedy";
    case BaselineKind::StaticLfw: return "static-lfw";
    case BaselineKind::Sm: return "sm";
    case BaselineKind::Lpr: return "lpr";
    case BaselineKind::MaxTp: return "maxtp";
  }
  return "?";
}

BaselineKind baseline_from_name(const std::string& name) {
  for (BaselineKind kind :
       {BaselineKind::DmpLfwP, BaselineKind::LfwGreedy, BaselineKind::StaticLfw,
        BaselineKind::Sm, BaselineKind::Lpr, BaselineKind::MaxTp})
    if (name == baseline_name(kind)) return kind;
  throw ConfigError("unknown algorithm: " + name);
}

// ---------------------------------------------------------------------------
// Greedy placement
// ---------------------------------------------------------------------------

DecisionState greedy_placement(const Instance& inst, const DecisionState& current,
                               const FlowState& flow) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  DecisionState next = current;
  for (int sid = 0; sid < S; ++sid)
    if (!cat.is_local(sid))
      for (int i = 0; i < net.n_nodes; ++i) next.y_at(i, sid) = 0.0;

  std::vector<double> remaining = net.storage;
  std::vector<int> remote;
  for (int sid = 0; sid < S; ++sid)
    if (!cat.is_local(sid)) remote.push_back(sid);

  // per-node greedy: every node serves its most popular services until the
  // storage is filled
  for (int i = 0; i < net.n_nodes; ++i) {
    std::vector<int> by_pop = remote;
    std::sort(by_pop.begin(), by_pop.end(), [&](int a, int b) {
      if (flow.t_at(i, a) != flow.t_at(i, b)) return flow.t_at(i, a) > flow.t_at(i, b);
      return a < b;
    });
    for (int sid : by_pop) {
      const Service& sv = cat.services[size_t(sid)];
      if (remaining[size_t(i)] >= sv.l_mod && sv.l_mod > 0.0) {
        next.y_at(i, sid) = 1.0;
        remaining[size_t(i)] -= sv.l_mod;
      }
    }
  }
  // feasibility repair: a service the popularity contest left hostless still
  // needs one host, evicting redundant copies of popular ones if necessary
  for (int sid : remote) {
    bool hosted = false;
    for (int i = 0; i < net.n_nodes && !hosted; ++i) hosted = next.y_at(i, sid) > 0.0;
    if (hosted) continue;
    const Service& sv = cat.services[size_t(sid)];
    while (true) {
      int best = -1;
      double best_t = -1.0;
      for (int i = 0; i < net.n_nodes; ++i)
        if (remaining[size_t(i)] >= sv.l_mod && flow.t_at(i, sid) > best_t) {
          best_t = flow.t_at(i, sid);
          best = i;
        }
      if (best >= 0) {
        next.y_at(best, sid) = 1.0;
        remaining[size_t(best)] -= sv.l_mod;
        break;
      }
      // evict the least-locally-popular service that is hosted elsewhere too
      int victim_node = -1, victim = -1;
      double victim_t = std::numeric_limits<double>::infinity();
      for (int v : remote) {
        int copies = 0;
        for (int i = 0; i < net.n_nodes; ++i) copies += next.y_at(i, v) > 0.0;
        if (copies < 2) continue;
        for (int i = 0; i < net.n_nodes; ++i)
          if (next.y_at(i, v) > 0.0 && flow.t_at(i, v) < victim_t) {
            victim_t = flow.t_at(i, v);
            victim_node = i;
            victim = v;
          }
      }
      if (victim < 0)
        throw NoFeasiblePlacement("greedy placement cannot host service " +
                                  std::to_string(sid));
      next.y_at(victim_node, victim) = 0.0;
      remaining[size_t(victim_node)] += cat.services[size_t(victim)].l_mod;
    }
  }

  // re-project phi onto the new routing DAGs
  for (int sid : remote) {
    auto allowed = service_routing_dag(net, hosts_of(next, sid));
    std::vector<char> ok(size_t(net.n_arcs()), 0);
    for (int i = 0; i < net.n_nodes; ++i)
      for (int a : allowed[size_t(i)]) ok[size_t(a)] = 1;
    for (int i = 0; i < net.n_nodes; ++i) {
      if (next.y_at(i, sid) > 0.0) {
        for (int a : net.out_edges[size_t(i)]) next.phi_at(sid, a) = 0.0;
        continue;
      }
      double total = 0.0;
      for (int a : net.out_edges[size_t(i)]) {
        if (!ok[size_t(a)]) next.phi_at(sid, a) = 0.0;
        total += next.phi_at(sid, a);
      }
      if (total > 1e-12) {
        for (int a : net.out_edges[size_t(i)]) next.phi_at(sid, a) /= total;
      } else {
        const auto& arcs = allowed[size_t(i)];
        for (int a : arcs) next.phi_at(sid, a) = 1.0 / double(arcs.size());
      }
    }
  }
  return next;
}

// ---------------------------------------------------------------------------
// Service-migration evaluation
// ---------------------------------------------------------------------------

SmEvaluation evaluate_migration_model(const Instance& inst, const DecisionState& state,
                                      double fp_tol) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  std::vector<int> layer = net.layer;
  if (layer.empty()) layer = hop_distance_to_hosts(net, {0});

  FlowState flow;
  compute_traffic(inst, state, flow);
  flow.flow_static = compute_static_flows(cat, net, flow.f, S);
  flow.workload.assign(size_t(net.n_nodes), 0.0);
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    const Service& sv = cat.services[size_t(sid)];
    for (int i = 0; i < net.n_nodes; ++i)
      flow.workload[size_t(i)] += sv.work * state.y_at(i, sid) * flow.t_at(i, sid);
  }
  flow.node_delay.assign(size_t(net.n_nodes), 0.0);
  for (int i = 0; i < net.n_nodes; ++i)
    flow.node_delay[size_t(i)] = inst.cost.node_delay(net.nu[size_t(i)], flow.workload[size_t(i)]);

  SmEvaluation out;
  std::vector<double> mig(size_t(net.n_arcs()), 0.0);
  for (int iter = 0; iter < 1000; ++iter) {
    flow.flow_total.assign(size_t(net.n_arcs()), 0.0);
    flow.link_delay.assign(size_t(net.n_arcs()), 0.0);
    for (int a = 0; a < net.n_arcs(); ++a) {
      flow.flow_total[size_t(a)] = flow.flow_static[size_t(a)] + mig[size_t(a)];
      flow.link_delay[size_t(a)] =
          inst.cost.link_delay(net.mu[size_t(a)], flow.flow_total[size_t(a)]);
    }
    compute_static_rtt(inst, state, flow.link_delay, flow.node_delay, flow);
    compute_tunneling(inst, state, flow);  // transition probabilities at current delays
    std::vector<double> next(size_t(net.n_arcs()), 0.0);
    for (int sid = 0; sid < S; ++sid) {
      if (cat.is_local(sid)) continue;
      const Service& sv = cat.services[size_t(sid)];
      for (int a = 0; a < net.n_arcs(); ++a) {
        auto [i, j] = net.edges[size_t(a)];
        if (layer[size_t(i)] != layer[size_t(j)]) continue;  // same-layer transfers only
        double pij = flow.p_at(sid, a);
        if (pij > 0.0)
          next[size_t(a)] += sv.l_mod * inst.demand.r(i, sv.task) * state.s_at(i, sid) * pij;
      }
    }
    double resid = 0.0;
    for (int a = 0; a < net.n_arcs(); ++a)
      resid = std::max(resid, std::abs(next[size_t(a)] - mig[size_t(a)]));
    mig = std::move(next);
    if (resid <= fp_tol) break;
  }
  flow.flow_total.assign(size_t(net.n_arcs()), 0.0);
  flow.link_delay.assign(size_t(net.n_arcs()), 0.0);
  for (int a = 0; a < net.n_arcs(); ++a) {
    flow.flow_total[size_t(a)] = flow.flow_static[size_t(a)] + mig[size_t(a)];
    flow.link_delay[size_t(a)] =
        inst.cost.link_delay(net.mu[size_t(a)], flow.flow_total[size_t(a)]);
  }
  compute_static_rtt(inst, state, flow.link_delay, flow.node_delay, flow);
  compute_tunneling(inst, state, flow);

  double j = 0.0;
  for (int a = 0; a < net.n_arcs(); ++a)
    j += flow.flow_total[size_t(a)] * flow.link_delay[size_t(a)];
  for (int i = 0; i < net.n_nodes; ++i)
    j += flow.workload[size_t(i)] * flow.node_delay[size_t(i)];
  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = cat.services[size_t(sid)];
    double uh = cat.u_hat(sid, net.d_ap);
    for (int i = 0; i < net.n_nodes; ++i) {
      double rate = inst.demand.r(i, sv.task) * state.s_at(i, sid);
      if (cat.is_local(sid)) j += sv.work * net.c_u * rate;
      j -= uh * rate;
    }
  }
  out.total_cost = j;
  for (double v : mig) out.migration_flow_total += v;
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    const Service& sv = cat.services[size_t(sid)];
    for (int a = 0; a < net.n_arcs(); ++a) {
      int i = net.edges[size_t(a)].first;
      out.tunneling_flow_total +=
          sv.l_res * inst.demand.r(i, sv.task) * state.s_at(i, sid) * flow.p_at(sid, a);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// LPR: constant-cost shortest paths + best model
// ---------------------------------------------------------------------------

namespace {

DecisionState lpr_state(const Instance& inst, const DecisionState& placed) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  DecisionState st = placed;
  for (auto& v : st.s) v = 0.0;
  for (int sid = 0; sid < S; ++sid)
    for (int a = 0; a < net.n_arcs(); ++a) st.phi_at(sid, a) = 0.0;

  std::vector<std::vector<double>> service_cost(static_cast<size_t>(S));
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    const Service& sv = cat.services[size_t(sid)];
    // multi-source Dijkstra from the hosts over round-trip arc costs at F = 0
    std::vector<double> dist(size_t(net.n_nodes), std::numeric_limits<double>::infinity());
    std::vector<int> next_hop(size_t(net.n_nodes), -1);
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    for (int h : hosts_of(placed, sid)) {
      dist[size_t(h)] = sv.work * inst.cost.node_delay(net.nu[size_t(h)], 0.0);
      heap.emplace(dist[size_t(h)], h);
    }
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[size_t(u)]) continue;
      for (int a_in : net.in_edges[size_t(u)]) {
        int v = net.edges[size_t(a_in)].first;
        int a_rev = net.reverse_arc[size_t(a_in)];
        double arc_cost = sv.l_req * inst.cost.link_delay(net.mu[size_t(a_in)], 0.0) +
                          sv.l_res * inst.cost.link_delay(net.mu[size_t(a_rev)], 0.0);
        double cand = d + arc_cost;
        if (cand < dist[size_t(v)] - 1e-15) {
          dist[size_t(v)] = cand;
          next_hop[size_t(v)] = a_in;  // arc v -> u
          heap.emplace(cand, v);
        }
      }
    }
    for (int i = 0; i < net.n_nodes; ++i) {
      if (placed.y_at(i, sid) > 0.0) continue;
      if (next_hop[size_t(i)] < 0)
        throw UnreachableHost("lpr: node cannot reach a host for service " +
                              std::to_string(sid));
      st.phi_at(sid, next_hop[size_t(i)]) = 1.0;
    }
    service_cost[size_t(sid)] = std::move(dist);
  }

  for (int i = 0; i < net.n_nodes; ++i) {
    for (int k = 0; k < cat.n_tasks; ++k) {
      int best = -1;
      double best_cost = std::numeric_limits<double>::infinity();
      for (int sid : cat.task_services[size_t(k)]) {
        const Service& sv = cat.services[size_t(sid)];
        double cost =
            cat.is_local(sid) ? sv.work * net.c_u : service_cost[size_t(sid)][size_t(i)];
        cost -= cat.u_hat(sid, net.d_ap);
        if (cost < best_cost) {
          best_cost = cost;
          best = sid;
        }
      }
      st.s_at(i, best) = 1.0;
    }
  }
  return st;
}

Trajectory evaluate_single_state(const Instance& inst, const DecisionState& st, double fp_tol) {
  Trajectory traj;
  IterStats row;
  try {
    FlowSolveOptions fopts;
    fopts.tol = fp_tol;
    FlowState flow = solve_flow_fixed_point(inst, st, fopts);
    Objective obj = evaluate_objective(inst, flow, st);
    row.total_cost = obj.total_cost;
    row.avg_quality = obj.avg_quality;
  } catch (const InfeasibleLoad& e) {
    row.status = std::string("infeasible: ") + e.what();
    traj.aborted = true;
    traj.abort_reason = row.status;
  }
  traj.rows.push_back(row);
  traj.final_state = st;
  return traj;
}

// flow-level backpressure proxy: shift routing toward the least-utilized
// queue, host by the node-utilization proxy, never touch model selection
Trajectory run_maxtp(const Instance& inst, const DecisionState& init, const BlockedSets& blocked,
                     const BaselineOptions& opts) {
  Trajectory traj;
  DecisionState state = init;
  const NetworkModel& net = inst.net;
  const int S = inst.catalog.n_services();

  for (int n = 0; n <= opts.iters; ++n) {
    IterStats row;
    row.iter = n;
    FlowState flow;
    try {
      FlowSolveOptions fopts;
      fopts.tol = opts.fp_tol;
      flow = solve_flow_fixed_point(inst, state, fopts);
    } catch (const InfeasibleLoad& e) {
      row.status = std::string("infeasible: ") + e.what();
      traj.rows.push_back(row);
      traj.aborted = true;
      traj.abort_reason = row.status;
      break;
    }
    Objective obj = evaluate_objective(inst, flow, state);
    row.total_cost = obj.total_cost;
    row.avg_quality = obj.avg_quality;
    GradientBundle real = compute_gradients(inst, state, flow);
    KktResidual res = kkt_residual(inst, state, real, PlacementMode::Joint, &blocked.allowed);
    row.res_s = res.res_s;
    row.res_phi = res.res_phi;
    row.res_y = res.res_y;
    traj.rows.push_back(row);
    if (n == opts.iters) break;

    // surrogate gradients: queue utilization per arc and per node
    GradientBundle proxy;
    proxy.n_nodes = net.n_nodes;
    proxy.n_services = S;
    proxy.n_arcs = net.n_arcs();
    proxy.dJ_ds.assign(size_t(net.n_nodes) * S, 0.0);
    proxy.dJ_dphi.assign(size_t(S) * net.n_arcs(), 0.0);
    proxy.dJ_dy.assign(size_t(net.n_nodes) * S, 0.0);
    for (int sid = 0; sid < S; ++sid) {
      for (int a = 0; a < net.n_arcs(); ++a)
        proxy.dJ_dphi[size_t(sid) * net.n_arcs() + a] =
            flow.flow_total[size_t(a)] / net.mu[size_t(a)];
      for (int i = 0; i < net.n_nodes; ++i)
        proxy.dJ_dy[size_t(i) * S + sid] = flow.workload[size_t(i)] / net.nu[size_t(i)];
    }
    DirectionVectors dir = fw_direction_joint(inst, proxy, blocked, state);
    double alpha = opts.schedule.at(n);
    for (size_t idx = 0; idx < state.phi.size(); ++idx)
      state.phi[idx] += alpha * (dir.phi[idx] - state.phi[idx]);
    for (size_t idx = 0; idx < state.y.size(); ++idx)
      state.y[idx] += alpha * (dir.y[idx] - state.y[idx]);
    // selection stays frozen: backpressure has no notion of model quality
  }
  traj.final_state = std::move(state);
  return traj;
}

void append_segment(Trajectory& base, Trajectory&& next) {
  int offset = base.rows.empty() ? 0 : base.rows.back().iter;
  for (size_t r = 1; r < next.rows.size(); ++r) {
    IterStats row = next.rows[r];
    row.iter = offset + int(r);
    base.rows.push_back(row);
  }
  base.final_state = std::move(next.final_state);
  base.final_blocked = std::move(next.final_blocked);
  base.aborted = next.aborted;
  base.abort_reason = next.abort_reason;
}

// decaying continuation whose first step matches the main schedule's last
StepSchedule cooldown_schedule(const StepSchedule& main, int main_iters) {
  double alpha_end = main.at(main_iters);
  const double b = 16.0;
  return StepSchedule::diminishing(alpha_end * b, b);
}

Trajectory run_lfw_greedy(const Instance& inst, const DecisionState& init,
                          const BaselineOptions& opts) {
  Trajectory traj;
  DecisionState state = init;
  int done = 0;
  while (done <= opts.iters) {
    FlowState flow;
    try {
      FlowSolveOptions fopts;
      fopts.tol = opts.fp_tol;
      flow = solve_flow_fixed_point(inst, state, fopts);
    } catch (const InfeasibleLoad& e) {
      IterStats row;
      row.iter = done;
      row.status = std::string("infeasible: ") + e.what();
      traj.rows.push_back(row);
      traj.aborted = true;
      traj.abort_reason = row.status;
      break;
    }
    state = greedy_placement(inst, state, flow);
    BlockedSets blocked = build_blocked_sets(inst, state);
    LfwOptions lopts;
    lopts.mode = PlacementMode::Fixed;
    lopts.grad_source = GradSource::Dmp;
    lopts.schedule = opts.schedule;
    lopts.fp_tol = opts.fp_tol;
    lopts.iters = std::min(opts.greedy_refresh, opts.iters - done);
    lopts.schedule_offset = done;
    Trajectory seg = lfw_run(inst, state, blocked, lopts);
    for (size_t r = (done == 0 ? 0 : 1); r < seg.rows.size(); ++r) {
      IterStats row = seg.rows[r];
      row.iter = done + int(r);
      traj.rows.push_back(row);
    }
    state = seg.final_state;
    if (seg.aborted) {
      traj.aborted = true;
      traj.abort_reason = seg.abort_reason;
      break;
    }
    if (lopts.iters == 0) break;
    done += lopts.iters;
    if (done >= opts.iters) break;
  }
  traj.final_state = std::move(state);
  return traj;
}

}  // namespace

Trajectory run_baseline(const Instance& inst, BaselineKind kind, uint64_t seed,
                        const BaselineOptions& opts) {
  // every algorithm departs from the same seed state with a greedy-informed
  // placement, so the routing DAGs frozen at startup encode the same
  // information for all of them
  DecisionState init = random_feasible_state(inst, seed, PlacementMode::Joint);
  {
    FlowState flow0 = solve_flow_fixed_point(inst, init, {1e-8, 2000});
    init = greedy_placement(inst, init, flow0);
  }
  switch (kind) {
    case BaselineKind::DmpLfwP: {
      BlockedSets blocked = build_blocked_sets(inst, init);
      LfwOptions lopts;
      lopts.mode = PlacementMode::Joint;
      lopts.grad_source = GradSource::Dmp;
      lopts.schedule = opts.schedule;
      lopts.fp_tol = opts.fp_tol;
      lopts.iters = opts.iters;
      lopts.placement_block_step = opts.block_step;
      Trajectory traj = lfw_run(inst, init, blocked, lopts);
      if (!traj.aborted && opts.cooldown_iters > 0) {
        LfwOptions tail = lopts;
        tail.schedule = cooldown_schedule(opts.schedule, opts.iters);
        tail.iters = opts.cooldown_iters;
        tail.placement_block_step = 0;
        tail.schedule_offset = 0;
        append_segment(traj, lfw_run(inst, traj.final_state, traj.final_blocked, tail));
      }
      return traj;
    }
    case BaselineKind::StaticLfw: {
      BlockedSets blocked = build_blocked_sets(inst, init);
      LfwOptions lopts;
      lopts.mode = PlacementMode::Joint;
      lopts.grad_source = GradSource::StaticDmp;
      lopts.schedule = opts.schedule;
      lopts.fp_tol = opts.fp_tol;
      lopts.iters = opts.iters;
      lopts.placement_block_step = opts.block_step;
      Trajectory traj = lfw_run(inst, init, blocked, lopts);
      if (!traj.aborted && opts.cooldown_iters > 0) {
        LfwOptions tail = lopts;
        tail.schedule = cooldown_schedule(opts.schedule, opts.iters);
        tail.iters = opts.cooldown_iters;
        tail.placement_block_step = 0;
        tail.schedule_offset = 0;
        append_segment(traj, lfw_run(inst, traj.final_state, traj.final_blocked, tail));
      }
      return traj;
    }
    case BaselineKind::LfwGreedy: {
      Trajectory traj = run_lfw_greedy(inst, init, opts);
      if (!traj.aborted && opts.cooldown_iters > 0) {
        BlockedSets blocked = build_blocked_sets(inst, traj.final_state);
        LfwOptions tail;
        tail.mode = PlacementMode::Fixed;
        tail.grad_source = GradSource::Dmp;
        tail.schedule = cooldown_schedule(opts.schedule, opts.iters);
        tail.fp_tol = opts.fp_tol;
        tail.iters = opts.cooldown_iters;
        append_segment(traj, lfw_run(inst, traj.final_state, blocked, tail));
      }
      return traj;
    }
    case BaselineKind::Sm: {
      // mobility-agnostic optimization, then migration-model evaluation
      BlockedSets blocked = build_blocked_sets(inst, init);
      LfwOptions lopts;
      lopts.mode = PlacementMode::Joint;
      lopts.grad_source = GradSource::StaticDmp;
      lopts.schedule = opts.schedule;
      lopts.fp_tol = opts.fp_tol;
      lopts.iters = opts.iters;
      lopts.placement_block_step = opts.block_step;
      Trajectory inner = lfw_run(inst, init, blocked, lopts);
      SmEvaluation ev = evaluate_migration_model(inst, inner.final_state, opts.fp_tol);
      Trajectory traj;
      IterStats row;
      row.total_cost = ev.total_cost;
      double total_rate = inst.demand.total();
      row.avg_quality = total_rate > 0.0 ? -ev.total_cost / total_rate : 0.0;
      traj.rows.push_back(row);
      traj.final_state = inner.final_state;
      traj.aborted = inner.aborted;
      traj.abort_reason = inner.abort_reason;
      return traj;
    }
    case BaselineKind::Lpr: {
      FlowState flow = solve_flow_fixed_point(inst, init, {1e-8, 1000});
      DecisionState placed = greedy_placement(inst, init, flow);
      DecisionState st = lpr_state(inst, placed);
      return evaluate_single_state(inst, st, opts.fp_tol);
    }
    case BaselineKind::MaxTp: {
      BlockedSets blocked = build_blocked_sets(inst, init);
      Trajectory traj = run_maxtp(inst, init, blocked, opts);
      if (!traj.aborted && opts.cooldown_iters > 0) {
        BaselineOptions tail = opts;
        tail.schedule = cooldown_schedule(opts.schedule, opts.iters);
        tail.iters = opts.cooldown_iters;
        tail.cooldown_iters = 0;
        append_segment(traj, run_maxtp(inst, traj.final_state, blocked, tail));
      }
      return traj;
    }
  }
  throw ConfigError("unhandled baseline kind");
}

}  // namespace spsr
