#include "spsr/lfw.hpp"

#include "spsr/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace spsr {

std::vector<int> hosts_of(const DecisionState& state, int sid) {
  std::vector<int> hosts;
  for (int i = 0; i < state.n_nodes; ++i)
    if (state.y_at(i, sid) >= 0.5) hosts.push_back(i);
  return hosts;
}

BlockedSets build_blocked_sets(const Instance& inst, const DecisionState& placement) {
  const int S = inst.catalog.n_services();
  BlockedSets blocked;
  blocked.allowed.resize(size_t(S));
  for (int sid = 0; sid < S; ++sid) {
    if (inst.catalog.is_local(sid)) continue;
    blocked.allowed[size_t(sid)] = service_routing_dag(inst.net, hosts_of(placement, sid));
  }
  return blocked;
}

DirectionVectors fw_direction_fixed(const Instance& inst, const GradientBundle& g,
                                    const BlockedSets& blocked, const DecisionState& state) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  DirectionVectors dir;
  dir.s.assign(size_t(net.n_nodes) * S, 0.0);
  dir.phi.assign(size_t(S) * net.n_arcs(), 0.0);
  dir.y = state.y;  // placement is not a variable here

  for (int i = 0; i < net.n_nodes; ++i) {
    for (int k = 0; k < cat.n_tasks; ++k) {
      int best = -1;
      double gmin = std::numeric_limits<double>::infinity();
      for (int sid : cat.task_services[size_t(k)])
        if (g.ds_at(i, sid) < gmin) {
          gmin = g.ds_at(i, sid);
          best = sid;
        }
      dir.s[size_t(i) * S + best] = 1.0;
    }
  }
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    for (int i = 0; i < net.n_nodes; ++i) {
      if (state.y_at(i, sid) >= 1.0) continue;  // sink: no routing choice
      const auto& arcs = blocked.arcs(sid, i);
      int best = -1, best_nbr = net.n_nodes;
      double gmin = std::numeric_limits<double>::infinity();
      for (int a : arcs) {
        double val = g.dphi_at(sid, a);
        int nbr = net.edges[size_t(a)].second;
        if (val < gmin || (val == gmin && nbr < best_nbr)) {
          gmin = val;
          best = a;
          best_nbr = nbr;
        }
      }
      if (best >= 0) dir.phi[size_t(sid) * net.n_arcs() + best] = 1.0 - state.y_at(i, sid);
    }
  }
  return dir;
}

DirectionVectors fw_direction_joint(const Instance& inst, const GradientBundle& g,
                                    const BlockedSets& blocked, const DecisionState& state) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  DirectionVectors dir;
  dir.s.assign(size_t(net.n_nodes) * S, 0.0);
  dir.phi.assign(size_t(S) * net.n_arcs(), 0.0);
  dir.y.assign(size_t(net.n_nodes) * S, 0.0);
  (void)state;

  // selection direction is the same as in the fixed case
  for (int i = 0; i < net.n_nodes; ++i) {
    for (int k = 0; k < cat.n_tasks; ++k) {
      int best = -1;
      double gmin = std::numeric_limits<double>::infinity();
      for (int sid : cat.task_services[size_t(k)])
        if (g.ds_at(i, sid) < gmin) {
          gmin = g.ds_at(i, sid);
          best = sid;
        }
      dir.s[size_t(i) * S + best] = 1.0;
    }
  }

  struct Option {
    int sid = -1;
    int arc = -1;         // best routing arc
    double saving = 0.0;  // routing gradient minus hosting gradient
    double density = 0.0; // saving per resource unit
  };
  for (int i = 0; i < net.n_nodes; ++i) {
    double capacity = net.storage[size_t(i)];
    std::vector<Option> options;
    for (int sid = 0; sid < S; ++sid) {
      if (cat.is_local(sid)) {
        dir.y[size_t(i) * S + sid] = 1.0;
        continue;
      }
      const Service& sv = cat.services[size_t(sid)];
      const auto& arcs = blocked.arcs(sid, i);
      if (arcs.empty()) {
        // every neighbor blocked: the local polytope pins y = 1
        dir.y[size_t(i) * S + sid] = 1.0;
        capacity -= sv.l_mod;
        continue;
      }
      Option opt;
      opt.sid = sid;
      double gmin = std::numeric_limits<double>::infinity();
      int best_nbr = net.n_nodes;
      for (int a : arcs) {
        double val = g.dphi_at(sid, a);
        int nbr = net.edges[size_t(a)].second;
        if (val < gmin || (val == gmin && nbr < best_nbr)) {
          gmin = val;
          opt.arc = a;
          best_nbr = nbr;
        }
      }
      opt.saving = gmin - g.dy_at(i, sid);
      opt.density = sv.l_mod > 0.0 ? opt.saving / sv.l_mod
                                   : (opt.saving > 0.0
                                          ? std::numeric_limits<double>::infinity()
                                          : -std::numeric_limits<double>::infinity());
      options.push_back(opt);
    }
    std::sort(options.begin(), options.end(), [](const Option& a, const Option& b) {
      if (a.density != b.density) return a.density > b.density;
      return a.sid < b.sid;
    });
    for (const Option& opt : options) {
      const Service& sv = cat.services[size_t(opt.sid)];
      double host_frac = 0.0;
      if (opt.saving > 0.0 && capacity > 0.0) {
        host_frac = sv.l_mod > 0.0 ? std::min(1.0, capacity / sv.l_mod) : 1.0;
        capacity -= host_frac * sv.l_mod;
      }
      dir.y[size_t(i) * S + opt.sid] = host_frac;
      if (host_frac < 1.0)
        dir.phi[size_t(opt.sid) * net.n_arcs() + opt.arc] = 1.0 - host_frac;
    }
  }
  return dir;
}

namespace {

// rebuild the per-service DAGs from the fully-hosted nodes and re-project phi
// onto them; services without a full host keep their current DAG. Every node
// with y < 1 keeps at least one allowed arc because it cannot be the order-
// minimal full host, so the re-projection lands on a feasible loop-free state.
void refresh_dags(const Instance& inst, DecisionState& st, BlockedSets& blocked) {
  const ServiceCatalog& cat = inst.catalog;
  const NetworkModel& net = inst.net;
  for (int sid = 0; sid < cat.n_services(); ++sid) {
    if (cat.is_local(sid)) continue;
    std::vector<int> full;
    for (int i = 0; i < net.n_nodes; ++i)
      if (st.y_at(i, sid) >= 1.0 - 1e-9) full.push_back(i);
    if (full.empty()) continue;
    auto dag = service_routing_dag(net, full);
    std::vector<char> ok(size_t(net.n_arcs()), 0);
    for (int i = 0; i < net.n_nodes; ++i)
      for (int a : dag[size_t(i)]) ok[size_t(a)] = 1;
    for (int i = 0; i < net.n_nodes; ++i) {
      double target = 1.0 - st.y_at(i, sid);
      if (target <= 1e-15) {
        for (int a : net.out_edges[size_t(i)]) st.phi_at(sid, a) = 0.0;
        continue;
      }
      double kept = 0.0;
      for (int a : net.out_edges[size_t(i)]) {
        if (!ok[size_t(a)]) st.phi_at(sid, a) = 0.0;
        kept += st.phi_at(sid, a);
      }
      if (kept > 1e-12) {
        double scale = target / kept;
        for (int a : net.out_edges[size_t(i)]) st.phi_at(sid, a) *= scale;
      } else {
        const auto& arcs = dag[size_t(i)];
        for (int a : arcs) st.phi_at(sid, a) = target / double(arcs.size());
      }
    }
    blocked.allowed[size_t(sid)] = std::move(dag);
  }
}

void renormalize(const Instance& inst, DecisionState& st) {
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  for (int i = 0; i < st.n_nodes; ++i) {
    for (int k = 0; k < cat.n_tasks; ++k) {
      double sum = 0.0;
      for (int sid : cat.task_services[size_t(k)]) sum += st.s_at(i, sid);
      if (std::abs(sum - 1.0) > 1e-9)
        throw Error("selection drift exceeded bounds at node " + std::to_string(i));
      for (int sid : cat.task_services[size_t(k)]) st.s_at(i, sid) /= sum;
    }
  }
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    for (int i = 0; i < st.n_nodes; ++i) {
      double sum = st.y_at(i, sid);
      for (int a : inst.net.out_edges[size_t(i)]) sum += st.phi_at(sid, a);
      if (std::abs(sum - 1.0) > 1e-9)
        throw Error("routing drift exceeded bounds at node " + std::to_string(i));
      st.y_at(i, sid) /= sum;
      for (int a : inst.net.out_edges[size_t(i)]) st.phi_at(sid, a) /= sum;
    }
  }
}

}  // namespace

Trajectory lfw_run(const Instance& inst, const DecisionState& init, const BlockedSets& blocked,
                   const LfwOptions& opts) {
  Trajectory traj;
  DecisionState state = init;
  BlockedSets live = blocked;
  const int n_nodes = inst.net.n_nodes;

  for (int n = 0; n <= opts.iters; ++n) {
    auto t0 = std::chrono::steady_clock::now();
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
    } catch (const NonConvergent& e) {
      row.status = std::string("nonconvergent: ") + e.what();
      traj.rows.push_back(row);
      traj.aborted = true;
      traj.abort_reason = row.status;
      break;
    }

    GradientBundle bundle;
    if (opts.grad_source == GradSource::Oracle) {
      bundle = compute_gradients(inst, state, flow);
    } else {
      DmpOptions dopts;
      dopts.skip_msg1 = opts.grad_source == GradSource::StaticDmp;
      dopts.rtt_noise_sigma = opts.rtt_noise_sigma;
      dopts.noise_seed = opts.noise_seed + uint64_t(n) * 7919;
      dopts.allowed_arcs = &live.allowed;
      DmpResult res = run_dmp(inst, state, flow, dopts);
      bundle = std::move(res.bundle);
      row.msgs_per_node = double(res.overhead.total_msgs()) / double(n_nodes);
      double fsum = 0.0;
      for (double f : res.overhead.flops) fsum += f;
      row.flops_per_node = fsum / double(n_nodes);
    }

    Objective obj = evaluate_objective(inst, flow, state);
    row.total_cost = obj.total_cost;
    row.avg_quality = obj.avg_quality;
    KktResidual res = kkt_residual(inst, state, bundle, opts.mode, &live.allowed);
    row.res_s = res.res_s;
    row.res_phi = res.res_phi;
    row.res_y = res.res_y;
    row.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    traj.rows.push_back(row);
    if (n == opts.iters) break;

    DirectionVectors dir = opts.mode == PlacementMode::Joint
                               ? fw_direction_joint(inst, bundle, live, state)
                               : fw_direction_fixed(inst, bundle, live, state);
    double alpha = opts.schedule.at(n + opts.schedule_offset);
    bool snapped = false;
    if (opts.mode == PlacementMode::Joint && opts.placement_block_step > 0 && n > 0 &&
        n % opts.placement_block_step == 0) {
      // safeguarded block step on the placement: propose the exact knapsack
      // vertex of the linearized objective, the xi-priority fill and the
      // popularity placement; adopt the best only on a decisive improvement
      // (near-neutral jumps would just fork otherwise-identical runs)
      double best_j = row.total_cost - 1e-3;
      DecisionState best_state;
      BlockedSets best_blocked;
      auto consider = [&](DecisionState cand) {
        BlockedSets cand_blocked = live;
        try {
          refresh_dags(inst, cand, cand_blocked);
          FlowSolveOptions fopts;
          fopts.tol = opts.fp_tol;
          FlowState cand_flow = solve_flow_fixed_point(inst, cand, fopts);
          double cand_j = evaluate_objective(inst, cand_flow, cand).total_cost;
          if (cand_j <= best_j) {
            best_j = cand_j;
            best_state = std::move(cand);
            best_blocked = std::move(cand_blocked);
            snapped = true;
          }
        } catch (const Error&) {
          // overloaded candidate: ignore
        }
      };
      DecisionState vertex = state;
      vertex.y = dir.y;
      vertex.phi = dir.phi;
      for (size_t idx = 0; idx < vertex.s.size(); ++idx)
        vertex.s[idx] += alpha * (dir.s[idx] - vertex.s[idx]);
      consider(std::move(vertex));
      // hosting-priority fill: every node saturates its storage in xi order
      // (marginal latency reduction per resource unit), then routes the rest
      {
        const ServiceCatalog& cat = inst.catalog;
        const int S = cat.n_services();
        DecisionState fill = state;
        for (size_t idx = 0; idx < fill.s.size(); ++idx)
          fill.s[idx] += alpha * (dir.s[idx] - fill.s[idx]);
        for (int i = 0; i < inst.net.n_nodes; ++i) {
          std::vector<int> order;
          for (int sid = 0; sid < S; ++sid)
            if (!cat.is_local(sid)) order.push_back(sid);
          std::sort(order.begin(), order.end(), [&](int a, int b) {
            double xa = bundle.xi[size_t(i) * S + a], xb = bundle.xi[size_t(i) * S + b];
            if (xa != xb) return xa > xb;
            return a < b;
          });
          double capacity = inst.net.storage[size_t(i)];
          for (int sid : order) {
            const Service& sv = cat.services[size_t(sid)];
            if (sv.l_mod > 0.0 && capacity >= sv.l_mod) {
              fill.y_at(i, sid) = 1.0;
              capacity -= sv.l_mod;
              for (int a : inst.net.out_edges[size_t(i)]) fill.phi_at(sid, a) = 0.0;
            } else {
              fill.y_at(i, sid) = 0.0;
            }
          }
        }
        // every service must keep at least one host somewhere
        bool feasible = true;
        for (int sid = 0; sid < S && feasible; ++sid) {
          if (cat.is_local(sid)) continue;
          bool any = false;
          for (int i = 0; i < inst.net.n_nodes; ++i) any |= fill.y_at(i, sid) > 0.0;
          feasible = any;
        }
        if (feasible) consider(std::move(fill));
      }
      try {
        DecisionState pop = greedy_placement(inst, state, flow);
        for (size_t idx = 0; idx < pop.s.size(); ++idx)
          pop.s[idx] += alpha * (dir.s[idx] - pop.s[idx]);
        consider(std::move(pop));
      } catch (const NoFeasiblePlacement&) {
      }
      if (snapped) {
        state = std::move(best_state);
        live = std::move(best_blocked);
      }
    }
    if (!snapped) {
      for (size_t idx = 0; idx < state.s.size(); ++idx)
        state.s[idx] += alpha * (dir.s[idx] - state.s[idx]);
      for (size_t idx = 0; idx < state.phi.size(); ++idx)
        state.phi[idx] += alpha * (dir.phi[idx] - state.phi[idx]);
      if (opts.mode == PlacementMode::Joint)
        for (size_t idx = 0; idx < state.y.size(); ++idx)
          state.y[idx] += alpha * (dir.y[idx] - state.y[idx]);
    }
    renormalize(inst, state);
  }
  traj.final_state = std::move(state);
  traj.final_blocked = std::move(live);
  return traj;
}

}  // namespace spsr
