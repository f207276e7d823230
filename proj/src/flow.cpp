#include "spsr/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace spsr {

void compute_traffic(const Instance& inst, const DecisionState& state, FlowState& flow) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  flow.n_nodes = net.n_nodes;
  flow.n_services = S;
  flow.n_arcs = net.n_arcs();
  flow.t.assign(size_t(net.n_nodes) * S, 0.0);
  flow.t_endo.assign(size_t(net.n_nodes) * S, 0.0);
  flow.f.assign(size_t(S) * net.n_arcs(), 0.0);
  if (flow.topo.empty()) {
    flow.topo.resize(size_t(S));
    for (int sid = 0; sid < S; ++sid)
      if (!cat.is_local(sid)) flow.topo[size_t(sid)] = service_topo_order(net, state, sid);
  }

  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = cat.services[size_t(sid)];
    if (cat.is_local(sid)) {
      for (int i = 0; i < net.n_nodes; ++i)
        flow.t[size_t(i) * S + sid] = inst.demand.r(i, sv.task) * state.s_at(i, sid);
      continue;
    }
    for (int i : flow.topo[size_t(sid)]) {
      double endo = 0.0;
      for (int a : net.in_edges[size_t(i)]) {
        double ph = state.phi_at(sid, a);
        if (ph > 0.0) endo += flow.f[size_t(sid) * net.n_arcs() + a];
      }
      double total = inst.demand.r(i, sv.task) * state.s_at(i, sid) + endo;
      flow.t_endo[size_t(i) * S + sid] = endo;
      flow.t[size_t(i) * S + sid] = total;
      for (int a : net.out_edges[size_t(i)]) {
        double ph = state.phi_at(sid, a);
        if (ph > 0.0) flow.f[size_t(sid) * net.n_arcs() + a] = ph * total;
      }
    }
  }
}

std::vector<double> compute_static_flows(const ServiceCatalog& catalog, const NetworkModel& net,
                                         const std::vector<double>& f, int n_services) {
  std::vector<double> flow_static(size_t(net.n_arcs()), 0.0);
  for (int sid = 0; sid < n_services; ++sid) {
    const Service& sv = catalog.services[size_t(sid)];
    if (catalog.is_local(sid)) continue;
    for (int a = 0; a < net.n_arcs(); ++a) {
      double fwd = f[size_t(sid) * net.n_arcs() + a];
      double rev = f[size_t(sid) * net.n_arcs() + net.reverse_arc[size_t(a)]];
      flow_static[size_t(a)] += sv.l_req * fwd + sv.l_res * rev;
    }
  }
  return flow_static;
}

void compute_static_rtt(const Instance& inst, const DecisionState& state,
                        const std::vector<double>& link_delay,
                        const std::vector<double>& node_delay, FlowState& flow) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  flow.rtt.assign(size_t(net.n_nodes) * S, 0.0);
  flow.rtt_static.assign(size_t(net.n_nodes) * S, 0.0);

  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) {
      for (int i = 0; i < net.n_nodes; ++i)
        flow.rtt_static[size_t(i) * S + sid] = net.c_u;
      continue;
    }
    const auto& order = flow.topo[size_t(sid)];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      int i = *it;
      double acc = state.y_at(i, sid) * node_delay[size_t(i)];
      for (int a : net.out_edges[size_t(i)]) {
        double ph = state.phi_at(sid, a);
        if (ph <= 0.0) continue;
        int j = net.edges[size_t(a)].second;
        acc += ph * (link_delay[size_t(a)] + link_delay[size_t(net.reverse_arc[size_t(a)])] +
                     flow.rtt[size_t(j) * S + sid]);
      }
      flow.rtt[size_t(i) * S + sid] = acc;
      flow.rtt_static[size_t(i) * S + sid] = acc + net.d_ap;
    }
  }
}

void compute_tunneling(const Instance& inst, const DecisionState& state, FlowState& flow) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  flow.p.assign(size_t(S) * net.n_arcs(), 0.0);
  flow.flow_tun.assign(size_t(net.n_arcs()), 0.0);
  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = cat.services[size_t(sid)];
    if (cat.is_local(sid)) continue;
    for (int i = 0; i < net.n_nodes; ++i) {
      double big = inst.mobility.big_lambda[size_t(i)];
      if (big <= 0.0) continue;
      double stay = 1.0 - std::exp(-big * flow.rtt_static[size_t(i) * S + sid]);
      double rate = inst.demand.r(i, sv.task) * state.s_at(i, sid);
      for (int a : net.out_edges[size_t(i)]) {
        double pij = inst.mobility.q[size_t(a)] * stay;
        flow.p[size_t(sid) * net.n_arcs() + a] = pij;
        flow.flow_tun[size_t(a)] += sv.l_res * rate * pij;
      }
    }
  }
}

namespace {

void refresh_delays(const Instance& inst, FlowState& flow) {
  const NetworkModel& net = inst.net;
  flow.flow_total.assign(size_t(net.n_arcs()), 0.0);
  flow.link_delay.assign(size_t(net.n_arcs()), 0.0);
  for (int a = 0; a < net.n_arcs(); ++a) {
    flow.flow_total[size_t(a)] = flow.flow_static[size_t(a)] + flow.flow_tun[size_t(a)];
    flow.link_delay[size_t(a)] =
        inst.cost.link_delay(net.mu[size_t(a)], flow.flow_total[size_t(a)]);
  }
}

}  // namespace

FlowState solve_flow_fixed_point(const Instance& inst, const DecisionState& state,
                                 const FlowSolveOptions& opts) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
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

  flow.flow_tun.assign(size_t(net.n_arcs()), 0.0);
  bool mobile = false;
  for (double v : inst.mobility.big_lambda) mobile |= v > 0.0;

  double prev_residual = std::numeric_limits<double>::infinity();
  bool damped = false;
  bool converged = false;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    refresh_delays(inst, flow);
    compute_static_rtt(inst, state, flow.link_delay, flow.node_delay, flow);
    if (!mobile) {
      compute_tunneling(inst, state, flow);  // all zero, keeps fields consistent
      converged = true;
      break;
    }
    std::vector<double> before = flow.flow_tun;
    compute_tunneling(inst, state, flow);
    double residual = 0.0;
    for (int a = 0; a < net.n_arcs(); ++a)
      residual = std::max(residual, std::abs(flow.flow_tun[size_t(a)] - before[size_t(a)]));
    if (residual <= opts.tol) {
      converged = true;
      break;
    }
    if (residual > prev_residual) damped = true;
    if (damped)
      for (int a = 0; a < net.n_arcs(); ++a)
        flow.flow_tun[size_t(a)] = 0.5 * (flow.flow_tun[size_t(a)] + before[size_t(a)]);
    prev_residual = residual;
  }
  if (!converged)
    throw NonConvergent("tunneling fixed point did not converge in " +
                        std::to_string(opts.max_iters) + " iterations");

  // final consistency pass at the converged tunneling flows
  refresh_delays(inst, flow);
  compute_static_rtt(inst, state, flow.link_delay, flow.node_delay, flow);

  flow.latency.assign(size_t(net.n_nodes) * S, 0.0);
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) {
      for (int i = 0; i < net.n_nodes; ++i) flow.latency[size_t(i) * S + sid] = net.c_u;
      continue;
    }
    for (int i = 0; i < net.n_nodes; ++i) {
      double extra = 0.0;
      for (int a : net.out_edges[size_t(i)])
        extra += flow.p_at(sid, a) * flow.link_delay[size_t(a)];
      flow.latency[size_t(i) * S + sid] = flow.rtt_static_at(i, sid) + extra;
    }
  }
  return flow;
}

Objective evaluate_objective(const Instance& inst, const FlowState& flow,
                             const DecisionState& state) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  Objective obj;

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
      if (cat.is_local(sid)) j += sv.work * net.c_u * rate;  // user-side compute
      j -= uh * rate;
    }
  }
  obj.total_cost = j;

  // Q from the size-weighted latency recursion (independent route)
  double total_rate = inst.demand.total();
  if (total_rate <= 0.0) {
    obj.avg_quality = 0.0;
    return obj;
  }
  std::vector<double> rtt_w(size_t(net.n_nodes) * S, 0.0);
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    const Service& sv = cat.services[size_t(sid)];
    const auto& order = flow.topo[size_t(sid)];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      int i = *it;
      double acc = state.y_at(i, sid) * sv.work * flow.node_delay[size_t(i)];
      for (int a : net.out_edges[size_t(i)]) {
        double ph = state.phi_at(sid, a);
        if (ph <= 0.0) continue;
        int jn = net.edges[size_t(a)].second;
        acc += ph * (sv.l_req * flow.link_delay[size_t(a)] +
                     sv.l_res * flow.link_delay[size_t(net.reverse_arc[size_t(a)])] +
                     rtt_w[size_t(jn) * S + sid]);
      }
      rtt_w[size_t(i) * S + sid] = acc;
    }
  }
  double q = 0.0;
  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = cat.services[size_t(sid)];
    for (int i = 0; i < net.n_nodes; ++i) {
      double rate = inst.demand.r(i, sv.task) * state.s_at(i, sid);
      if (rate == 0.0 && state.s_at(i, sid) == 0.0) continue;
      double lat;
      if (cat.is_local(sid)) {
        lat = sv.work * net.c_u;
      } else {
        double tun = 0.0;
        for (int a : net.out_edges[size_t(i)])
          tun += flow.p_at(sid, a) * flow.link_delay[size_t(a)];
        lat = rtt_w[size_t(i) * S + sid] + net.d_ap + sv.l_res * tun;
      }
      q += rate * (cat.eta * sv.utility - lat);
    }
  }
  obj.avg_quality = q / total_rate;
  return obj;
}

QosLatency average_qos_latency(const Instance& inst, const FlowState& flow,
                               const DecisionState& state) {
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  QosLatency out;
  double total_rate = inst.demand.total();
  if (total_rate <= 0.0) return out;
  double qos = 0.0, lat = 0.0;
  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = cat.services[size_t(sid)];
    for (int i = 0; i < inst.net.n_nodes; ++i) {
      double rate = inst.demand.r(i, sv.task) * state.s_at(i, sid);
      qos += rate * sv.utility;
      lat += rate * flow.latency[size_t(i) * S + sid];
    }
  }
  out.avg_qos = qos / total_rate;
  out.avg_latency = lat / total_rate;
  return out;
}

}  // namespace spsr
