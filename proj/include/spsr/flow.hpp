#pragma once

#include <vector>

#include "spsr/model.hpp"

namespace spsr {

/// Steady-state traffic, flows, delays and latencies for one decision state.
/// All rate/flow fields are consistent with each other after a fixed-point
/// solve: F = F_o + F_tun, d = d(F), D_o re-derived from d, and p/F_tun
/// re-derived from D_o.
struct FlowState {
  int n_nodes = 0;
  int n_services = 0;
  int n_arcs = 0;

  std::vector<double> t;       // total received rate        [i*S + sid]
  std::vector<double> t_endo;  // endogenous arrivals         [i*S + sid]
  std::vector<double> f;       // per-service arc flow        [sid*E + a]
  std::vector<double> flow_static;  // F_o per arc
  std::vector<double> flow_tun;     // F_tun per arc
  std::vector<double> flow_total;   // F per arc
  std::vector<double> workload;     // G per node
  std::vector<double> link_delay;   // d(F) per arc
  std::vector<double> node_delay;   // c(G) per node
  std::vector<double> rtt;      // network round trip, no d_AP [i*S + sid]
  std::vector<double> rtt_static;  // D_o: rtt + d_AP; c_u for local models
  std::vector<double> p;        // tunneling probability       [sid*E + a]
  std::vector<double> latency;  // expected end-to-end D       [i*S + sid]

  std::vector<std::vector<int>> topo;  // per-service topological node order

  double t_at(int i, int sid) const { return t[size_t(i) * n_services + sid]; }
  double f_at(int sid, int a) const { return f[size_t(sid) * n_arcs + a]; }
  double p_at(int sid, int a) const { return p[size_t(sid) * n_arcs + a]; }
  double rtt_static_at(int i, int sid) const { return rtt_static[size_t(i) * n_services + sid]; }
};

struct FlowSolveOptions {
  double tol = 1e-10;   // absolute tolerance on max tunneling-flow change
  int max_iters = 1000;
};

/// Request traffic t, endogenous part and per-service arc flows f = phi * t,
/// processed in topological order of each service's routing DAG.
void compute_traffic(const Instance& inst, const DecisionState& state, FlowState& flow);

/// Static flow F_o(i,j) = sum_(k,m) (L_req f_ij + L_res f_ji); the result term
/// uses the reverse service flow.
std::vector<double> compute_static_flows(const ServiceCatalog& catalog, const NetworkModel& net,
                                         const std::vector<double>& f, int n_services);

/// Static round-trip latency by backward recursion over the routing DAG:
///   rtt_i = y_i c_i + sum_j phi_ij (d_ij + d_ji + rtt_j),
/// with D_o = rtt + d_AP at the request origin and D_o = c_u for local models.
void compute_static_rtt(const Instance& inst, const DecisionState& state,
                        const std::vector<double>& link_delay,
                        const std::vector<double>& node_delay, FlowState& flow);

/// Tunneling probabilities p_ij = q_ij (1 - exp(-Lambda_i D_o)) and the
/// induced result-forwarding flow; local models contribute nothing.
void compute_tunneling(const Instance& inst, const DecisionState& state, FlowState& flow);

/// Resolves the circular dependence F_tun -> d -> D_o -> p -> F_tun by damped
/// Picard iteration (damping engages only if the residual oscillates).
/// Throws InfeasibleLoad (mm1 domain), NonConvergent, LoopDetected.
FlowState solve_flow_fixed_point(const Instance& inst, const DecisionState& state,
                                 const FlowSolveOptions& opts = {});

struct Objective {
  double total_cost = 0.0;  // J
  double avg_quality = 0.0; // Q
};

/// J = sum D_ij + sum C_i (network nodes and user-side local compute) minus
/// modified utilities; Q is computed independently from per-origin latency
/// recursions so that J = -(sum r) Q is a real cross-check.
Objective evaluate_objective(const Instance& inst, const FlowState& flow,
                             const DecisionState& state);

/// Average QoS and average (physical) latency over all requests at this state,
/// the two axes of the quality-latency tradeoff.
struct QosLatency {
  double avg_qos = 0.0;
  double avg_latency = 0.0;
};
QosLatency average_qos_latency(const Instance& inst, const FlowState& flow,
                               const DecisionState& state);

}  // namespace spsr
