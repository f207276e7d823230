#include "spsr/grad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spsr {

Marginals compute_marginals(const Instance& inst, const FlowState& flow) {
  const NetworkModel& net = inst.net;
  Marginals m;
  m.d_prime.assign(size_t(net.n_arcs()), 0.0);
  m.big_d_prime.assign(size_t(net.n_arcs()), 0.0);
  for (int a = 0; a < net.n_arcs(); ++a) {
    double load = flow.flow_total[size_t(a)];
    double dp = inst.cost.link_delay_deriv(net.mu[size_t(a)], load);
    m.d_prime[size_t(a)] = dp;
    m.big_d_prime[size_t(a)] = flow.link_delay[size_t(a)] + load * dp;
  }
  m.c_prime.assign(size_t(net.n_nodes), 0.0);
  m.big_c_prime.assign(size_t(net.n_nodes), 0.0);
  for (int i = 0; i < net.n_nodes; ++i) {
    double load = flow.workload[size_t(i)];
    double cp = inst.cost.node_delay_deriv(net.nu[size_t(i)], load);
    m.c_prime[size_t(i)] = cp;
    m.big_c_prime[size_t(i)] = flow.node_delay[size_t(i)] + load * cp;
  }
  return m;
}

void compute_B_and_m(const Instance& inst, const DecisionState& state, const FlowState& flow,
                     const Marginals& marg, GradientBundle& g) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  g.B.assign(size_t(net.n_arcs()), 0.0);
  g.beta.assign(size_t(net.n_nodes), 0.0);
  g.m_small.assign(size_t(net.n_nodes) * S, 0.0);

  for (int i = 0; i < net.n_nodes; ++i) {
    double big = inst.mobility.big_lambda[size_t(i)];
    if (big <= 0.0) continue;
    double dq_sum = 0.0;
    for (int a : net.out_edges[size_t(i)])
      dq_sum += marg.big_d_prime[size_t(a)] * inst.mobility.q[size_t(a)];
    // beta: the anchor's own tunneling raises its own first hops, which
    // raises its round trips again; the loop is node-local and resums in
    // closed form into the propagated weights below
    double beta = 0.0;
    for (int sid = 0; sid < S; ++sid) {
      if (cat.is_local(sid)) continue;
      const Service& sv = cat.services[size_t(sid)];
      double rate = inst.demand.r(i, sv.task) * state.s_at(i, sid);
      double decay = std::exp(-big * flow.rtt_static_at(i, sid));
      double first_hop = 0.0;
      for (int a : net.out_edges[size_t(i)]) {
        double ph = state.phi_at(sid, a);
        if (ph <= 0.0) continue;
        first_hop += ph * inst.mobility.q[size_t(a)] * marg.d_prime[size_t(a)];
        g.B[size_t(a)] += big * inst.mobility.q[size_t(a)] * marg.d_prime[size_t(a)] *
                          rate * ph * decay;
      }
      beta += sv.l_res * big * rate * decay * first_hop;
    }
    g.beta[size_t(i)] = beta;
    if (beta >= 1.0) throw FeedbackUnstable("beta >= 1 at node " + std::to_string(i));
    for (int sid = 0; sid < S; ++sid) {
      if (cat.is_local(sid)) continue;
      const Service& sv = cat.services[size_t(sid)];
      double rate = inst.demand.r(i, sv.task) * state.s_at(i, sid);
      double decay = std::exp(-big * flow.rtt_static_at(i, sid));
      g.m_small[size_t(i) * S + sid] = big * rate * decay * dq_sum / (1.0 - beta);
    }
  }
  for (int a = 0; a < net.n_arcs(); ++a)
    if (g.B[size_t(a)] >= 1.0)
      throw FeedbackUnstable("B >= 1 on arc " + std::to_string(a));
}

void compute_M_recursion(const Instance& inst, const DecisionState& state, const FlowState& flow,
                         GradientBundle& g) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  g.M.assign(size_t(net.n_nodes) * S, 0.0);
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    for (int i : flow.topo[size_t(sid)]) {
      double acc = g.m_small[size_t(i) * S + sid];
      for (int a : net.in_edges[size_t(i)]) {
        double ph = state.phi_at(sid, a);
        if (ph > 0.0) acc += ph * g.M[size_t(net.edges[size_t(a)].first) * S + sid];
      }
      g.M[size_t(i) * S + sid] = acc;
    }
  }
}

void compute_dJ_dFo(const Instance& inst, const DecisionState& state, const FlowState& flow,
                    const Marginals& marg, GradientBundle& g) {
  (void)flow;
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  g.dJ_dFo.assign(size_t(net.n_arcs()), 0.0);
  for (int a = 0; a < net.n_arcs(); ++a) {
    auto [i, j] = net.edges[size_t(a)];
    int rev = net.reverse_arc[size_t(a)];
    double fb = 0.0;
    for (int sid = 0; sid < S; ++sid) {
      if (cat.is_local(sid)) continue;
      double fwd = state.phi_at(sid, a) * g.M[size_t(i) * S + sid];
      double bwd = state.phi_at(sid, rev) * g.M[size_t(j) * S + sid];
      if (fwd != 0.0 || bwd != 0.0) fb += cat.services[size_t(sid)].l_res * (fwd + bwd);
    }
    // the anchor self-feedback (the per-arc 1/(1-B) geometric factor and its
    // cross-arc, cross-service siblings) is already folded into M via beta
    g.dJ_dFo[size_t(a)] = marg.big_d_prime[size_t(a)] + fb * marg.d_prime[size_t(a)];
  }
  // node-delay feedback: a busier host lengthens every round trip served there
  g.dJ_dG.assign(size_t(net.n_nodes), 0.0);
  for (int i = 0; i < net.n_nodes; ++i) {
    double fb = 0.0;
    for (int sid = 0; sid < S; ++sid) {
      if (cat.is_local(sid)) continue;
      double yy = state.y_at(i, sid);
      if (yy > 0.0) fb += cat.services[size_t(sid)].l_res * yy * g.M[size_t(i) * S + sid];
    }
    g.dJ_dG[size_t(i)] = marg.big_c_prime[size_t(i)] + fb * marg.c_prime[size_t(i)];
  }
}

void compute_delta_tau(const Instance& inst, const DecisionState& state, const FlowState& flow,
                       const Marginals& marg, GradientBundle& g) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  g.tau.assign(size_t(net.n_nodes) * S, 0.0);
  g.delta.assign(size_t(net.n_nodes) * S, 0.0);

  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    const Service& sv = cat.services[size_t(sid)];
    for (int i = 0; i < net.n_nodes; ++i) {
      // marginal tunneling flow is charged at the total flow derivative
      // dJ_dFo, not the bare D': the extra result traffic feeds back too
      double acc = 0.0;
      for (int a : net.out_edges[size_t(i)])
        acc += g.dJ_dFo[size_t(a)] * flow.p_at(sid, a);
      g.tau[size_t(i) * S + sid] = sv.l_res * acc;
    }
    const auto& order = flow.topo[size_t(sid)];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      int i = *it;
      double acc = state.y_at(i, sid) * sv.work * g.dJ_dG[size_t(i)];
      for (int a : net.out_edges[size_t(i)]) {
        double ph = state.phi_at(sid, a);
        if (ph <= 0.0) continue;
        int j = net.edges[size_t(a)].second;
        acc += ph * (sv.l_req * g.dJ_dFo[size_t(a)] +
                     sv.l_res * g.dJ_dFo[size_t(net.reverse_arc[size_t(a)])] +
                     g.delta[size_t(j) * S + sid]);
      }
      g.delta[size_t(i) * S + sid] = acc;
    }
  }
}

void assemble_gradients(const Instance& inst, const DecisionState& state, const FlowState& flow,
                        const Marginals& marg, GradientBundle& g) {
  (void)state;
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  g.dJ_ds.assign(size_t(net.n_nodes) * S, 0.0);
  g.dJ_dphi.assign(size_t(S) * net.n_arcs(), 0.0);
  g.dJ_dy.assign(size_t(net.n_nodes) * S, 0.0);
  g.xi.assign(size_t(net.n_nodes) * S, 0.0);

  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = cat.services[size_t(sid)];
    double uh = cat.u_hat(sid, net.d_ap);
    if (cat.is_local(sid)) {
      for (int i = 0; i < net.n_nodes; ++i)
        g.dJ_ds[size_t(i) * S + sid] = inst.demand.r(i, sv.task) * (sv.work * net.c_u - uh);
      continue;
    }
    for (int i = 0; i < net.n_nodes; ++i) {
      double mi = g.M[size_t(i) * S + sid];
      g.dJ_ds[size_t(i) * S + sid] =
          inst.demand.r(i, sv.task) *
          (g.delta[size_t(i) * S + sid] + g.tau[size_t(i) * S + sid] - uh);
      g.dJ_dy[size_t(i) * S + sid] = flow.t_at(i, sid) * sv.work * g.dJ_dG[size_t(i)] +
                                     sv.l_res * mi * flow.node_delay[size_t(i)];
      double ti = flow.t_at(i, sid);
      double xmin = std::numeric_limits<double>::infinity();
      for (int a : net.out_edges[size_t(i)]) {
        int j = net.edges[size_t(a)].second;
        int rev = net.reverse_arc[size_t(a)];
        // the direct term plus the round-trip lengthening seen by upstream
        // anchors when this hop's probability grows
        double val = ti * (sv.l_req * g.dJ_dFo[size_t(a)] + sv.l_res * g.dJ_dFo[size_t(rev)] +
                           g.delta[size_t(j) * S + sid]) +
                     sv.l_res * mi *
                         (flow.link_delay[size_t(a)] + flow.link_delay[size_t(rev)] +
                          flow.rtt[size_t(j) * S + sid]);
        g.dJ_dphi[size_t(sid) * net.n_arcs() + a] = val;
        xmin = std::min(xmin, val);
      }
      if (sv.l_mod > 0.0 && !net.out_edges[size_t(i)].empty())
        g.xi[size_t(i) * S + sid] = xmin / sv.l_mod;
    }
  }
  (void)marg;
}

GradientBundle compute_gradients(const Instance& inst, const DecisionState& state,
                                 const FlowState& flow, const GradOptions& opts) {
  GradientBundle g;
  g.n_nodes = inst.net.n_nodes;
  g.n_services = inst.catalog.n_services();
  g.n_arcs = inst.net.n_arcs();
  Marginals marg = compute_marginals(inst, flow);
  if (opts.ignore_mobility) {
    g.B.assign(size_t(g.n_arcs), 0.0);
    g.beta.assign(size_t(g.n_nodes), 0.0);
    g.m_small.assign(size_t(g.n_nodes) * g.n_services, 0.0);
    g.M.assign(size_t(g.n_nodes) * g.n_services, 0.0);
  } else {
    compute_B_and_m(inst, state, flow, marg, g);
    compute_M_recursion(inst, state, flow, g);
  }
  compute_dJ_dFo(inst, state, flow, marg, g);
  compute_delta_tau(inst, state, flow, marg, g);
  assemble_gradients(inst, state, flow, marg, g);
  return g;
}

// ---------------------------------------------------------------------------
// KKT residuals
// ---------------------------------------------------------------------------

KktResidual kkt_residual(const Instance& inst, const DecisionState& state,
                         const GradientBundle& g, PlacementMode mode,
                         const std::vector<std::vector<std::vector<int>>>* allowed_arcs) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  const double eps = 1e-9;
  KktResidual res;

  for (int i = 0; i < net.n_nodes; ++i) {
    for (int k = 0; k < cat.n_tasks; ++k) {
      double gmin = std::numeric_limits<double>::infinity();
      for (int sid : cat.task_services[size_t(k)]) gmin = std::min(gmin, g.ds_at(i, sid));
      for (int sid : cat.task_services[size_t(k)])
        if (state.s_at(i, sid) > eps)
          res.res_s = std::max(res.res_s, g.ds_at(i, sid) - gmin);
    }
  }

  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    for (int i = 0; i < net.n_nodes; ++i) {
      const std::vector<int>& arcs = allowed_arcs && !(*allowed_arcs)[size_t(sid)].empty()
                                         ? (*allowed_arcs)[size_t(sid)][size_t(i)]
                                         : net.out_edges[size_t(i)];
      if (arcs.empty()) continue;
      double gmin = std::numeric_limits<double>::infinity();
      for (int a : arcs) gmin = std::min(gmin, g.dphi_at(sid, a));
      for (int a : arcs)
        if (state.phi_at(sid, a) > eps)
          res.res_phi = std::max(res.res_phi, g.dphi_at(sid, a) - gmin);
    }
  }

  if (mode == PlacementMode::Joint) {
    for (int i = 0; i < net.n_nodes; ++i) {
      double xi_min = std::numeric_limits<double>::infinity();
      bool any = false;
      for (int sid = 0; sid < S; ++sid) {
        if (cat.is_local(sid) || cat.services[size_t(sid)].l_mod <= 0.0) continue;
        if (state.y_at(i, sid) > eps) {
          xi_min = std::min(xi_min, g.xi[size_t(i) * S + sid]);
          any = true;
        }
      }
      if (!any) continue;
      for (int sid = 0; sid < S; ++sid) {
        if (cat.is_local(sid) || cat.services[size_t(sid)].l_mod <= 0.0) continue;
        double yy = state.y_at(i, sid);
        double xi = g.xi[size_t(i) * S + sid];
        double viol;
        if (yy >= 1.0 - eps) viol = std::max(0.0, xi_min - xi);
        else if (yy <= eps) viol = std::max(0.0, xi - xi_min);
        else viol = std::abs(xi - xi_min);
        res.res_y = std::max(res.res_y, viol);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

namespace {

struct PairProbe {
  // moves mass between two coordinates of one simplex group
  enum class Kind { S, Phi, YPhi } kind;
  int i = 0, sid = 0, sid_ref = 0, arc = 0, arc_ref = 0;
};

double eval_probe(const Instance& inst, DecisionState state, const PairProbe& pr, double t,
                  double fp_tol) {
  switch (pr.kind) {
    case PairProbe::Kind::S:
      state.s_at(pr.i, pr.sid) += t;
      state.s_at(pr.i, pr.sid_ref) -= t;
      break;
    case PairProbe::Kind::Phi:
      state.phi_at(pr.sid, pr.arc) += t;
      state.phi_at(pr.sid, pr.arc_ref) -= t;
      break;
    case PairProbe::Kind::YPhi:
      state.y_at(pr.i, pr.sid) += t;
      state.phi_at(pr.sid, pr.arc_ref) -= t;
      break;
  }
  FlowSolveOptions opts;
  opts.tol = fp_tol;
  opts.max_iters = 5000;
  FlowState flow = solve_flow_fixed_point(inst, state, opts);
  return evaluate_objective(inst, flow, state).total_cost;
}

// central difference when both sides stay feasible, else one-sided
// second-order stencil
double directional_derivative(const Instance& inst, const DecisionState& state,
                              const PairProbe& pr, double plus_room, double minus_room,
                              double h, double fp_tol, bool* ok) {
  *ok = true;
  if (plus_room >= h && minus_room >= h) {
    double jp = eval_probe(inst, state, pr, h, fp_tol);
    double jm = eval_probe(inst, state, pr, -h, fp_tol);
    return (jp - jm) / (2.0 * h);
  }
  if (plus_room >= 2.0 * h) {
    double j0 = eval_probe(inst, state, pr, 0.0, fp_tol);
    double j1 = eval_probe(inst, state, pr, h, fp_tol);
    double j2 = eval_probe(inst, state, pr, 2.0 * h, fp_tol);
    return (-3.0 * j0 + 4.0 * j1 - j2) / (2.0 * h);
  }
  if (minus_room >= 2.0 * h) {
    double j0 = eval_probe(inst, state, pr, 0.0, fp_tol);
    double j1 = eval_probe(inst, state, pr, -h, fp_tol);
    double j2 = eval_probe(inst, state, pr, -2.0 * h, fp_tol);
    return (3.0 * j0 - 4.0 * j1 + j2) / (2.0 * h);
  }
  *ok = false;
  return 0.0;
}

}  // namespace

FdCheckResult finite_diff_check(const Instance& inst, const DecisionState& state,
                                const FdCheckOptions& opts,
                                const std::vector<std::vector<std::vector<int>>>* allowed_arcs) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  FdCheckResult out;

  FlowSolveOptions fopts;
  fopts.tol = opts.fp_tol;
  fopts.max_iters = 5000;
  FlowState flow = solve_flow_fixed_point(inst, state, fopts);
  GradientBundle g = compute_gradients(inst, state, flow);

  auto check = [&](const PairProbe& pr, double ga, double gb, double plus_room,
                   double minus_room, const std::string& label) {
    if (opts.max_pairs > 0 && out.n_pairs >= opts.max_pairs) return;
    bool usable = false;
    double fd = directional_derivative(inst, state, pr, plus_room, minus_room, opts.step,
                                       opts.fp_tol, &usable);
    if (!usable) return;
    double diff = ga - gb;
    double err = std::abs(fd - diff);
    double scale = std::max({std::abs(fd), std::abs(diff), std::abs(ga), std::abs(gb)});
    double allowance = std::max(opts.rel_tol * scale, opts.abs_floor);
    ++out.n_pairs;
    if (err > allowance) ++out.n_failed;
    double ratio = err / allowance;
    if (ratio > out.worst_ratio) {
      out.worst_ratio = ratio;
      out.worst_err = err;
      out.worst_pair = label + " fd=" + std::to_string(fd) + " grad=" + std::to_string(diff);
    }
  };

  // selection pairs per (i, k)
  for (int i = 0; i < net.n_nodes; ++i) {
    for (int k = 0; k < cat.n_tasks; ++k) {
      const auto& sids = cat.task_services[size_t(k)];
      if (sids.size() < 2) continue;
      int ref = sids.back();
      for (int sid : sids) {
        if (sid == ref) continue;
        PairProbe pr{PairProbe::Kind::S, i, sid, ref, 0, 0};
        double plus_room = std::min(1.0 - state.s_at(i, sid), state.s_at(i, ref));
        double minus_room = std::min(state.s_at(i, sid), 1.0 - state.s_at(i, ref));
        check(pr, g.ds_at(i, sid), g.ds_at(i, ref), plus_room, minus_room,
              "s(i=" + std::to_string(i) + ",k=" + std::to_string(k) + ",sid=" +
                  std::to_string(sid) + ")");
      }
    }
  }

  // routing-DAG arcs per remote service (placement taken from binary y
  // unless the caller supplies the run's own blocked sets)
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    std::vector<std::vector<int>> allowed;
    if (allowed_arcs) {
      allowed = (*allowed_arcs)[size_t(sid)];
    } else {
      std::vector<int> hosts;
      for (int i = 0; i < net.n_nodes; ++i)
        if (state.y_at(i, sid) >= 0.5) hosts.push_back(i);
      if (hosts.empty()) continue;
      allowed = service_routing_dag(net, hosts);
    }
    for (int i = 0; i < net.n_nodes; ++i) {
      const auto& arcs = allowed[size_t(i)];
      if (arcs.size() >= 2) {  // hosts skip via the feasibility rooms below
        int ref = arcs.back();
        for (int a : arcs) {
          if (a == ref) continue;
          PairProbe pr{PairProbe::Kind::Phi, i, sid, 0, a, ref};
          double plus_room = std::min(1.0 - state.phi_at(sid, a), state.phi_at(sid, ref));
          double minus_room = std::min(state.phi_at(sid, a), 1.0 - state.phi_at(sid, ref));
          check(pr, g.dphi_at(sid, a), g.dphi_at(sid, ref), plus_room, minus_room,
                "phi(sid=" + std::to_string(sid) + ",arc=" + std::to_string(a) + ")");
        }
      }
      // y against a routable arc (checks dJ_dy even at hosts, where the
      // perturbation opens a new DAG edge)
      if (!arcs.empty()) {
        int ref = arcs.front();
        PairProbe pr{PairProbe::Kind::YPhi, i, sid, 0, 0, ref};
        double plus_room = std::min(1.0 - state.y_at(i, sid), state.phi_at(sid, ref));
        double minus_room = std::min(state.y_at(i, sid), 1.0 - state.phi_at(sid, ref));
        check(pr, g.dy_at(i, sid), g.dphi_at(sid, ref), plus_room, minus_room,
              "y(i=" + std::to_string(i) + ",sid=" + std::to_string(sid) + ")");
      }
    }
  }
  return out;
}

}  // namespace spsr
