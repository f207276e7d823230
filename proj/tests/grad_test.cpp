#include <cmath>

#include "doctest.h"
#include "spsr/grad.hpp"
#include "test_support.hpp"

using namespace spsr;
using namespace spsr::testing;

namespace {

// J evaluated with an extra exogenous static-flow injection per arc and an
// extra exogenous request rate per (node, service): the ground truth for
// dJ_dFo and the delta recursion. Re-runs the tunneling fixed point with the
// library's own building blocks.
double eval_with_injection(const Instance& inst, const DecisionState& st,
                           const std::vector<double>& arc_injection,
                           const std::vector<double>& rate_injection) {
  const int S = inst.catalog.n_services();
  FlowState flow;
  flow.topo.clear();
  compute_traffic(inst, st, flow);
  if (!rate_injection.empty()) {
    // propagate extra arrivals downstream through the routing DAG
    for (int sid = 0; sid < S; ++sid) {
      if (inst.catalog.is_local(sid)) continue;
      std::vector<double> extra(size_t(inst.net.n_nodes), 0.0);
      for (int i = 0; i < inst.net.n_nodes; ++i)
        extra[size_t(i)] = rate_injection[size_t(i) * S + sid];
      for (int i : flow.topo[size_t(sid)]) {
        for (int a : inst.net.in_edges[size_t(i)]) {
          double ph = st.phi_at(sid, a);
          if (ph > 0.0) extra[size_t(i)] += ph * extra[size_t(inst.net.edges[size_t(a)].first)];
        }
      }
      for (int i = 0; i < inst.net.n_nodes; ++i) {
        double e = extra[size_t(i)];
        if (e == 0.0) continue;
        flow.t[size_t(i) * S + sid] += e;
        for (int a : inst.net.out_edges[size_t(i)])
          flow.f[size_t(sid) * inst.net.n_arcs() + a] += st.phi_at(sid, a) * e;
      }
    }
  }
  flow.flow_static = compute_static_flows(inst.catalog, inst.net, flow.f, S);
  if (!arc_injection.empty())
    for (int a = 0; a < inst.net.n_arcs(); ++a)
      flow.flow_static[size_t(a)] += arc_injection[size_t(a)];

  flow.workload.assign(size_t(inst.net.n_nodes), 0.0);
  for (int sid = 0; sid < S; ++sid) {
    if (inst.catalog.is_local(sid)) continue;
    const Service& sv = inst.catalog.services[size_t(sid)];
    for (int i = 0; i < inst.net.n_nodes; ++i)
      flow.workload[size_t(i)] += sv.work * st.y_at(i, sid) * flow.t_at(i, sid);
  }
  flow.node_delay.assign(size_t(inst.net.n_nodes), 0.0);
  for (int i = 0; i < inst.net.n_nodes; ++i)
    flow.node_delay[size_t(i)] =
        inst.cost.node_delay(inst.net.nu[size_t(i)], flow.workload[size_t(i)]);

  flow.flow_tun.assign(size_t(inst.net.n_arcs()), 0.0);
  for (int iter = 0; iter < 3000; ++iter) {
    flow.flow_total.assign(size_t(inst.net.n_arcs()), 0.0);
    flow.link_delay.assign(size_t(inst.net.n_arcs()), 0.0);
    for (int a = 0; a < inst.net.n_arcs(); ++a) {
      flow.flow_total[size_t(a)] = flow.flow_static[size_t(a)] + flow.flow_tun[size_t(a)];
      flow.link_delay[size_t(a)] =
          inst.cost.link_delay(inst.net.mu[size_t(a)], flow.flow_total[size_t(a)]);
    }
    compute_static_rtt(inst, st, flow.link_delay, flow.node_delay, flow);
    std::vector<double> before = flow.flow_tun;
    compute_tunneling(inst, st, flow);
    double resid = max_abs_diff(before, flow.flow_tun);
    if (resid <= 1e-13) break;
  }
  flow.flow_total.assign(size_t(inst.net.n_arcs()), 0.0);
  flow.link_delay.assign(size_t(inst.net.n_arcs()), 0.0);
  for (int a = 0; a < inst.net.n_arcs(); ++a) {
    flow.flow_total[size_t(a)] = flow.flow_static[size_t(a)] + flow.flow_tun[size_t(a)];
    flow.link_delay[size_t(a)] =
        inst.cost.link_delay(inst.net.mu[size_t(a)], flow.flow_total[size_t(a)]);
  }
  compute_static_rtt(inst, st, flow.link_delay, flow.node_delay, flow);

  double j = 0.0;
  for (int a = 0; a < inst.net.n_arcs(); ++a)
    j += flow.flow_total[size_t(a)] * flow.link_delay[size_t(a)];
  for (int i = 0; i < inst.net.n_nodes; ++i)
    j += flow.workload[size_t(i)] * flow.node_delay[size_t(i)];
  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = inst.catalog.services[size_t(sid)];
    double uh = inst.catalog.u_hat(sid, inst.net.d_ap);
    for (int i = 0; i < inst.net.n_nodes; ++i) {
      double rate = inst.demand.r(i, sv.task) * st.s_at(i, sid);
      if (inst.catalog.is_local(sid)) j += sv.work * inst.net.c_u * rate;
      j -= uh * rate;
    }
  }
  return j;
}

}  // namespace

TEST_CASE("marginals in closed form") {
  SUBCASE("mm1 at mu=10, F=0.25") {
    Instance inst = two_node_line();
    DecisionState st = two_node_state(inst);
    FlowState flow = solve_flow_fixed_point(inst, st);
    Marginals m = compute_marginals(inst, flow);
    int ab = inst.net.arc_between(0, 1);
    CHECK(flow.link_delay[size_t(ab)] == doctest::Approx(0.1025641));
    CHECK(m.d_prime[size_t(ab)] == doctest::Approx(0.0105194).epsilon(1e-5));
    CHECK(m.big_d_prime[size_t(ab)] == doctest::Approx(0.1051940).epsilon(1e-6));
  }
  SUBCASE("zero flow gives D' = d(0)") {
    Instance inst = two_node_line();
    inst.demand.r(0, 0) = 0.0;
    DecisionState st = two_node_state(inst);
    FlowState flow = solve_flow_fixed_point(inst, st);
    Marginals m = compute_marginals(inst, flow);
    for (int a = 0; a < inst.net.n_arcs(); ++a)
      CHECK(m.big_d_prime[size_t(a)] == doctest::Approx(0.1));
  }
  SUBCASE("taylor3 derivative at zero") {
    CHECK(CostModel::delay_deriv(DelayFamily::Taylor3, 10.0, 0.0) == doctest::Approx(0.01));
  }
}

TEST_CASE("B and m vanish without mobility") {
  Instance inst = grid3(0.0);
  DecisionState st = random_feasible_state(inst, 2, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  GradientBundle g = compute_gradients(inst, st, flow);
  for (double v : g.B) CHECK(v == 0.0);
  for (double v : g.m_small) CHECK(v == 0.0);
  for (double v : g.M) CHECK(v == 0.0);
}

TEST_CASE("B scalar evaluation at q=0.5") {
  // star A->{B,C}, lambda=0.05 each, service routed A->B with pinned inputs
  Instance inst;
  inst.net = NetworkModel::build(3, {{0, 1, 10.0}, {0, 2, 10.0}}, {10.0, 10.0, 10.0},
                                 {20.0, 20.0, 20.0});
  inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1}};
  inst.catalog.rebuild_task_index();
  inst.demand = RequestProfile::uniform(3, 1, 0.0);
  inst.demand.r(0, 0) = 1.0;
  std::vector<double> lam(size_t(inst.net.n_arcs()), 0.0);
  lam[size_t(inst.net.arc_between(0, 1))] = 0.05;
  lam[size_t(inst.net.arc_between(0, 2))] = 0.05;
  inst.mobility = MobilityModel::from_rates(inst.net, lam);
  DecisionState st = DecisionState::zeros(3, 1, inst.net.n_arcs());
  for (int i = 0; i < 3; ++i) st.s_at(i, 0) = 1.0;
  st.y_at(1, 0) = 1.0;
  st.phi_at(0, inst.net.arc_between(0, 1)) = 1.0;

  FlowState flow;
  compute_traffic(inst, st, flow);
  flow.rtt_static.assign(3, 0.0);
  flow.rtt_static[0] = 0.3217833;
  Marginals marg;
  marg.d_prime.assign(size_t(inst.net.n_arcs()), 0.0105194);
  marg.big_d_prime.assign(size_t(inst.net.n_arcs()), 0.1051940);
  marg.c_prime.assign(3, 0.0);
  marg.big_c_prime.assign(3, 0.0);

  GradientBundle g;
  g.n_nodes = 3;
  g.n_services = 1;
  g.n_arcs = inst.net.n_arcs();
  compute_B_and_m(inst, st, flow, marg, g);
  int ab = inst.net.arc_between(0, 1);
  double expected_b = 0.1 * 0.5 * 0.0105194 * std::exp(-0.1 * 0.3217833);
  CHECK(g.B[size_t(ab)] == doctest::Approx(expected_b).epsilon(1e-12));
  CHECK(expected_b == doctest::Approx(5.0931e-4).epsilon(1e-4));
  // phi = 0 on (0,2): that service contributes nothing there
  CHECK(g.B[size_t(inst.net.arc_between(0, 2))] == 0.0);
  // m_A = Lambda r s exp(-Lambda D) * sum_j D'_Aj q_Aj over both neighbors,
  // amplified by the anchor's own-feedback geometric factor 1/(1-beta)
  double beta = 0.75 * 0.1 * std::exp(-0.1 * 0.3217833) * (1.0 * 0.5 * 0.0105194);
  double expected_m =
      0.1 * std::exp(-0.1 * 0.3217833) * (0.1051940 * 0.5 + 0.1051940 * 0.5) / (1.0 - beta);
  CHECK(g.m_small[0] == doctest::Approx(expected_m).epsilon(1e-12));
}

TEST_CASE("M recursion") {
  SUBCASE("chain passes m downstream") {
    Instance inst = two_node_line(0.1);
    DecisionState st = two_node_state(inst);
    FlowState flow = solve_flow_fixed_point(inst, st);
    Marginals marg = compute_marginals(inst, flow);
    GradientBundle g;
    g.n_nodes = 2;
    g.n_services = 1;
    g.n_arcs = inst.net.n_arcs();
    compute_B_and_m(inst, st, flow, marg, g);
    compute_M_recursion(inst, st, flow, g);
    CHECK(g.M[0] == g.m_small[0]);                 // source: M = m
    CHECK(g.M[1] == doctest::Approx(g.m_small[0] + g.m_small[1]));  // phi = 1 pass-through
  }
  SUBCASE("diamond join matches the unrolled-path oracle") {
    Instance inst = diamond();
    std::vector<double> lam(size_t(inst.net.n_arcs()), 0.02);
    inst.mobility = MobilityModel::from_rates(inst.net, lam);
    DecisionState st = DecisionState::zeros(4, 1, inst.net.n_arcs());
    for (int i = 0; i < 4; ++i) st.s_at(i, 0) = 1.0;
    st.y_at(3, 0) = 1.0;
    st.phi_at(0, inst.net.arc_between(0, 1)) = 0.5;
    st.phi_at(0, inst.net.arc_between(0, 2)) = 0.5;
    st.phi_at(0, inst.net.arc_between(1, 3)) = 1.0;
    st.phi_at(0, inst.net.arc_between(2, 3)) = 1.0;
    FlowState flow = solve_flow_fixed_point(inst, st);
    Marginals marg = compute_marginals(inst, flow);
    GradientBundle g;
    g.n_nodes = 4;
    g.n_services = 1;
    g.n_arcs = inst.net.n_arcs();
    compute_B_and_m(inst, st, flow, marg, g);
    compute_M_recursion(inst, st, flow, g);
    for (int i = 0; i < 4; ++i)
      CHECK(g.M[size_t(i)] ==
            doctest::Approx(m_by_path_unroll(inst, st, g.m_small, 0, i)).epsilon(1e-12));
  }
}

TEST_CASE("dJ_dFo reduces to D' without mobility") {
  Instance inst = grid3(0.0);
  DecisionState st = random_feasible_state(inst, 5, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  Marginals marg = compute_marginals(inst, flow);
  GradientBundle g = compute_gradients(inst, st, flow);
  for (int a = 0; a < inst.net.n_arcs(); ++a)
    CHECK(g.dJ_dFo[size_t(a)] == doctest::Approx(marg.big_d_prime[size_t(a)]).epsilon(1e-15));
}

TEST_CASE("dJ_dFo matches finite differences of an exogenous injection") {
  // single anchor: the node-local resummation makes the sensitivity exact,
  // so the only residual is finite-difference truncation
  Instance inst = two_node_line(0.1);
  DecisionState st = two_node_state(inst);
  FlowState flow = solve_flow_fixed_point(inst, st, {1e-13, 5000});
  GradientBundle g = compute_gradients(inst, st, flow);
  const double h = 1e-6;
  for (int a = 0; a < inst.net.n_arcs(); ++a) {
    std::vector<double> inj(size_t(inst.net.n_arcs()), 0.0);
    inj[size_t(a)] = h;
    double jp = eval_with_injection(inst, st, inj, {});
    inj[size_t(a)] = -h;
    double jm = eval_with_injection(inst, st, inj, {});
    double fd = (jp - jm) / (2.0 * h);
    CHECK(g.dJ_dFo[size_t(a)] == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("anchor self-feedback resummation scales the propagated weights") {
  // doubling the geometric factor must double the mobility correction: check
  // 1/(1-beta) against the directly-computed unresummed weight
  Instance inst = two_node_line(0.1);
  DecisionState st = two_node_state(inst);
  FlowState flow = solve_flow_fixed_point(inst, st);
  Marginals marg = compute_marginals(inst, flow);
  GradientBundle g;
  g.n_nodes = 2;
  g.n_services = 1;
  g.n_arcs = inst.net.n_arcs();
  compute_B_and_m(inst, st, flow, marg, g);
  REQUIRE(g.beta[0] > 0.0);
  double big = inst.mobility.big_lambda[0];
  double dq_sum = 0.0;
  for (int a : inst.net.out_edges[0])
    dq_sum += marg.big_d_prime[size_t(a)] * inst.mobility.q[size_t(a)];
  double bare = big * std::exp(-big * flow.rtt_static_at(0, 0)) * dq_sum;
  CHECK(g.m_small[0] == doctest::Approx(bare / (1.0 - g.beta[0])).epsilon(1e-12));
  // beta aggregates the per-arc factors: on this instance it is the
  // result-size-weighted first-hop self term
  double expected_beta =
      inst.catalog.services[0].l_res * big *
      std::exp(-big * flow.rtt_static_at(0, 0)) *
      marg.d_prime[size_t(inst.net.arc_between(0, 1))];
  CHECK(g.beta[0] == doctest::Approx(expected_beta).epsilon(1e-12));
}

TEST_CASE("delta and tau") {
  SUBCASE("full host without mobility: delta = W C'") {
    Instance inst = two_node_line(0.0);
    DecisionState st = two_node_state(inst);
    FlowState flow = solve_flow_fixed_point(inst, st);
    GradientBundle g = compute_gradients(inst, st, flow);
    CHECK(g.delta[1] == doctest::Approx(1.0 / 9.0 + 1.0 / 81.0).epsilon(1e-9));
    CHECK(g.delta[1] == doctest::Approx(0.1234568).epsilon(1e-6));
    for (double v : g.tau) CHECK(v == 0.0);  // p = 0 everywhere
  }
  SUBCASE("hosting closed form holds on random mobile states") {
    Instance inst = grid3(0.1);
    DecisionState st = random_feasible_state(inst, 6, PlacementMode::Fixed);
    FlowState flow = solve_flow_fixed_point(inst, st);
    GradientBundle g = compute_gradients(inst, st, flow);
    const int S = inst.catalog.n_services();
    for (int sid = 0; sid < S; ++sid) {
      if (inst.catalog.is_local(sid)) continue;
      double w = inst.catalog.services[size_t(sid)].work;
      for (int i = 0; i < 9; ++i)
        if (st.y_at(i, sid) == 1.0)
          CHECK(g.delta[size_t(i) * S + sid] ==
                doctest::Approx(w * g.dJ_dG[size_t(i)]).epsilon(1e-12));
    }
  }
  SUBCASE("relay recursion verified by injected-rate finite differences") {
    // chain A=0 -> B=1 -> C=2 with host C, mobility only at A
    Instance inst;
    inst.net = NetworkModel::build(3, {{0, 1, 10.0}, {1, 2, 10.0}}, {10.0, 10.0, 10.0},
                                   {20.0, 20.0, 20.0});
    inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1}};
    inst.catalog.rebuild_task_index();
    inst.demand = RequestProfile::uniform(3, 1, 0.0);
    inst.demand.r(0, 0) = 1.0;
    std::vector<double> lam(size_t(inst.net.n_arcs()), 0.0);
    lam[size_t(inst.net.arc_between(0, 1))] = 0.1;
    inst.mobility = MobilityModel::from_rates(inst.net, lam);
    inst.cost.link_family = DelayFamily::Mm1;
    inst.cost.node_family = DelayFamily::Mm1;
    DecisionState st = DecisionState::zeros(3, 1, inst.net.n_arcs());
    for (int i = 0; i < 3; ++i) st.s_at(i, 0) = 1.0;
    st.y_at(2, 0) = 1.0;
    st.phi_at(0, inst.net.arc_between(0, 1)) = 1.0;
    st.phi_at(0, inst.net.arc_between(1, 2)) = 1.0;

    FlowState flow = solve_flow_fixed_point(inst, st, {1e-13, 5000});
    GradientBundle g = compute_gradients(inst, st, flow);
    // one-step recursion
    int bc = inst.net.arc_between(1, 2), cb = inst.net.arc_between(2, 1);
    CHECK(g.delta[1] == doctest::Approx(0.25 * g.dJ_dFo[size_t(bc)] +
                                        0.75 * g.dJ_dFo[size_t(cb)] + g.delta[2])
                            .epsilon(1e-12));
    // finite difference of an endogenous arrival at the relay
    const double h = 1e-6;
    std::vector<double> inj(3, 0.0);
    inj[1] = h;
    double jp = eval_with_injection(inst, st, {}, inj);
    inj[1] = -h;
    double jm = eval_with_injection(inst, st, {}, inj);
    CHECK(g.delta[1] == doctest::Approx((jp - jm) / (2.0 * h)).epsilon(1e-4));
  }
}

TEST_CASE("assembled gradients on the static two-node line") {
  Instance inst = two_node_line(0.0);
  DecisionState st = two_node_state(inst);
  FlowState flow = solve_flow_fixed_point(inst, st);
  GradientBundle g = compute_gradients(inst, st, flow);
  // delta_A = 0.25 D'_AB + 0.75 D'_BA + delta_B
  double expect = 0.25 * 0.1051940 + 0.75 * 0.1168736 + 0.1234568 - 0.1;
  CHECK(g.ds_at(0, 0) == doctest::Approx(expect).epsilon(1e-5));
  CHECK(g.ds_at(0, 0) == doctest::Approx(0.1374105).epsilon(1e-5));
}

TEST_CASE("zero traffic zeroes the routing gradient") {
  Instance inst = grid3(0.0);
  DecisionState st = random_feasible_state(inst, 8, PlacementMode::Fixed);
  // cut all selection mass from service 1 everywhere
  for (int i = 0; i < 9; ++i) {
    st.s_at(i, 0) += st.s_at(i, 1);
    st.s_at(i, 1) = 0.0;
  }
  FlowState flow = solve_flow_fixed_point(inst, st);
  GradientBundle g = compute_gradients(inst, st, flow);
  for (int a = 0; a < inst.net.n_arcs(); ++a) CHECK(g.dphi_at(1, a) == 0.0);
}

TEST_CASE("gradients match central finite differences on the grid") {
  for (double lambda : {0.0, 0.1}) {
    CAPTURE(lambda);
    Instance inst = grid3(lambda);
    DecisionState st = random_feasible_state(inst, 7, PlacementMode::Fixed);
    FdCheckResult res = finite_diff_check(inst, st);
    CAPTURE(res.worst_pair);
    CAPTURE(res.worst_ratio);
    CHECK(res.n_pairs > 50);
    CHECK(res.n_failed == 0);
  }
}

TEST_CASE("kkt residual readoffs") {
  Instance inst = two_node_line();
  DecisionState st = two_node_state(inst);
  GradientBundle g;
  g.n_nodes = 2;
  g.n_services = 1;
  g.n_arcs = inst.net.n_arcs();
  g.dJ_ds.assign(2, 0.7);
  g.dJ_dphi.assign(size_t(inst.net.n_arcs()), 0.0);
  g.dJ_dy.assign(2, 0.0);
  g.xi.assign(2, 0.0);

  SUBCASE("singleton choice sets have zero residual") {
    KktResidual res = kkt_residual(inst, st, g, PlacementMode::Fixed);
    CHECK(res.res_s == 0.0);
    CHECK(res.res_phi == 0.0);
    CHECK(res.res_y == 0.0);
  }
}

TEST_CASE("kkt residual equals the gap of an even split") {
  // one task, two remote models at one node
  Instance inst;
  inst.net = NetworkModel::build(2, {{0, 1, 10.0}}, {10.0, 10.0}, {40.0, 40.0});
  inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1}, {0, 2, 0.25, 0.75, 10.0, 1.0, 0.2}};
  inst.catalog.rebuild_task_index();
  inst.demand = RequestProfile::uniform(2, 1, 1.0);
  inst.mobility = MobilityModel::none(inst.net);
  DecisionState st = DecisionState::zeros(2, 2, inst.net.n_arcs());
  st.s_at(0, 0) = st.s_at(0, 1) = 0.5;
  st.s_at(1, 0) = st.s_at(1, 1) = 0.5;
  st.y_at(1, 0) = st.y_at(1, 1) = 1.0;
  st.phi_at(0, inst.net.arc_between(0, 1)) = 1.0;
  st.phi_at(1, inst.net.arc_between(0, 1)) = 1.0;

  GradientBundle g;
  g.n_nodes = 2;
  g.n_services = 2;
  g.n_arcs = inst.net.n_arcs();
  g.dJ_ds = {0.5, 0.2, 0.2, 0.2};  // node 0 split across gradients 0.5 vs 0.2
  g.dJ_dphi.assign(size_t(2) * inst.net.n_arcs(), 0.0);
  g.dJ_dy.assign(4, 0.0);
  g.xi.assign(4, 0.0);
  KktResidual res = kkt_residual(inst, st, g, PlacementMode::Fixed);
  CHECK(res.res_s == doctest::Approx(0.3));
}

TEST_CASE("zero residual when all mass sits on the argmin model") {
  Instance inst = grid3(0.0);
  DecisionState st = random_feasible_state(inst, 3, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  GradientBundle g = compute_gradients(inst, st, flow);
  // rebuild s so each (i,k) puts everything on its argmin
  const int S = inst.catalog.n_services();
  for (int i = 0; i < 9; ++i)
    for (int k = 0; k < inst.catalog.n_tasks; ++k) {
      int best = -1;
      double gmin = 1e300;
      for (int sid : inst.catalog.task_services[size_t(k)]) {
        if (g.ds_at(i, sid) < gmin) {
          gmin = g.ds_at(i, sid);
          best = sid;
        }
        st.s_at(i, sid) = 0.0;
      }
      st.s_at(i, best) = 1.0;
    }
  (void)S;
  KktResidual res = kkt_residual(inst, st, g, PlacementMode::Fixed);
  CHECK(res.res_s == 0.0);
}

TEST_CASE("static users with unit requests recover the classic decomposition") {
  Instance inst = grid3(0.0);
  for (Service& sv : inst.catalog.services) {
    if (sv.model == 0) continue;
    sv.l_req = 1.0;
    sv.l_res = 0.0;
  }
  DecisionState st = random_feasible_state(inst, 11, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  GradientBundle g = compute_gradients(inst, st, flow);
  ClassicDecomposition classic = classic_decomposition(inst, st, flow);
  CHECK(max_abs_diff(g.delta, classic.delta) <= 1e-12);
  CHECK(max_abs_diff(g.dJ_dphi, classic.dphi) <= 1e-12);
}
