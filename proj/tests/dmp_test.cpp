#include <cmath>
#include <functional>

#include "doctest.h"
#include "spsr/dmp.hpp"
#include "test_support.hpp"

using namespace spsr;
using namespace spsr::testing;

namespace {

double bundle_distance(const GradientBundle& a, const GradientBundle& b) {
  double m = 0.0;
  m = std::max(m, max_abs_diff(a.dJ_ds, b.dJ_ds));
  m = std::max(m, max_abs_diff(a.dJ_dphi, b.dJ_dphi));
  m = std::max(m, max_abs_diff(a.dJ_dy, b.dJ_dy));
  m = std::max(m, max_abs_diff(a.delta, b.delta));
  m = std::max(m, max_abs_diff(a.tau, b.tau));
  m = std::max(m, max_abs_diff(a.B, b.B));
  m = std::max(m, max_abs_diff(a.M, b.M));
  m = std::max(m, max_abs_diff(a.m_small, b.m_small));
  m = std::max(m, max_abs_diff(a.dJ_dFo, b.dJ_dFo));
  m = std::max(m, max_abs_diff(a.xi, b.xi));
  return m;
}

// longest support path (counted in nodes) over all remote services
int longest_support_path(const Instance& inst, const DecisionState& st) {
  int longest = 1;
  for (int sid = 0; sid < inst.catalog.n_services(); ++sid) {
    if (inst.catalog.is_local(sid)) continue;
    auto order = service_topo_order(inst.net, st, sid);
    std::vector<int> depth(size_t(inst.net.n_nodes), 1);
    for (int i : order)
      for (int a : inst.net.out_edges[size_t(i)])
        if (st.phi_at(sid, a) > 0.0) {
          int j = inst.net.edges[size_t(a)].second;
          depth[size_t(j)] = std::max(depth[size_t(j)], depth[size_t(i)] + 1);
        }
    for (int i = 0; i < inst.net.n_nodes; ++i) longest = std::max(longest, depth[size_t(i)]);
  }
  return longest;
}

}  // namespace

TEST_CASE("two-node line: one message per phase per service and oracle equality") {
  Instance inst = two_node_line(0.1);
  DecisionState st = two_node_state(inst);
  FlowState flow = solve_flow_fixed_point(inst, st);

  std::vector<std::vector<std::vector<int>>> allowed(1);
  allowed[0] = service_routing_dag(inst.net, {1});
  DmpOptions opts;
  opts.allowed_arcs = &allowed;
  DmpResult res = run_dmp(inst, st, flow, opts);
  CHECK(res.overhead.total_msgs() == 2);  // 1 MSG1 + 1 MSG2
  CHECK(res.overhead.msgs_sent[0] == 1);
  CHECK(res.overhead.msgs_sent[1] == 1);

  GradientBundle oracle = compute_gradients(inst, st, flow);
  int ab = inst.net.arc_between(0, 1);
  CHECK(std::abs(res.bundle.dphi_at(0, ab) - oracle.dphi_at(0, ab)) <= 1e-12);
  CHECK(max_abs_diff(res.bundle.dJ_ds, oracle.dJ_ds) <= 1e-12);
  CHECK(max_abs_diff(res.bundle.delta, oracle.delta) <= 1e-12);

  // without routing-protocol knowledge the full bundle is reconstructed
  DmpResult full = run_dmp(inst, st, flow);
  CHECK(bundle_distance(full.bundle, oracle) <= 1e-12);
}

TEST_CASE("static users: MSG1 values vanish but the protocol still terminates") {
  Instance inst = grid3(0.0);
  DecisionState st = random_feasible_state(inst, 3, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  DmpResult res = run_dmp(inst, st, flow);
  for (double v : res.bundle.M) CHECK(v == 0.0);
  for (double v : res.bundle.B) CHECK(v == 0.0);
  GradientBundle oracle = compute_gradients(inst, st, flow);
  CHECK(bundle_distance(res.bundle, oracle) <= 1e-12);
}

TEST_CASE("dmp equals the oracle on random mobile states") {
  for (double lambda : {0.05, 0.1}) {
    Instance inst = grid3(lambda);
    for (uint64_t seed = 1; seed <= 20; ++seed) {
      DecisionState st = random_feasible_state(inst, seed, PlacementMode::Fixed);
      FlowState flow = solve_flow_fixed_point(inst, st);
      DmpResult res = run_dmp(inst, st, flow);
      GradientBundle oracle = compute_gradients(inst, st, flow);
      CHECK(bundle_distance(res.bundle, oracle) <= 1e-9);
    }
  }
}

TEST_CASE("per-node message count stays within 2 |S| |N_i|") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 5, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  DmpResult res = run_dmp(inst, st, flow);
  const long S = inst.catalog.n_services();
  for (int i = 0; i < 9; ++i) {
    long deg = long(inst.net.out_edges[size_t(i)].size());
    CHECK(res.overhead.msgs_sent[size_t(i)] <= 2 * S * deg);
  }
}

TEST_CASE("rounds per phase are bounded by the longest support path") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 8, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  DmpResult res = run_dmp(inst, st, flow);
  int bound = longest_support_path(inst, st);
  CHECK(res.overhead.rounds_phase1 <= bound);
  CHECK(res.overhead.rounds_phase2 <= bound);
}

TEST_CASE("dmp rejects a cyclic support graph") {
  Instance inst;
  inst.net = NetworkModel::build(3, {{0, 1, 10.0}, {1, 2, 10.0}, {2, 0, 10.0}},
                                 {10.0, 10.0, 10.0}, {20.0, 20.0, 20.0});
  inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1}};
  inst.catalog.rebuild_task_index();
  inst.demand = RequestProfile::uniform(3, 1, 0.0);
  inst.mobility = MobilityModel::none(inst.net);
  DecisionState st = DecisionState::zeros(3, 1, inst.net.n_arcs());
  for (int i = 0; i < 3; ++i) st.s_at(i, 0) = 1.0;
  st.phi_at(0, inst.net.arc_between(0, 1)) = 1.0;
  st.phi_at(0, inst.net.arc_between(1, 2)) = 1.0;
  st.phi_at(0, inst.net.arc_between(2, 0)) = 1.0;
  FlowState flow;  // fields barely populated: the loop check fires first
  flow.n_nodes = 3;
  flow.n_services = 1;
  flow.n_arcs = inst.net.n_arcs();
  flow.topo.resize(1);
  flow.t.assign(3, 0.0);
  flow.workload.assign(3, 0.0);
  flow.node_delay.assign(3, 0.1);
  flow.link_delay.assign(size_t(inst.net.n_arcs()), 0.1);
  flow.flow_total.assign(size_t(inst.net.n_arcs()), 0.0);
  flow.rtt_static.assign(3, 0.0);
  std::vector<double> rtt = flow.rtt_static;
  auto views = build_node_views(inst, st, flow, rtt);
  CHECK_THROWS_AS(run_dmp_round(inst, views, st, {}), LoopDetected);
}

TEST_CASE("rtt measurement") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 2, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  SUBCASE("sigma 0 is exact") {
    auto rtt = measure_rtt(flow, 0.0, 1);
    CHECK(rtt == flow.rtt_static);
  }
  SUBCASE("noisy copies are deterministic per seed") {
    auto a = measure_rtt(flow, 0.01, 42);
    auto b = measure_rtt(flow, 0.01, 42);
    CHECK(a == b);
    auto c = measure_rtt(flow, 0.01, 43);
    CHECK(a != c);
  }
}

TEST_CASE("gradient error under rtt noise is recorded, not asserted") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 2, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  GradientBundle oracle = compute_gradients(inst, st, flow);
  double worst = 0.0, sum = 0.0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    DmpOptions opts;
    opts.rtt_noise_sigma = 0.01;
    opts.noise_seed = uint64_t(t + 1);
    DmpResult res = run_dmp(inst, st, flow, opts);
    double d = max_abs_diff(res.bundle.dJ_ds, oracle.dJ_ds);
    worst = std::max(worst, d);
    sum += d;
  }
  MESSAGE("dmp rtt-noise sigma=0.01: mean |dJ_ds error| = " << sum / trials
                                                            << ", worst = " << worst);
  CHECK(worst < 1.0);  // sanity only; the magnitude is reported above
}

TEST_CASE("node views hold only local and neighbor fields") {
  // structural locality: every view field is indexed by the node itself or
  // one of its adjacent arcs; spot-check the adjacency wiring
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 2, PlacementMode::Fixed);
  FlowState flow = solve_flow_fixed_point(inst, st);
  auto rtt = measure_rtt(flow, 0.0, 0);
  auto views = build_node_views(inst, st, flow, rtt);
  for (int i = 0; i < inst.net.n_nodes; ++i) {
    const NodeLocalView& v = views[size_t(i)];
    CHECK(v.id == i);
    CHECK(v.adj.size() == inst.net.out_edges[size_t(i)].size());
    for (const AdjacentArc& arc : v.adj) {
      CHECK(inst.net.edges[size_t(arc.arc)].first == i);
      CHECK(inst.net.edges[size_t(arc.rev_arc)].second == i);
      CHECK(inst.net.edges[size_t(arc.arc)].second == arc.nbr);
    }
  }
}
