#include <cmath>
#include <functional>

#include "doctest.h"
#include "spsr/lfw.hpp"
#include "test_support.hpp"

using namespace spsr;
using namespace spsr::testing;

namespace {

// independent LP oracle: minimize <g, d> over the per-node direction polytope
// {d_y + sum_a d_phi = 1 per service, sum l_mod d_y <= R, d >= 0} by
// enumerating every vertex (each service at a simplex vertex, plus knapsack-
// tight vertices with exactly one service split between hosting and one arc)
struct NodePolytope {
  std::vector<double> l_mod;
  std::vector<double> host_grad;
  std::vector<std::vector<double>> arc_grads;  // per service, per allowed arc
  double capacity = 0.0;
};

double best_vertex_value(const NodePolytope& p) {
  const int n = int(p.l_mod.size());
  double best = std::numeric_limits<double>::infinity();
  // choice per service: -1 = host, otherwise arc index
  std::vector<int> choice(size_t(n), -1);
  std::function<void(int)> rec = [&](int depth) {
    if (depth == n) {
      double used = 0.0, value = 0.0;
      for (int i = 0; i < n; ++i) {
        if (choice[size_t(i)] < 0) {
          used += p.l_mod[size_t(i)];
          value += p.host_grad[size_t(i)];
        } else {
          value += p.arc_grads[size_t(i)][size_t(choice[size_t(i)])];
        }
      }
      if (used <= p.capacity + 1e-12) best = std::min(best, value);
      // knapsack-tight vertices: one hosted service becomes fractional,
      // remainder routed over one of its arcs
      for (int f = 0; f < n; ++f) {
        if (choice[size_t(f)] >= 0) continue;
        double used_rest = used - p.l_mod[size_t(f)];
        if (p.l_mod[size_t(f)] <= 0.0) continue;
        double yf = (p.capacity - used_rest) / p.l_mod[size_t(f)];
        if (yf <= 0.0 || yf >= 1.0) continue;
        double value_rest = value - p.host_grad[size_t(f)];
        for (double ag : p.arc_grads[size_t(f)]) {
          double v = value_rest + yf * p.host_grad[size_t(f)] + (1.0 - yf) * ag;
          best = std::min(best, v);
        }
      }
      return;
    }
    for (int c = -1; c < int(p.arc_grads[size_t(depth)].size()); ++c) {
      choice[size_t(depth)] = c;
      rec(depth + 1);
    }
  };
  rec(0);
  return best;
}

bool dag_is_acyclic(const NetworkModel& net, const std::vector<std::vector<int>>& allowed) {
  DecisionState probe = DecisionState::zeros(net.n_nodes, 1, net.n_arcs());
  for (int i = 0; i < net.n_nodes; ++i)
    for (int a : allowed[size_t(i)]) probe.phi_at(0, a) = 1.0;
  return !has_cycle_brute_force(net, probe, 0);
}

}  // namespace

TEST_CASE("blocked sets on a line force routing toward the host") {
  Instance inst;
  inst.net = NetworkModel::build(3, {{0, 1, 10.0}, {1, 2, 10.0}}, {10.0, 10.0, 10.0},
                                 {0.0, 0.0, 20.0});
  inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1}};
  inst.catalog.rebuild_task_index();
  DecisionState st = DecisionState::zeros(3, 1, inst.net.n_arcs());
  st.y_at(2, 0) = 1.0;
  BlockedSets blocked = build_blocked_sets(inst, st);
  REQUIRE(blocked.arcs(0, 0).size() == 1);
  CHECK(inst.net.edges[size_t(blocked.arcs(0, 0)[0])].second == 1);
  REQUIRE(blocked.arcs(0, 1).size() == 1);
  CHECK(inst.net.edges[size_t(blocked.arcs(0, 1)[0])].second == 2);
  CHECK(blocked.arcs(0, 2).empty());
}

TEST_CASE("host at every node leaves only id-tiebreak arcs") {
  Instance inst = diamond();
  DecisionState st = DecisionState::zeros(4, 1, inst.net.n_arcs());
  for (int i = 0; i < 4; ++i) st.y_at(i, 0) = 1.0;
  BlockedSets blocked = build_blocked_sets(inst, st);
  for (int i = 0; i < 4; ++i)
    for (int a : blocked.arcs(0, i)) CHECK(inst.net.edges[size_t(a)].second < i);
}

TEST_CASE("blocked-set dag on the grid is acyclic (corner host)") {
  Instance inst = grid3();
  DecisionState st = DecisionState::zeros(9, inst.catalog.n_services(), inst.net.n_arcs());
  st.y_at(8, 1) = 1.0;  // single corner host for service 1
  for (int i = 0; i < 9; ++i) st.y_at(i, 0) = st.y_at(i, 3) = 1.0;  // locals
  st.y_at(8, 2) = st.y_at(8, 4) = 1.0;
  BlockedSets blocked = build_blocked_sets(inst, st);
  for (int sid : {1, 2, 4}) CHECK(dag_is_acyclic(inst.net, blocked.allowed[size_t(sid)]));
}

TEST_CASE("fixed direction picks argmin coordinates") {
  // one node pair, task with three models
  Instance inst;
  inst.net = NetworkModel::build(2, {{0, 1, 10.0}}, {10.0, 10.0}, {100.0, 100.0});
  inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1},
                           {0, 2, 0.25, 0.75, 10.0, 1.0, 0.2},
                           {0, 3, 0.25, 0.75, 10.0, 1.0, 0.3}};
  inst.catalog.rebuild_task_index();
  DecisionState st = DecisionState::zeros(2, 3, inst.net.n_arcs());
  for (int sid = 0; sid < 3; ++sid) {
    st.y_at(1, sid) = 1.0;
    st.phi_at(sid, inst.net.arc_between(0, 1)) = 1.0;
    st.s_at(0, sid) = st.s_at(1, sid) = 1.0 / 3.0;
  }
  BlockedSets blocked = build_blocked_sets(inst, st);
  GradientBundle g;
  g.n_nodes = 2;
  g.n_services = 3;
  g.n_arcs = inst.net.n_arcs();
  g.dJ_ds = {0.5, 0.2, 0.9, 0.0, 0.0, 0.0};
  g.dJ_dphi.assign(size_t(3) * inst.net.n_arcs(), 0.0);
  g.dJ_dy.assign(6, 0.0);
  DirectionVectors dir = fw_direction_fixed(inst, g, blocked, st);
  CHECK(dir.s[0] == 0.0);
  CHECK(dir.s[1] == 1.0);
  CHECK(dir.s[2] == 0.0);
}

TEST_CASE("routing ties break toward the smaller node id") {
  Instance inst = diamond();
  DecisionState st = DecisionState::zeros(4, 1, inst.net.n_arcs());
  for (int i = 0; i < 4; ++i) st.s_at(i, 0) = 1.0;
  st.y_at(3, 0) = 1.0;
  st.phi_at(0, inst.net.arc_between(0, 1)) = 0.5;
  st.phi_at(0, inst.net.arc_between(0, 2)) = 0.5;
  st.phi_at(0, inst.net.arc_between(1, 3)) = 1.0;
  st.phi_at(0, inst.net.arc_between(2, 3)) = 1.0;
  BlockedSets blocked = build_blocked_sets(inst, st);
  GradientBundle g;
  g.n_nodes = 4;
  g.n_services = 1;
  g.n_arcs = inst.net.n_arcs();
  g.dJ_ds.assign(4, 0.0);
  g.dJ_dphi.assign(size_t(inst.net.n_arcs()), 0.7);  // exact tie everywhere
  g.dJ_dy.assign(4, 0.0);
  DirectionVectors dir = fw_direction_fixed(inst, g, blocked, st);
  CHECK(dir.phi[size_t(inst.net.arc_between(0, 1))] == 1.0);  // node 1 beats node 2
  CHECK(dir.phi[size_t(inst.net.arc_between(0, 2))] == 0.0);
}

TEST_CASE("joint direction with zero capacity reduces to fixed routing") {
  Instance inst = grid3(0.1);
  for (double& r : inst.net.storage) r = 0.0;
  DecisionState st = DecisionState::zeros(9, inst.catalog.n_services(), inst.net.n_arcs());
  for (int sid = 0; sid < inst.catalog.n_services(); ++sid) {
    if (inst.catalog.is_local(sid))
      for (int i = 0; i < 9; ++i) st.y_at(i, sid) = 1.0;
    else
      st.y_at(8, sid) = 1.0;  // DAG anchor only; capacity for directions is 0
  }
  BlockedSets blocked = build_blocked_sets(inst, st);
  GradientBundle g;
  g.n_nodes = 9;
  g.n_services = inst.catalog.n_services();
  g.n_arcs = inst.net.n_arcs();
  g.dJ_ds.assign(size_t(9) * g.n_services, 0.0);
  g.dJ_dphi.assign(size_t(g.n_services) * g.n_arcs, 0.0);
  for (size_t i = 0; i < g.dJ_dphi.size(); ++i) g.dJ_dphi[i] = 0.01 * double(i % 17);
  g.dJ_dy.assign(size_t(9) * g.n_services, -1.0);  // hosting looks great but R = 0
  DirectionVectors joint = fw_direction_joint(inst, g, blocked, st);
  DirectionVectors fixed = fw_direction_fixed(inst, g, blocked, st);
  for (int sid = 0; sid < g.n_services; ++sid) {
    if (inst.catalog.is_local(sid)) continue;
    for (int i = 0; i < 8; ++i) {  // node 8 is the host and has no arc choice
      for (int a : inst.net.out_edges[size_t(i)])
        CHECK(joint.phi[size_t(sid) * g.n_arcs + a] == fixed.phi[size_t(sid) * g.n_arcs + a]);
      CHECK(joint.y[size_t(i) * g.n_services + sid] == 0.0);
    }
    CHECK(joint.y[size_t(8) * g.n_services + sid] == 1.0);  // forced by the polytope
  }
}

TEST_CASE("dominant saving hosts the service fully") {
  Instance inst = two_node_line();
  DecisionState st = two_node_state(inst);
  BlockedSets blocked = build_blocked_sets(inst, st);
  GradientBundle g;
  g.n_nodes = 2;
  g.n_services = 1;
  g.n_arcs = inst.net.n_arcs();
  g.dJ_ds.assign(2, 0.0);
  g.dJ_dphi.assign(size_t(inst.net.n_arcs()), 1.0);
  g.dJ_dy.assign(2, 0.1);
  DirectionVectors dir = fw_direction_joint(inst, g, blocked, st);
  CHECK(dir.y[0] == 1.0);  // node 0 hosts fully (saving 0.9 > 0, l_mod 10 <= R 20)
  for (int a : inst.net.out_edges[0]) CHECK(dir.phi[size_t(a)] == 0.0);
}

TEST_CASE("knapsack fills by density until capacity runs out") {
  // one node with a neighbor host, three services, R = 30, l_mod = 10/20/30
  Instance inst;
  inst.net = NetworkModel::build(2, {{0, 1, 10.0}}, {10.0, 10.0}, {30.0, 100.0});
  inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1},
                           {1, 1, 0.25, 0.75, 20.0, 1.0, 0.1},
                           {2, 1, 0.25, 0.75, 30.0, 1.0, 0.1}};
  inst.catalog.rebuild_task_index();
  DecisionState st = DecisionState::zeros(2, 3, inst.net.n_arcs());
  for (int sid = 0; sid < 3; ++sid) {
    st.s_at(0, sid) = st.s_at(1, sid) = 1.0;
    st.y_at(1, sid) = 1.0;
    st.phi_at(sid, inst.net.arc_between(0, 1)) = 1.0;
  }
  BlockedSets blocked = build_blocked_sets(inst, st);
  GradientBundle g;
  g.n_nodes = 2;
  g.n_services = 3;
  g.n_arcs = inst.net.n_arcs();
  g.dJ_ds.assign(6, 0.0);
  g.dJ_dphi.assign(size_t(3) * inst.net.n_arcs(), 0.0);
  g.dJ_dy.assign(6, 0.0);
  int ab = inst.net.arc_between(0, 1);
  // savings per resource unit: 0.05, 0.03, 0.01
  g.dJ_dphi[size_t(0) * inst.net.n_arcs() + ab] = 0.5;
  g.dJ_dphi[size_t(1) * inst.net.n_arcs() + ab] = 0.6;
  g.dJ_dphi[size_t(2) * inst.net.n_arcs() + ab] = 0.3;
  DirectionVectors dir = fw_direction_joint(inst, g, blocked, st);
  CHECK(dir.y[0 * 3 + 0] == 1.0);
  CHECK(dir.y[0 * 3 + 1] == 1.0);
  CHECK(dir.y[0 * 3 + 2] == 0.0);
  CHECK(dir.phi[size_t(2) * inst.net.n_arcs() + ab] == 1.0);
}

TEST_CASE("joint direction matches exhaustive vertex enumeration") {
  Instance inst = grid3(0.1);
  for (int trial = 0; trial < 20; ++trial) {
    DecisionState st = random_feasible_state(inst, 100 + uint64_t(trial), PlacementMode::Joint);
    BlockedSets blocked = build_blocked_sets(inst, st);
    FlowState flow = solve_flow_fixed_point(inst, st);
    GradientBundle g = compute_gradients(inst, st, flow);
    DirectionVectors dir = fw_direction_joint(inst, g, blocked, st);
    const int S = inst.catalog.n_services();
    for (int i = 0; i < 9; ++i) {
      NodePolytope p;
      p.capacity = inst.net.storage[size_t(i)];
      double mine = 0.0;
      bool skip = false;
      for (int sid = 0; sid < S; ++sid) {
        if (inst.catalog.is_local(sid)) continue;
        if (blocked.arcs(sid, i).empty()) skip = true;  // forced-host corner
        p.l_mod.push_back(inst.catalog.services[size_t(sid)].l_mod);
        p.host_grad.push_back(g.dy_at(i, sid));
        std::vector<double> ag;
        for (int a : blocked.arcs(sid, i)) ag.push_back(g.dphi_at(sid, a));
        p.arc_grads.push_back(ag);
        mine += dir.y[size_t(i) * S + sid] * g.dy_at(i, sid);
        for (int a : blocked.arcs(sid, i))
          mine += dir.phi[size_t(sid) * inst.net.n_arcs() + a] * g.dphi_at(sid, a);
      }
      if (skip) continue;
      double oracle = best_vertex_value(p);
      CHECK(mine == doctest::Approx(oracle).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero step size freezes the trajectory") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 4, PlacementMode::Fixed);
  BlockedSets blocked = build_blocked_sets(inst, st);
  LfwOptions opts;
  opts.iters = 5;
  opts.schedule = StepSchedule::constant(0.0);
  Trajectory traj = lfw_run(inst, st, blocked, opts);
  REQUIRE(traj.rows.size() == 6);
  for (const IterStats& row : traj.rows)
    CHECK(row.total_cost == doctest::Approx(traj.rows[0].total_cost).epsilon(1e-12));
}

TEST_CASE("single-host tree needs zero effective steps") {
  // line 0-1-2, host at 2, single model: phi and s are forced everywhere
  Instance inst;
  inst.net = NetworkModel::build(3, {{0, 1, 10.0}, {1, 2, 10.0}}, {10.0, 10.0, 10.0},
                                 {0.0, 0.0, 20.0});
  inst.catalog.services = {{0, 1, 0.25, 0.75, 10.0, 1.0, 0.1}};
  inst.catalog.rebuild_task_index();
  inst.demand = RequestProfile::uniform(3, 1, 1.0);
  inst.mobility = MobilityModel::none(inst.net);
  DecisionState st = random_feasible_state(inst, 1, PlacementMode::Fixed);
  BlockedSets blocked = build_blocked_sets(inst, st);
  LfwOptions opts;
  opts.iters = 10;
  Trajectory traj = lfw_run(inst, st, blocked, opts);
  for (const IterStats& row : traj.rows)
    CHECK(row.total_cost == doctest::Approx(traj.rows[0].total_cost).epsilon(1e-12));
  CHECK(max_abs_diff(traj.final_state.phi, st.phi) <= 1e-15);
}

TEST_CASE("oracle and dmp gradients drive identical trajectories") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 6, PlacementMode::Joint);
  BlockedSets blocked = build_blocked_sets(inst, st);
  LfwOptions oracle_opts;
  oracle_opts.mode = PlacementMode::Joint;
  oracle_opts.iters = 100;
  oracle_opts.grad_source = GradSource::Oracle;
  LfwOptions dmp_opts = oracle_opts;
  dmp_opts.grad_source = GradSource::Dmp;
  Trajectory a = lfw_run(inst, st, blocked, oracle_opts);
  Trajectory b = lfw_run(inst, st, blocked, dmp_opts);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t r = 0; r < a.rows.size(); ++r)
    CHECK(std::abs(a.rows[r].total_cost - b.rows[r].total_cost) <= 1e-9);
  CHECK(max_abs_diff(a.final_state.s, b.final_state.s) <= 1e-9);
  CHECK(max_abs_diff(a.final_state.phi, b.final_state.phi) <= 1e-9);
  CHECK(max_abs_diff(a.final_state.y, b.final_state.y) <= 1e-9);
}

TEST_CASE("every iterate stays feasible and loop-free") {
  Instance inst = grid3(0.1);
  for (PlacementMode mode : {PlacementMode::Fixed, PlacementMode::Joint}) {
    DecisionState st = random_feasible_state(inst, 9, mode);
    BlockedSets blocked = build_blocked_sets(inst, st);
    LfwOptions opts;
    opts.mode = mode;
    opts.iters = 60;
    Trajectory traj = lfw_run(inst, st, blocked, opts);
    CHECK_FALSE(traj.aborted);
    auto rep = validate(inst.net, inst.catalog, traj.final_state);
    CHECK(rep.ok());
    for (int sid = 0; sid < inst.catalog.n_services(); ++sid)
      if (!inst.catalog.is_local(sid))
        CHECK(check_loop_free(inst.net, traj.final_state, sid));
  }
}

TEST_CASE("objective is monotone under a small constant step") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 12, PlacementMode::Fixed);
  BlockedSets blocked = build_blocked_sets(inst, st);
  LfwOptions opts;
  opts.iters = 150;
  opts.schedule = StepSchedule::constant(0.01);
  Trajectory traj = lfw_run(inst, st, blocked, opts);
  for (size_t r = 1; r < traj.rows.size(); ++r)
    CHECK(traj.rows[r].total_cost <= traj.rows[r - 1].total_cost + 1e-8);
}

TEST_CASE("diminishing steps shrink the KKT residuals on the grid") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 3, PlacementMode::Fixed);
  BlockedSets blocked = build_blocked_sets(inst, st);
  LfwOptions opts;
  opts.iters = 600;
  opts.schedule = StepSchedule::diminishing(8.0, 16.0);
  Trajectory traj = lfw_run(inst, st, blocked, opts);
  CHECK(traj.rows.back().total_cost <= traj.rows.front().total_cost);
  CHECK(traj.rows.back().res_s < 0.05 * (traj.rows.front().res_s + 1e-9));
  CHECK(traj.rows.back().res_phi < 0.2 * (traj.rows.front().res_phi + 1e-9));
}

TEST_CASE("safeguarded placement block steps stay feasible") {
  Instance inst = grid3(0.1);
  DecisionState st = random_feasible_state(inst, 5, PlacementMode::Joint);
  BlockedSets blocked = build_blocked_sets(inst, st);
  LfwOptions opts;
  opts.mode = PlacementMode::Joint;
  opts.iters = 120;
  opts.placement_block_step = 20;
  Trajectory traj = lfw_run(inst, st, blocked, opts);
  CHECK_FALSE(traj.aborted);
  CHECK(validate(inst.net, inst.catalog, traj.final_state).ok());
  for (int sid = 0; sid < inst.catalog.n_services(); ++sid)
    if (!inst.catalog.is_local(sid))
      CHECK(check_loop_free(inst.net, traj.final_state, sid));
  // an adopted jump never raises J: across a block-step boundary the
  // objective may only fall or follow the ordinary fractional step
  LfwOptions plain = opts;
  plain.placement_block_step = 0;
  Trajectory base = lfw_run(inst, st, blocked, plain);
  for (size_t r = 1; r < traj.rows.size(); ++r)
    if (int(r) % 20 == 1 && r < base.rows.size())
      CHECK(traj.rows[r].total_cost <=
            std::max(base.rows[r].total_cost, traj.rows[r - 1].total_cost) + 1e-9);
}
