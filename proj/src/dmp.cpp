#include "spsr/dmp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spsr/rng.hpp"

namespace spsr {

long OverheadStats::total_msgs() const {
  long total = 0;
  for (long v : msgs_sent) total += v;
  return total;
}

std::vector<double> measure_rtt(const FlowState& flow, double sigma, uint64_t seed) {
  std::vector<double> out = flow.rtt_static;
  if (sigma > 0.0) {
    Rng rng(seed * 0x2545f4914f6cdd1dull + 3);
    for (double& v : out) v *= 1.0 + sigma * rng.normal();
  }
  return out;
}

std::vector<NodeLocalView> build_node_views(const Instance& inst, const DecisionState& state,
                                            const FlowState& flow,
                                            const std::vector<double>& measured_rtt) {
  const NetworkModel& net = inst.net;
  const int S = inst.catalog.n_services();
  std::vector<NodeLocalView> views(size_t(net.n_nodes));
  for (int i = 0; i < net.n_nodes; ++i) {
    NodeLocalView& v = views[size_t(i)];
    v.id = i;
    v.big_lambda = inst.mobility.big_lambda[size_t(i)];
    v.node_delay = flow.node_delay[size_t(i)];
    v.node_delay_prime =
        inst.cost.node_delay_deriv(net.nu[size_t(i)], flow.workload[size_t(i)]);
    v.node_big_c_prime = v.node_delay + flow.workload[size_t(i)] * v.node_delay_prime;
    for (int a : net.out_edges[size_t(i)]) {
      AdjacentArc arc;
      arc.arc = a;
      arc.rev_arc = net.reverse_arc[size_t(a)];
      arc.nbr = net.edges[size_t(a)].second;
      arc.d_fwd = flow.link_delay[size_t(a)];
      arc.d_rev = flow.link_delay[size_t(arc.rev_arc)];
      double load = flow.flow_total[size_t(a)];
      arc.d_prime_fwd = inst.cost.link_delay_deriv(net.mu[size_t(a)], load);
      arc.big_d_prime_fwd = arc.d_fwd + load * arc.d_prime_fwd;
      arc.q = inst.mobility.q[size_t(a)];
      v.adj.push_back(arc);
    }
    v.demand.resize(size_t(inst.catalog.n_tasks));
    for (int k = 0; k < inst.catalog.n_tasks; ++k) v.demand[size_t(k)] = inst.demand.r(i, k);
    v.s_row.resize(size_t(S));
    v.y_row.resize(size_t(S));
    v.t_row.resize(size_t(S));
    v.measured_rtt.resize(size_t(S));
    v.phi_rows.assign(size_t(S) * v.adj.size(), 0.0);
    for (int sid = 0; sid < S; ++sid) {
      v.s_row[size_t(sid)] = state.s_at(i, sid);
      v.y_row[size_t(sid)] = state.y_at(i, sid);
      v.t_row[size_t(sid)] = flow.t_at(i, sid);
      v.measured_rtt[size_t(sid)] = measured_rtt[size_t(i) * S + sid];
      for (size_t ai = 0; ai < v.adj.size(); ++ai)
        v.phi_rows[size_t(sid) * v.adj.size() + ai] = state.phi_at(sid, v.adj[ai].arc);
    }
  }
  return views;
}

namespace {

// per-node working memory during one protocol run
struct NodeWork {
  std::vector<double> m_small;  // per service
  std::vector<double> big_m;    // per service
  std::vector<double> b_fwd;    // per adjacent arc
  std::vector<double> djdfo;    // per adjacent arc (outgoing direction)
  std::vector<double> p_local;  // [sid * deg + ai]
  std::vector<double> tau;      // per service
  std::vector<double> delta;    // per service
  double djdg = 0.0;
  std::vector<double> msg1_in;  // [sid * deg + ai]: phi_ji * M_j
  std::vector<Msg2> msg2_in;    // [sid * deg + ai]
  std::vector<char> m_done, delta_done;
};

}  // namespace

DmpResult run_dmp_round(const Instance& inst, const std::vector<NodeLocalView>& views,
                        const DecisionState& state, const DmpOptions& opts) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  const int n = net.n_nodes;

  DmpResult out;
  out.overhead.msgs_sent.assign(size_t(n), 0);
  out.overhead.msgs_received.assign(size_t(n), 0);
  out.overhead.flops.assign(size_t(n), 0.0);
  GradientBundle& g = out.bundle;
  g.n_nodes = n;
  g.n_services = S;
  g.n_arcs = net.n_arcs();
  g.dJ_ds.assign(size_t(n) * S, 0.0);
  g.dJ_dphi.assign(size_t(S) * net.n_arcs(), 0.0);
  g.dJ_dy.assign(size_t(n) * S, 0.0);
  g.delta.assign(size_t(n) * S, 0.0);
  g.tau.assign(size_t(n) * S, 0.0);
  g.B.assign(size_t(net.n_arcs()), 0.0);
  g.M.assign(size_t(n) * S, 0.0);
  g.m_small.assign(size_t(n) * S, 0.0);
  g.dJ_dFo.assign(size_t(net.n_arcs()), 0.0);
  g.dJ_dG.assign(size_t(n), 0.0);
  g.xi.assign(size_t(n) * S, 0.0);

  std::vector<int> remote;
  for (int sid = 0; sid < S; ++sid)
    if (!cat.is_local(sid)) {
      if (!check_loop_free(net, state, sid))
        throw LoopDetected("dmp: service " + std::to_string(sid) + " support is cyclic");
      remote.push_back(sid);
    }

  std::vector<NodeWork> work(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const NodeLocalView& v = views[size_t(i)];
    NodeWork& w = work[size_t(i)];
    size_t deg = v.adj.size();
    w.m_small.assign(size_t(S), 0.0);
    w.big_m.assign(size_t(S), 0.0);
    w.b_fwd.assign(deg, 0.0);
    w.djdfo.assign(deg, 0.0);
    w.p_local.assign(size_t(S) * deg, 0.0);
    w.tau.assign(size_t(S), 0.0);
    w.delta.assign(size_t(S), 0.0);
    w.msg1_in.assign(size_t(S) * deg, 0.0);
    w.msg2_in.assign(size_t(S) * deg, Msg2{});
    w.m_done.assign(size_t(S), 0);
    w.delta_done.assign(size_t(S), 0);
  }

  // local pre-stage: p, m, B and the anchor self-feedback beta from the
  // node's own measurements
  for (int i = 0; i < n; ++i) {
    const NodeLocalView& v = views[size_t(i)];
    NodeWork& w = work[size_t(i)];
    double& fl = out.overhead.flops[size_t(i)];
    double dq_sum = 0.0;
    for (const AdjacentArc& arc : v.adj) dq_sum += arc.big_d_prime_fwd * arc.q;
    fl += 2.0 * double(v.adj.size());
    if (v.big_lambda <= 0.0) continue;
    double beta = 0.0;
    for (int sid : remote) {
      const Service& sv = cat.services[size_t(sid)];
      double rate = v.demand[size_t(sv.task)] * v.s_row[size_t(sid)];
      double decay = std::exp(-v.big_lambda * v.measured_rtt[size_t(sid)]);
      double stay = 1.0 - decay;
      double first_hop = 0.0;
      for (size_t ai = 0; ai < v.adj.size(); ++ai) {
        w.p_local[size_t(sid) * v.adj.size() + ai] = v.adj[ai].q * stay;
        double ph = v.phi_of(sid, int(ai));
        if (!opts.skip_msg1 && ph > 0.0) {
          first_hop += ph * v.adj[ai].q * v.adj[ai].d_prime_fwd;
          w.b_fwd[ai] +=
              v.big_lambda * v.adj[ai].q * v.adj[ai].d_prime_fwd * rate * ph * decay;
        }
      }
      beta += sv.l_res * v.big_lambda * rate * decay * first_hop;
      fl += 9.0 + 6.0 * double(v.adj.size());
    }
    if (beta >= 1.0) throw FeedbackUnstable("dmp: beta >= 1 at node " + std::to_string(i));
    if (!opts.skip_msg1)
      for (int sid : remote) {
        const Service& sv = cat.services[size_t(sid)];
        double rate = v.demand[size_t(sv.task)] * v.s_row[size_t(sid)];
        double decay = std::exp(-v.big_lambda * v.measured_rtt[size_t(sid)]);
        w.m_small[size_t(sid)] = v.big_lambda * rate * decay * dq_sum / (1.0 - beta);
      }
    for (size_t ai = 0; ai < v.adj.size(); ++ai)
      if (w.b_fwd[ai] >= 1.0)
        throw FeedbackUnstable("dmp: B >= 1 at node " + std::to_string(i));
  }

  auto adj_index_of = [&](int to, int from) {
    const auto& outs = net.out_edges[size_t(to)];
    for (size_t ai = 0; ai < outs.size(); ++ai)
      if (net.edges[size_t(outs[ai])].second == from) return int(ai);
    return -1;
  };

  // per-(service, arc) routability under the blocked sets, if provided
  std::vector<char> routable;
  if (opts.allowed_arcs) {
    routable.assign(size_t(S) * net.n_arcs(), 0);
    for (int sid : remote)
      for (int i = 0; i < n; ++i)
        for (int a : (*opts.allowed_arcs)[size_t(sid)][size_t(i)])
          routable[size_t(sid) * net.n_arcs() + size_t(a)] = 1;
  }
  auto arc_routable = [&](int sid, int arc) {
    return routable.empty() || routable[size_t(sid) * net.n_arcs() + size_t(arc)] != 0;
  };

  // ---- phase 1: MSG1 floods downstream along support arcs ----
  // The scheduler tracks which support inputs are still pending (global
  // knowledge used for sequencing only); node computations read nothing but
  // their own view and buffers.
  if (!opts.skip_msg1) {
    std::vector<std::vector<int>> pending(static_cast<size_t>(S));
    for (int sid : remote) {
      pending[size_t(sid)].assign(size_t(n), 0);
      for (int a = 0; a < net.n_arcs(); ++a)
        if (state.phi_at(sid, a) > 0.0)
          ++pending[size_t(sid)][size_t(net.edges[size_t(a)].second)];
    }
    long open = long(remote.size()) * n;
    while (open > 0) {
      bool progress = false;
      ++out.overhead.rounds_phase1;
      std::vector<Msg1> outbox;
      std::vector<int> outbox_to;
      for (int sid : remote) {
        for (int i = 0; i < n; ++i) {
          NodeWork& w = work[size_t(i)];
          if (w.m_done[size_t(sid)] || pending[size_t(sid)][size_t(i)] > 0) continue;
          const NodeLocalView& v = views[size_t(i)];
          double acc = w.m_small[size_t(sid)];
          for (size_t ai = 0; ai < v.adj.size(); ++ai)
            acc += w.msg1_in[size_t(sid) * v.adj.size() + ai];
          w.big_m[size_t(sid)] = acc;
          w.m_done[size_t(sid)] = 1;
          out.overhead.flops[size_t(i)] += double(v.adj.size());
          --open;
          progress = true;
          for (size_t ai = 0; ai < v.adj.size(); ++ai) {
            double ph = v.phi_of(sid, int(ai));
            if (ph <= 0.0) continue;
            outbox.push_back(Msg1{sid, i, acc, ph});
            outbox_to.push_back(v.adj[ai].nbr);
            ++out.overhead.msgs_sent[size_t(i)];
          }
        }
      }
      for (size_t mi = 0; mi < outbox.size(); ++mi) {
        const Msg1& msg = outbox[mi];
        int to = outbox_to[mi];
        NodeWork& w = work[size_t(to)];
        int ai = adj_index_of(to, msg.from);
        w.msg1_in[size_t(msg.sid) * views[size_t(to)].adj.size() + size_t(ai)] =
            msg.phi_value * msg.m_value;
        ++out.overhead.msgs_received[size_t(to)];
        out.overhead.flops[size_t(to)] += 1.0;
        --pending[size_t(msg.sid)][size_t(to)];
      }
      if (!progress) throw Stalled("dmp phase 1 made no progress");
    }
  } else {
    for (int i = 0; i < n; ++i) work[size_t(i)].m_done.assign(size_t(S), 1);
  }

  // local mid-stage: dJ/dF_o on own outgoing arcs, dJ/dG and tau
  for (int i = 0; i < n; ++i) {
    const NodeLocalView& v = views[size_t(i)];
    NodeWork& w = work[size_t(i)];
    double& fl = out.overhead.flops[size_t(i)];
    for (size_t ai = 0; ai < v.adj.size(); ++ai) {
      double fb = 0.0;
      for (int sid : remote) {
        double fwd = v.phi_of(sid, int(ai)) * w.big_m[size_t(sid)];
        double bwd = w.msg1_in[size_t(sid) * v.adj.size() + ai];
        if (fwd != 0.0 || bwd != 0.0) fb += cat.services[size_t(sid)].l_res * (fwd + bwd);
      }
      w.djdfo[ai] = v.adj[ai].big_d_prime_fwd + fb * v.adj[ai].d_prime_fwd;
      fl += 3.0 * double(remote.size()) + 3.0;
    }
    double fb = 0.0;
    for (int sid : remote) {
      double yy = v.y_row[size_t(sid)];
      if (yy > 0.0) fb += cat.services[size_t(sid)].l_res * yy * w.big_m[size_t(sid)];
    }
    w.djdg = v.node_big_c_prime + fb * v.node_delay_prime;
    fl += 3.0 * double(remote.size()) + 2.0;
    for (int sid : remote) {
      const Service& sv = cat.services[size_t(sid)];
      double acc = 0.0;
      for (size_t ai = 0; ai < v.adj.size(); ++ai)
        acc += w.djdfo[ai] * w.p_local[size_t(sid) * v.adj.size() + ai];
      w.tau[size_t(sid)] = sv.l_res * acc;
      fl += 2.0 * double(v.adj.size()) + 1.0;
    }
  }

  // ---- phase 2: MSG2 floods upstream from hosts ----
  {
    std::vector<std::vector<int>> pending(static_cast<size_t>(S));
    for (int sid : remote) {
      pending[size_t(sid)].assign(size_t(n), 0);
      for (int a = 0; a < net.n_arcs(); ++a)
        if (state.phi_at(sid, a) > 0.0)
          ++pending[size_t(sid)][size_t(net.edges[size_t(a)].first)];
    }
    long open = long(remote.size()) * n;
    while (open > 0) {
      bool progress = false;
      ++out.overhead.rounds_phase2;
      std::vector<Msg2> outbox;
      std::vector<int> outbox_to;
      for (int sid : remote) {
        const Service& sv = cat.services[size_t(sid)];
        for (int i = 0; i < n; ++i) {
          NodeWork& w = work[size_t(i)];
          if (w.delta_done[size_t(sid)] || pending[size_t(sid)][size_t(i)] > 0) continue;
          const NodeLocalView& v = views[size_t(i)];
          double acc = v.y_row[size_t(sid)] * sv.work * w.djdg;
          for (size_t ai = 0; ai < v.adj.size(); ++ai) {
            double ph = v.phi_of(sid, int(ai));
            if (ph <= 0.0) continue;
            const Msg2& msg = w.msg2_in[size_t(sid) * v.adj.size() + ai];
            acc += ph * (sv.l_req * w.djdfo[ai] + sv.l_res * msg.djdfo_rev + msg.delta);
          }
          w.delta[size_t(sid)] = acc;
          w.delta_done[size_t(sid)] = 1;
          out.overhead.flops[size_t(i)] += 6.0 * double(v.adj.size()) + 2.0;
          --open;
          progress = true;
          // send to every neighbor that may route this service toward us:
          // upstream peers extend the recursion, the rest score currently
          // unused routing options with it
          double rtt_net = std::max(0.0, v.measured_rtt[size_t(sid)] - net.d_ap);
          for (size_t ai = 0; ai < v.adj.size(); ++ai) {
            if (!arc_routable(sid, v.adj[ai].rev_arc)) continue;
            outbox.push_back(Msg2{sid, i, acc, w.djdfo[ai], rtt_net});
            outbox_to.push_back(v.adj[ai].nbr);
            ++out.overhead.msgs_sent[size_t(i)];
          }
        }
      }
      for (size_t mi = 0; mi < outbox.size(); ++mi) {
        const Msg2& msg = outbox[mi];
        int to = outbox_to[mi];
        NodeWork& w = work[size_t(to)];
        int ai = adj_index_of(to, msg.from);
        w.msg2_in[size_t(msg.sid) * views[size_t(to)].adj.size() + size_t(ai)] = msg;
        ++out.overhead.msgs_received[size_t(to)];
        int arc_to_from = views[size_t(to)].adj[size_t(ai)].arc;
        if (state.phi_at(msg.sid, arc_to_from) > 0.0) --pending[size_t(msg.sid)][size_t(to)];
      }
      if (!progress) throw Stalled("dmp phase 2 made no progress");
    }
  }

  // final local stage: gradient rows
  for (int i = 0; i < n; ++i) {
    const NodeLocalView& v = views[size_t(i)];
    NodeWork& w = work[size_t(i)];
    double& fl = out.overhead.flops[size_t(i)];
    for (int sid = 0; sid < S; ++sid) {
      const Service& sv = cat.services[size_t(sid)];
      double uh = cat.u_hat(sid, net.d_ap);
      if (cat.is_local(sid)) {
        g.dJ_ds[size_t(i) * S + sid] = v.demand[size_t(sv.task)] * (sv.work * net.c_u - uh);
        fl += 3.0;
        continue;
      }
      double mi = w.big_m[size_t(sid)];
      g.dJ_ds[size_t(i) * S + sid] =
          v.demand[size_t(sv.task)] * (w.delta[size_t(sid)] + w.tau[size_t(sid)] - uh);
      g.dJ_dy[size_t(i) * S + sid] =
          v.t_row[size_t(sid)] * sv.work * w.djdg + sv.l_res * mi * v.node_delay;
      double ti = v.t_row[size_t(sid)];
      double xmin = std::numeric_limits<double>::infinity();
      bool any = false;
      for (size_t ai = 0; ai < v.adj.size(); ++ai) {
        if (!arc_routable(sid, v.adj[ai].arc)) continue;
        const Msg2& msg = w.msg2_in[size_t(sid) * v.adj.size() + ai];
        double val = ti * (sv.l_req * w.djdfo[ai] + sv.l_res * msg.djdfo_rev + msg.delta) +
                     sv.l_res * mi * (v.adj[ai].d_fwd + v.adj[ai].d_rev + msg.rtt);
        g.dJ_dphi[size_t(sid) * net.n_arcs() + v.adj[ai].arc] = val;
        xmin = std::min(xmin, val);
        any = true;
      }
      if (sv.l_mod > 0.0 && any) g.xi[size_t(i) * S + sid] = xmin / sv.l_mod;
      fl += 10.0 * double(v.adj.size()) + 8.0;

      g.delta[size_t(i) * S + sid] = w.delta[size_t(sid)];
      g.tau[size_t(i) * S + sid] = w.tau[size_t(sid)];
      g.M[size_t(i) * S + sid] = w.big_m[size_t(sid)];
      g.m_small[size_t(i) * S + sid] = w.m_small[size_t(sid)];
    }
    g.dJ_dG[size_t(i)] = w.djdg;
    for (size_t ai = 0; ai < v.adj.size(); ++ai) {
      g.B[size_t(v.adj[ai].arc)] = w.b_fwd[ai];
      g.dJ_dFo[size_t(v.adj[ai].arc)] = w.djdfo[ai];
    }
  }
  return out;
}

DmpResult run_dmp(const Instance& inst, const DecisionState& state, const FlowState& flow,
                  const DmpOptions& opts) {
  std::vector<double> rtt = measure_rtt(flow, opts.rtt_noise_sigma, opts.noise_seed);
  std::vector<NodeLocalView> views = build_node_views(inst, state, flow, rtt);
  return run_dmp_round(inst, views, state, opts);
}

}  // namespace spsr
