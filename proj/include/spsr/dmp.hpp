#pragma once

#include <cstdint>
#include <vector>

#include "spsr/flow.hpp"
#include "spsr/grad.hpp"
#include "spsr/model.hpp"

namespace spsr {

/// MSG1, flooded downstream along routing-support arcs. Carries the sender's
/// accumulated mobility weight and its routing fraction toward the receiver,
/// so the receiver can form both its own M recursion term and the
/// reverse-direction feedback sum needed for dJ/dF_o.
struct Msg1 {
  int sid = 0;
  int from = 0;
  double m_value = 0.0;    // M_sender
  double phi_value = 0.0;  // phi_{sender->receiver}
};

/// MSG2, flooded upstream from hosts. Carries everything an upstream neighbor
/// needs to extend the delta recursion and to score its own routing options:
/// delta_j, dJ/dF_o on the reverse arc (j,i), and j's measured round trip.
struct Msg2 {
  int sid = 0;
  int from = 0;
  double delta = 0.0;
  double djdfo_rev = 0.0;  // dJ/dF_o(j -> receiver)
  double rtt = 0.0;        // network round trip at j (no d_AP)
};

/// Per-node adjacent-arc record: everything node `id` may legitimately know
/// about one of its links without talking to non-neighbors.
struct AdjacentArc {
  int arc = -1;      // outgoing arc id (id -> nbr)
  int rev_arc = -1;  // incoming arc id (nbr -> id)
  int nbr = -1;
  double d_fwd = 0.0, d_rev = 0.0;
  double d_prime_fwd = 0.0;
  double big_d_prime_fwd = 0.0;
  double q = 0.0;  // transition probability toward nbr
};

/// Strictly local view: own rates, decisions and delay measurements plus
/// adjacent-arc data. Constructed only from node-local and neighbor-local
/// quantities; holding anything else is a bug by construction.
struct NodeLocalView {
  int id = -1;
  double big_lambda = 0.0;
  double node_delay = 0.0;          // c_i(G_i)
  double node_delay_prime = 0.0;    // c'_i
  double node_big_c_prime = 0.0;    // C'_i = c_i + G_i c'_i
  std::vector<AdjacentArc> adj;   // ordered like net.out_edges[id]
  std::vector<double> demand;        // r_i^k per task
  std::vector<double> s_row;         // per service
  std::vector<double> y_row;         // per service
  std::vector<double> t_row;         // measured arrival rate per service
  std::vector<double> phi_rows;      // [sid * adj.size() + arc index]
  std::vector<double> measured_rtt;  // D_o per service (with d_AP)

  double phi_of(int sid, int adj_idx) const {
    return phi_rows[size_t(sid) * adj.size() + size_t(adj_idx)];
  }
};

struct OverheadStats {
  std::vector<long> msgs_sent;      // per node
  std::vector<long> msgs_received;  // per node
  std::vector<double> flops;       // per node, estimated
  int rounds_phase1 = 0;
  int rounds_phase2 = 0;
  long total_msgs() const;
};

struct DmpOptions {
  /// Static-LFW: skip the MSG1 phase entirely (M and B stay zero).
  bool skip_msg1 = false;
  /// Multiplicative RTT measurement noise (1 + sigma Z); 0 = exact.
  double rtt_noise_sigma = 0.0;
  uint64_t noise_seed = 0;
  /// Routing-protocol knowledge of the per-service allowed arcs (the
  /// complement of the blocked sets). When set, MSG2 goes only to neighbors
  /// that may route toward the sender and blocked dJ_dphi entries stay zero;
  /// when null, MSG2 is broadcast and the full bundle is reconstructed.
  const std::vector<std::vector<std::vector<int>>>* allowed_arcs = nullptr;
};

/// Per-node D_o estimates from request round trips, optionally perturbed for
/// robustness experiments. sigma = 0 returns the exact FlowState values.
std::vector<double> measure_rtt(const FlowState& flow, double sigma, uint64_t seed);

std::vector<NodeLocalView> build_node_views(const Instance& inst, const DecisionState& state,
                                            const FlowState& flow,
                                            const std::vector<double>& measured_rtt);

struct DmpResult {
  GradientBundle bundle;
  OverheadStats overhead;
};

/// Runs the two-stage protocol over synchronous rounds: MSG1 floods downstream
/// until every node holds M, nodes then form dJ/dF_o locally, and MSG2 floods
/// upstream until every node holds delta. The assembled bundle equals the
/// centralized oracle at sigma = 0. Throws LoopDetected / Stalled.
DmpResult run_dmp_round(const Instance& inst, const std::vector<NodeLocalView>& views,
                        const DecisionState& state, const DmpOptions& opts = {});

/// Convenience wrapper: measure, build views, run.
DmpResult run_dmp(const Instance& inst, const DecisionState& state, const FlowState& flow,
                  const DmpOptions& opts = {});

}  // namespace spsr
