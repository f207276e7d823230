#pragma once

#include <string>
#include <vector>

#include "spsr/flow.hpp"
#include "spsr/model.hpp"

namespace spsr {

/// Closed-form derivatives of the congestion costs at the current operating
/// point: d' and D' = d + F d' per link, c' and C' = c + G c' per node.
struct Marginals {
  std::vector<double> d_prime;
  std::vector<double> big_d_prime;
  std::vector<double> c_prime;
  std::vector<double> big_c_prime;
};

/// Exact gradient of the fixed-point objective J with respect to selection,
/// routing and placement, with all intermediates exposed.
///
/// dJ_dFo is the total derivative of J w.r.t. an exogenous static-flow
/// injection on a link, including the tunneling feedback: the forward term
/// phi_ij M_i of the downstream-propagated mobility weights and the reverse
/// term phi_ji M_j (a result-direction delay raises upstream anchors' round
/// trips too). Each anchor's own feedback loop (its tunneling flow lengthens
/// its own round trips, across all its arcs and services) is geometrically
/// resummed into the m weights through the node-local factor 1/(1-beta);
/// only cross-anchor loops remain truncated. dJ_dG is the node analogue:
/// C' plus the hosting-delay feedback c' sum(L_res y M). Everything reduces
/// to D' and C' exactly when all transition rates vanish.
struct GradientBundle {
  int n_nodes = 0;
  int n_services = 0;
  int n_arcs = 0;

  std::vector<double> dJ_ds;    // [i*S + sid]
  std::vector<double> dJ_dphi;  // [sid*E + a]
  std::vector<double> dJ_dy;    // [i*S + sid]

  std::vector<double> delta;    // marginal cost of endogenous arrival [i*S + sid]
  std::vector<double> tau;      // marginal tunneling cost of exogenous rate
  std::vector<double> B;        // per-arc self-feedback factor
  std::vector<double> beta;     // per-node anchor self-feedback (resummed into m)
  std::vector<double> M;        // downstream-accumulated mobility weight [i*S + sid]
  std::vector<double> m_small;  // local mobility weight [i*S + sid]
  std::vector<double> dJ_dFo;   // per arc
  std::vector<double> dJ_dG;    // per node
  std::vector<double> xi;       // hosting priority: min_j dJ_dphi / L_mod

  double ds_at(int i, int sid) const { return dJ_ds[size_t(i) * n_services + sid]; }
  double dy_at(int i, int sid) const { return dJ_dy[size_t(i) * n_services + sid]; }
  double dphi_at(int sid, int a) const { return dJ_dphi[size_t(sid) * n_arcs + a]; }
};

struct GradOptions {
  /// Static-LFW ablation: force M and B (the MSG1-propagated mobility
  /// corrections) to zero. The objective itself is unaffected.
  bool ignore_mobility = false;
};

Marginals compute_marginals(const Instance& inst, const FlowState& flow);

/// B_ij and m_i^{k,m} from purely node-local quantities (Lambda, q, d', D',
/// measured round trips, own rates and phi rows).
/// Throws FeedbackUnstable if any B_ij >= 1.
void compute_B_and_m(const Instance& inst, const DecisionState& state, const FlowState& flow,
                     const Marginals& marg, GradientBundle& g);

/// M_i = sum_l phi_li M_l + m_i, evaluated upstream to downstream.
void compute_M_recursion(const Instance& inst, const DecisionState& state, const FlowState& flow,
                         GradientBundle& g);

void compute_dJ_dFo(const Instance& inst, const DecisionState& state, const FlowState& flow,
                    const Marginals& marg, GradientBundle& g);

/// tau = L_res sum_j dJ_dFo_ij p_ij, dJ_dG, and the delta recursion (reverse
/// topological order):
///   delta_i = y_i W dJ_dG_i + sum_j phi_ij (L_req dJ_dFo_ij + L_res dJ_dFo_ji + delta_j).
/// Requires dJ_dFo to be filled first.
void compute_delta_tau(const Instance& inst, const DecisionState& state, const FlowState& flow,
                       const Marginals& marg, GradientBundle& g);

void assemble_gradients(const Instance& inst, const DecisionState& state, const FlowState& flow,
                        const Marginals& marg, GradientBundle& g);

/// Full centralized gradient oracle.
GradientBundle compute_gradients(const Instance& inst, const DecisionState& state,
                                 const FlowState& flow, const GradOptions& opts = {});

// ---------------------------------------------------------------------------
// KKT residuals
// ---------------------------------------------------------------------------

struct KktResidual {
  double res_s = 0.0;
  double res_phi = 0.0;
  double res_y = 0.0;
};

/// Maximum gap between an active decision's gradient and the minimum gradient
/// in its choice set (active = mass > 1e-9). res_phi ranges over unblocked
/// neighbors when blocked sets are supplied; res_y checks the three-way xi
/// ordering of the placement optimality condition (joint mode only).
KktResidual kkt_residual(const Instance& inst, const DecisionState& state,
                         const GradientBundle& g, PlacementMode mode,
                         const std::vector<std::vector<std::vector<int>>>* allowed_arcs = nullptr);

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct FdCheckOptions {
  double step = 1e-6;
  double fp_tol = 1e-12;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;
  int max_pairs = 0;  // 0 = every pair
};

struct FdCheckResult {
  int n_pairs = 0;
  int n_failed = 0;
  double worst_ratio = 0.0;  // err / allowance; <= 1 everywhere means pass
  double worst_err = 0.0;
  std::string worst_pair;
  bool ok() const { return n_failed == 0; }
};

/// Central finite differences along feasible directions (mass moved between
/// two coordinates of one simplex group), compared against gradient
/// differences. One-sided second-order stencils are used at the boundary.
/// Covers s pairs per (i,k), phi pairs over the routing-DAG arcs, and
/// y-vs-phi pairs per (i, service). The routing DAGs default to the ones
/// induced by the state's own placement (y >= 0.5); pass `allowed_arcs` for
/// states with fractional placement.
FdCheckResult finite_diff_check(const Instance& inst, const DecisionState& state,
                                const FdCheckOptions& opts = {},
                                const std::vector<std::vector<std::vector<int>>>* allowed_arcs =
                                    nullptr);

}  // namespace spsr
