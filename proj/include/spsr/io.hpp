#pragma once

#include <string>

#include "spsr/flow.hpp"
#include "spsr/grad.hpp"
#include "spsr/model.hpp"

namespace spsr {

/// Writes <prefix>_links.csv (i, j, F_o, F_tun, F, d), <prefix>_nodes.csv
/// (i, G, c) and <prefix>_latencies.csv (i, k, m, D_o, D).
void dump_flow_csv(const Instance& inst, const FlowState& flow, const std::string& prefix);

/// Gradient dump mirroring the flow layout: <prefix>_grad_links.csv
/// (i, j, B, dJ_dFo), <prefix>_grad_selection.csv per (i, k, m) with the
/// selection/placement derivatives and intermediates, and
/// <prefix>_grad_routing.csv per (i, j, k, m). Used to cross-check the
/// protocol against the centralized oracle offline.
void dump_gradient_csv(const Instance& inst, const GradientBundle& g, const std::string& prefix);

}  // namespace spsr
