#include "spsr/io.hpp"

#include "spsr/runner.hpp"

namespace spsr {

void dump_flow_csv(const Instance& inst, const FlowState& flow, const std::string& prefix) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  std::string links = "i,j,F_o,F_tun,F,d\n";
  for (int a = 0; a < net.n_arcs(); ++a) {
    auto [i, j] = net.edges[size_t(a)];
    links += std::to_string(i) + ',' + std::to_string(j) + ',' +
             format_double(flow.flow_static[size_t(a)]) + ',' +
             format_double(flow.flow_tun[size_t(a)]) + ',' +
             format_double(flow.flow_total[size_t(a)]) + ',' +
             format_double(flow.link_delay[size_t(a)]) + '\n';
  }
  write_file_atomic(prefix + "_links.csv", links);

  std::string nodes = "i,G,c\n";
  for (int i = 0; i < net.n_nodes; ++i)
    nodes += std::to_string(i) + ',' + format_double(flow.workload[size_t(i)]) + ',' +
             format_double(flow.node_delay[size_t(i)]) + '\n';
  write_file_atomic(prefix + "_nodes.csv", nodes);

  std::string lat = "i,k,m,D_o,D\n";
  for (int i = 0; i < net.n_nodes; ++i)
    for (int sid = 0; sid < cat.n_services(); ++sid) {
      const Service& sv = cat.services[size_t(sid)];
      lat += std::to_string(i) + ',' + std::to_string(sv.task) + ',' +
             std::to_string(sv.model) + ',' + format_double(flow.rtt_static_at(i, sid)) + ',' +
             format_double(flow.latency[size_t(i) * cat.n_services() + sid]) + '\n';
    }
  write_file_atomic(prefix + "_latencies.csv", lat);
}

void dump_gradient_csv(const Instance& inst, const GradientBundle& g,
                       const std::string& prefix) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  std::string links = "i,j,B,dJ_dFo\n";
  for (int a = 0; a < net.n_arcs(); ++a) {
    auto [i, j] = net.edges[size_t(a)];
    links += std::to_string(i) + ',' + std::to_string(j) + ',' +
             format_double(g.B[size_t(a)]) + ',' + format_double(g.dJ_dFo[size_t(a)]) + '\n';
  }
  write_file_atomic(prefix + "_grad_links.csv", links);

  std::string sel = "i,k,m,dJ_ds,dJ_dy,delta,tau,m_small,M,xi\n";
  for (int i = 0; i < net.n_nodes; ++i)
    for (int sid = 0; sid < S; ++sid) {
      const Service& sv = cat.services[size_t(sid)];
      size_t idx = size_t(i) * S + sid;
      sel += std::to_string(i) + ',' + std::to_string(sv.task) + ',' +
             std::to_string(sv.model) + ',' + format_double(g.dJ_ds[idx]) + ',' +
             format_double(g.dJ_dy[idx]) + ',' + format_double(g.delta[idx]) + ',' +
             format_double(g.tau[idx]) + ',' + format_double(g.m_small[idx]) + ',' +
             format_double(g.M[idx]) + ',' + format_double(g.xi[idx]) + '\n';
    }
  write_file_atomic(prefix + "_grad_selection.csv", sel);

  std::string routing = "i,j,k,m,dJ_dphi\n";
  for (int sid = 0; sid < S; ++sid) {
    const Service& sv = cat.services[size_t(sid)];
    if (cat.is_local(sid)) continue;
    for (int a = 0; a < net.n_arcs(); ++a) {
      auto [i, j] = net.edges[size_t(a)];
      routing += std::to_string(i) + ',' + std::to_string(j) + ',' + std::to_string(sv.task) +
                 ',' + std::to_string(sv.model) + ',' +
                 format_double(g.dJ_dphi[size_t(sid) * net.n_arcs() + a]) + '\n';
    }
  }
  write_file_atomic(prefix + "_grad_routing.csv", routing);
}

}  // namespace spsr
