#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spsr {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LoopDetected : Error {
  using Error::Error;
};
struct InfeasibleLoad : Error {
  using Error::Error;
};
struct NonConvergent : Error {
  using Error::Error;
};
struct NoFeasiblePlacement : Error {
  using Error::Error;
};
struct UnreachableHost : Error {
  using Error::Error;
};
struct FeedbackUnstable : Error {
  using Error::Error;
};
struct Stalled : Error {
  using Error::Error;
};
struct FileNotFound : Error {
  using Error::Error;
};
struct DisconnectedAfterRetries : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Directed connected graph with per-link transmission capacity, per-node
/// computation capacity and model-hosting storage. Every link's reverse
/// direction exists (results travel the reversed request path); reverse arcs
/// are auto-added with the same capacity when the input lists one direction.
struct NetworkModel {
  int n_nodes = 0;
  std::vector<std::pair<int, int>> edges;  // directed arcs (i,j)
  std::vector<double> mu;                  // per-arc capacity
  std::vector<double> nu;                  // per-node computation rate
  std::vector<double> storage;             // per-node hosting resource R_i
  double d_ap = 0.0;                       // user-AP wireless access delay
  double c_u = 0.0;                        // latency of local models (m=0)
  std::vector<int> layer;                  // optional annotation (empty = unset)

  // derived adjacency
  std::vector<std::vector<int>> out_edges;  // node -> arc ids
  std::vector<std::vector<int>> in_edges;
  std::vector<int> reverse_arc;  // arc id -> id of the opposite direction

  int n_arcs() const { return int(edges.size()); }
  int arc_between(int i, int j) const;  // -1 if absent

  /// Builds adjacency, auto-adds missing reverse arcs, checks invariants
  /// (connectivity, positive capacities).
  static NetworkModel build(int n_nodes,
                            const std::vector<std::tuple<int, int, double>>& arcs,
                            std::vector<double> nu, std::vector<double> storage,
                            double d_ap = 0.0, double c_u = 0.0);

  bool connected() const;

 private:
  std::unordered_map<int64_t, int> arc_index_;
};

// ---------------------------------------------------------------------------
// Services
// ---------------------------------------------------------------------------

/// One (task, model) pair. Model id 0 is the lightweight local model executed
/// at the user: it is never routed or hosted in the network.
struct Service {
  int task = 0;
  int model = 0;
  double l_req = 0.0;  // request packet size (flow units per request)
  double l_res = 0.0;  // result packet size
  double l_mod = 0.0;  // hosting resource occupancy
  double work = 0.0;   // computation workload per request
  double utility = 0.0;
};

struct ServiceCatalog {
  int n_tasks = 0;
  std::vector<Service> services;                // flat service ids
  std::vector<std::vector<int>> task_services;  // task -> service ids
  double eta = 1.0;                             // quality-latency preference

  int n_services() const { return int(services.size()); }
  bool is_local(int sid) const { return services[size_t(sid)].model == 0; }
  int service_id(int task, int model) const;  // -1 if absent

  /// Modified utility u_hat = eta*u - d_ap for remote models, eta*u for local.
  double u_hat(int sid, double d_ap_delay) const {
    const Service& sv = services[size_t(sid)];
    return eta * sv.utility - (sv.model != 0 ? d_ap_delay : 0.0);
  }

  void rebuild_task_index();
};

/// Time-invariant exogenous request rates r_i^k.
struct RequestProfile {
  int n_nodes = 0;
  int n_tasks = 0;
  std::vector<double> rate;  // [i*n_tasks + k]

  double r(int i, int k) const { return rate[size_t(i) * n_tasks + k]; }
  double& r(int i, int k) { return rate[size_t(i) * n_tasks + k]; }
  double total() const;

  static RequestProfile uniform(int n_nodes, int n_tasks, double value);
};

/// Continuous-time Markov mobility: per-arc transition rates lambda_ij,
/// aggregate leave rate Lambda_i and transition distribution q_ij.
/// q_ij is defined as 0 when Lambda_i = 0 so the static-user limit is exact.
struct MobilityModel {
  std::vector<double> lambda;    // per arc
  std::vector<double> big_lambda;  // per node, sum of outgoing lambda
  std::vector<double> q;         // per arc, lambda_ij / Lambda_i (0 if Lambda_i=0)

  static MobilityModel from_rates(const NetworkModel& net, std::vector<double> lambda);
  static MobilityModel none(const NetworkModel& net);
};

// ---------------------------------------------------------------------------
// Congestion cost families
// ---------------------------------------------------------------------------

enum class DelayFamily { Mm1, Taylor3, Constant };

const char* delay_family_name(DelayFamily f);
DelayFamily delay_family_from_name(const std::string& name);

/// Link delay d(F) and node delay c(G), both nondecreasing and convex:
///   mm1:      d(F) = 1/(cap - F), valid only for F < cap
///   taylor3:  d(F) = (1/cap)(1 + x + x^2 + x^3), x = F/cap
///   constant: d(F) = 1/cap
struct CostModel {
  DelayFamily link_family = DelayFamily::Taylor3;
  DelayFamily node_family = DelayFamily::Taylor3;

  static double delay(DelayFamily f, double cap, double load);
  static double delay_deriv(DelayFamily f, double cap, double load);

  double link_delay(double cap, double load) const { return delay(link_family, cap, load); }
  double link_delay_deriv(double cap, double load) const { return delay_deriv(link_family, cap, load); }
  double node_delay(double cap, double load) const { return delay(node_family, cap, load); }
  double node_delay_deriv(double cap, double load) const { return delay_deriv(node_family, cap, load); }
};

// ---------------------------------------------------------------------------
// Decision variables
// ---------------------------------------------------------------------------

enum class PlacementMode { Fixed, Joint };

/// Global decision state. Simplex constraints:
///   sum_m s_i^{k,m} = 1 for every (i,k),
///   y_i^{k,m} + sum_j phi_ij^{k,m} = 1 for every (i, k, m != 0),
///   sum_(k,m) l_mod * y_i^{k,m} <= R_i.
/// Fixed placement is binary y encoding the host sets; local services carry
/// y = 1 and an empty phi row by convention.
struct DecisionState {
  int n_nodes = 0;
  int n_services = 0;
  int n_arcs = 0;
  std::vector<double> s;    // [i*S + sid]
  std::vector<double> phi;  // [sid*E + arc]
  std::vector<double> y;    // [i*S + sid]

  double s_at(int i, int sid) const { return s[size_t(i) * n_services + sid]; }
  double& s_at(int i, int sid) { return s[size_t(i) * n_services + sid]; }
  double y_at(int i, int sid) const { return y[size_t(i) * n_services + sid]; }
  double& y_at(int i, int sid) { return y[size_t(i) * n_services + sid]; }
  double phi_at(int sid, int arc) const { return phi[size_t(sid) * n_arcs + arc]; }
  double& phi_at(int sid, int arc) { return phi[size_t(sid) * n_arcs + arc]; }

  static DecisionState zeros(int n_nodes, int n_services, int n_arcs);
};

/// Everything needed to evaluate a configuration.
struct Instance {
  NetworkModel net;
  ServiceCatalog catalog;
  RequestProfile demand;
  MobilityModel mobility;
  CostModel cost;
};

// ---------------------------------------------------------------------------
// Validation and feasibility
// ---------------------------------------------------------------------------

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

/// Checks every feasibility constraint; violations become report entries,
/// never exceptions.
ValidationReport validate(const NetworkModel& net, const ServiceCatalog& catalog,
                          const DecisionState& state);

/// True iff the support digraph {(i,j): phi_ij^{sid} > 0} has no directed cycle.
bool check_loop_free(const NetworkModel& net, const DecisionState& state, int sid);

/// Topological order (upstream first) of all nodes w.r.t. the support digraph
/// of service sid. Throws LoopDetected.
std::vector<int> service_topo_order(const NetworkModel& net, const DecisionState& state,
                                    int sid);

/// Hop distance from every node to the nearest host (BFS over arcs).
/// Unreachable nodes get -1.
std::vector<int> hop_distance_to_hosts(const NetworkModel& net, const std::vector<int>& hosts);

/// The loop-free routing DAG induced by a host set: nodes are totally ordered
/// by (hop distance to nearest host, node id) and arc i->j is allowed iff j
/// precedes i. Returns the allowed out-arcs per node. Throws UnreachableHost.
std::vector<std::vector<int>> service_routing_dag(const NetworkModel& net,
                                                  const std::vector<int>& hosts);

/// Deterministic random feasible state: binary placement respecting storage
/// capacities, phi supported on the distance-based routing DAG, s interior on
/// the simplex. Passes validate() and check_loop_free() by construction.
DecisionState random_feasible_state(const Instance& inst, uint64_t seed, PlacementMode mode);

// ---------------------------------------------------------------------------
// Scenario file format
// ---------------------------------------------------------------------------
//
// Plain-text key-value header plus sections:
//   name, d_ap, c_u, eta, link_delay, node_delay
//   [links]    src dst mu          (reverse arcs auto-added)
//   [nodes]    id nu R
//   [services] k m L_req L_res L_mod W u
//   [requests] i k rate
//   [mobility] i j lambda
//   [layers]   i layer             (optional, used by the SM baseline)

Instance parse_scenario(std::istream& in);
Instance load_scenario_file(const std::string& path);
void serialize_scenario(const Instance& inst, const std::string& name, std::ostream& out);
std::string scenario_to_string(const Instance& inst, const std::string& name);

}  // namespace spsr
