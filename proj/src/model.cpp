#include "spsr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "spsr/rng.hpp"

namespace spsr {

namespace {

int64_t arc_key(int i, int j) { return (int64_t(i) << 32) | uint32_t(j); }

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 <= 1e-300) u1 = uniform();
  double u2 = uniform();
  double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(6.283185307179586477 * u2);
  have_spare_ = true;
  return mag * std::cos(6.283185307179586477 * u2);
}

// ---------------------------------------------------------------------------
// NetworkModel
// ---------------------------------------------------------------------------

int NetworkModel::arc_between(int i, int j) const {
  auto it = arc_index_.find(arc_key(i, j));
  return it == arc_index_.end() ? -1 : it->second;
}

NetworkModel NetworkModel::build(int n_nodes,
                                 const std::vector<std::tuple<int, int, double>>& arcs,
                                 std::vector<double> nu, std::vector<double> storage,
                                 double d_ap, double c_u) {
  NetworkModel net;
  net.n_nodes = n_nodes;
  net.nu = std::move(nu);
  net.storage = std::move(storage);
  net.d_ap = d_ap;
  net.c_u = c_u;
  if (int(net.nu.size()) != n_nodes || int(net.storage.size()) != n_nodes)
    throw ConfigError("node capacity vectors must have n_nodes entries");

  for (const auto& [i, j, cap] : arcs) {
    if (i < 0 || i >= n_nodes || j < 0 || j >= n_nodes || i == j)
      throw ConfigError("bad arc endpoint");
    if (cap <= 0.0) throw ConfigError("link capacity must be positive");
    if (net.arc_index_.count(arc_key(i, j))) continue;
    net.arc_index_[arc_key(i, j)] = int(net.edges.size());
    net.edges.emplace_back(i, j);
    net.mu.push_back(cap);
  }
  // results return along the reversed request path: add missing reverse arcs
  size_t listed = net.edges.size();
  for (size_t a = 0; a < listed; ++a) {
    auto [i, j] = net.edges[a];
    if (!net.arc_index_.count(arc_key(j, i))) {
      net.arc_index_[arc_key(j, i)] = int(net.edges.size());
      net.edges.emplace_back(j, i);
      net.mu.push_back(net.mu[a]);
    }
  }

  net.out_edges.assign(size_t(n_nodes), {});
  net.in_edges.assign(size_t(n_nodes), {});
  net.reverse_arc.assign(net.edges.size(), -1);
  for (int a = 0; a < net.n_arcs(); ++a) {
    auto [i, j] = net.edges[size_t(a)];
    net.out_edges[size_t(i)].push_back(a);
    net.in_edges[size_t(j)].push_back(a);
    net.reverse_arc[size_t(a)] = net.arc_index_.at(arc_key(j, i));
  }
  for (double v : net.nu)
    if (v <= 0.0) throw ConfigError("node capacity must be positive");
  for (double v : net.storage)
    if (v < 0.0) throw ConfigError("storage capacity must be nonnegative");
  if (!net.connected()) throw ConfigError("graph must be connected");
  return net;
}

bool NetworkModel::connected() const {
  if (n_nodes == 0) return false;
  std::vector<char> seen(size_t(n_nodes), 0);
  std::deque<int> queue{0};
  seen[0] = 1;
  int count = 1;
  while (!queue.empty()) {
    int i = queue.front();
    queue.pop_front();
    for (int a : out_edges[size_t(i)]) {
      int j = edges[size_t(a)].second;
      if (!seen[size_t(j)]) {
        seen[size_t(j)] = 1;
        ++count;
        queue.push_back(j);
      }
    }
  }
  return count == n_nodes;
}

// ---------------------------------------------------------------------------
// ServiceCatalog / RequestProfile / MobilityModel
// ---------------------------------------------------------------------------

int ServiceCatalog::service_id(int task, int model) const {
  if (task < 0 || task >= n_tasks) return -1;
  for (int sid : task_services[size_t(task)])
    if (services[size_t(sid)].model == model) return sid;
  return -1;
}

void ServiceCatalog::rebuild_task_index() {
  n_tasks = 0;
  for (const Service& sv : services) n_tasks = std::max(n_tasks, sv.task + 1);
  task_services.assign(size_t(n_tasks), {});
  for (int sid = 0; sid < n_services(); ++sid)
    task_services[size_t(services[size_t(sid)].task)].push_back(sid);
  for (auto& list : task_services) {
    std::sort(list.begin(), list.end(), [&](int a, int b) {
      return services[size_t(a)].model < services[size_t(b)].model;
    });
    if (list.empty()) throw ConfigError("every task needs at least one model");
  }
}

double RequestProfile::total() const {
  double sum = 0.0;
  for (double v : rate) sum += v;
  return sum;
}

RequestProfile RequestProfile::uniform(int n_nodes, int n_tasks, double value) {
  RequestProfile p;
  p.n_nodes = n_nodes;
  p.n_tasks = n_tasks;
  p.rate.assign(size_t(n_nodes) * n_tasks, value);
  return p;
}

MobilityModel MobilityModel::from_rates(const NetworkModel& net, std::vector<double> lambda) {
  MobilityModel m;
  if (int(lambda.size()) != net.n_arcs()) throw ConfigError("lambda must have one entry per arc");
  m.lambda = std::move(lambda);
  m.big_lambda.assign(size_t(net.n_nodes), 0.0);
  m.q.assign(m.lambda.size(), 0.0);
  for (int a = 0; a < net.n_arcs(); ++a) {
    if (m.lambda[size_t(a)] < 0.0) throw ConfigError("transition rates must be nonnegative");
    m.big_lambda[size_t(net.edges[size_t(a)].first)] += m.lambda[size_t(a)];
  }
  for (int a = 0; a < net.n_arcs(); ++a) {
    double big = m.big_lambda[size_t(net.edges[size_t(a)].first)];
    m.q[size_t(a)] = big > 0.0 ? m.lambda[size_t(a)] / big : 0.0;
  }
  return m;
}

MobilityModel MobilityModel::none(const NetworkModel& net) {
  return from_rates(net, std::vector<double>(size_t(net.n_arcs()), 0.0));
}

// ---------------------------------------------------------------------------
// CostModel
// ---------------------------------------------------------------------------

const char* delay_family_name(DelayFamily f) {
  switch (f) {
    case DelayFamily::Mm1: return "mm1";
    case DelayFamily::Taylor3: return "taylor3";
    case DelayFamily::Constant: return "constant";
  }
  return "?";
}

DelayFamily delay_family_from_name(const std::string& name) {
  if (name == "mm1") return DelayFamily::Mm1;
  if (name == "taylor3") return DelayFamily::Taylor3;
  if (name == "constant") return DelayFamily::Constant;
  throw ConfigError("unknown delay family: " + name);
}

double CostModel::delay(DelayFamily f, double cap, double load) {
  switch (f) {
    case DelayFamily::Mm1:
      if (load >= cap) throw InfeasibleLoad("mm1 load " + fmt_double(load) +
                                            " >= capacity " + fmt_double(cap));
      return 1.0 / (cap - load);
    case DelayFamily::Taylor3: {
      double x = load / cap;
      return (1.0 + x * (1.0 + x * (1.0 + x))) / cap;
    }
    case DelayFamily::Constant:
      return 1.0 / cap;
  }
  return 0.0;
}

double CostModel::delay_deriv(DelayFamily f, double cap, double load) {
  switch (f) {
    case DelayFamily::Mm1: {
      if (load >= cap) throw InfeasibleLoad("mm1 load " + fmt_double(load) +
                                            " >= capacity " + fmt_double(cap));
      double inv = 1.0 / (cap - load);
      return inv * inv;
    }
    case DelayFamily::Taylor3: {
      double x = load / cap;
      return (1.0 + x * (2.0 + 3.0 * x)) / (cap * cap);
    }
    case DelayFamily::Constant:
      return 0.0;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// DecisionState
// ---------------------------------------------------------------------------

DecisionState DecisionState::zeros(int n_nodes, int n_services, int n_arcs) {
  DecisionState st;
  st.n_nodes = n_nodes;
  st.n_services = n_services;
  st.n_arcs = n_arcs;
  st.s.assign(size_t(n_nodes) * n_services, 0.0);
  st.phi.assign(size_t(n_services) * n_arcs, 0.0);
  st.y.assign(size_t(n_nodes) * n_services, 0.0);
  return st;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

std::string ValidationReport::to_string() const {
  std::string out;
  for (const auto& v : violations) {
    out += v;
    out += '\n';
  }
  return out;
}

ValidationReport validate(const NetworkModel& net, const ServiceCatalog& catalog,
                          const DecisionState& state) {
  ValidationReport rep;
  const double tol = 1e-9;
  const int S = catalog.n_services();
  auto flag = [&rep](const std::string& msg) { rep.violations.push_back(msg); };

  if (state.n_nodes != net.n_nodes || state.n_services != S || state.n_arcs != net.n_arcs()) {
    flag("state dimensions do not match the model");
    return rep;
  }

  for (double v : state.s)
    if (v < -tol || v > 1.0 + tol) {
      flag("s out of [0,1]");
      break;
    }
  for (double v : state.phi)
    if (v < -tol || v > 1.0 + tol) {
      flag("phi out of [0,1]");
      break;
    }
  for (double v : state.y)
    if (v < -tol || v > 1.0 + tol) {
      flag("y out of [0,1]");
      break;
    }

  // selection simplex per (i,k)
  for (int i = 0; i < net.n_nodes; ++i) {
    for (int k = 0; k < catalog.n_tasks; ++k) {
      double sum = 0.0;
      for (int sid : catalog.task_services[size_t(k)]) sum += state.s_at(i, sid);
      if (std::abs(sum - 1.0) > tol)
        flag("selection mass at node " + std::to_string(i) + " task " + std::to_string(k) +
             " sums to " + fmt_double(sum));
    }
  }

  // flow conservation y + sum_j phi = 1 per (i, remote service)
  for (int sid = 0; sid < S; ++sid) {
    if (catalog.is_local(sid)) {
      for (int i = 0; i < net.n_nodes; ++i)
        if (std::abs(state.y_at(i, sid) - 1.0) > tol)
          flag("local service " + std::to_string(sid) + " must have y=1 at node " +
               std::to_string(i));
      for (int a = 0; a < net.n_arcs(); ++a)
        if (state.phi_at(sid, a) != 0.0) {
          flag("local service " + std::to_string(sid) + " must not be routed");
          break;
        }
      continue;
    }
    for (int i = 0; i < net.n_nodes; ++i) {
      double sum = state.y_at(i, sid);
      for (int a : net.out_edges[size_t(i)]) sum += state.phi_at(sid, a);
      if (std::abs(sum - 1.0) > tol)
        flag("flow conservation at node " + std::to_string(i) + " service " +
             std::to_string(sid) + ": y + sum(phi) = " + fmt_double(sum));
    }
    if (!check_loop_free(net, state, sid))
      flag("routing loop in service " + std::to_string(sid));
  }

  // storage knapsack
  for (int i = 0; i < net.n_nodes; ++i) {
    double used = 0.0;
    for (int sid = 0; sid < S; ++sid)
      used += catalog.services[size_t(sid)].l_mod * state.y_at(i, sid);
    if (used > net.storage[size_t(i)] + tol)
      flag("storage overflow at node " + std::to_string(i) + ": " + fmt_double(used) + " > " +
           fmt_double(net.storage[size_t(i)]));
  }
  return rep;
}

bool check_loop_free(const NetworkModel& net, const DecisionState& state, int sid) {
  // Kahn's algorithm on the support digraph
  std::vector<int> indeg(size_t(net.n_nodes), 0);
  for (int a = 0; a < net.n_arcs(); ++a)
    if (state.phi_at(sid, a) > 0.0) ++indeg[size_t(net.edges[size_t(a)].second)];
  std::deque<int> queue;
  for (int i = 0; i < net.n_nodes; ++i)
    if (indeg[size_t(i)] == 0) queue.push_back(i);
  int seen = 0;
  while (!queue.empty()) {
    int i = queue.front();
    queue.pop_front();
    ++seen;
    for (int a : net.out_edges[size_t(i)]) {
      if (state.phi_at(sid, a) <= 0.0) continue;
      int j = net.edges[size_t(a)].second;
      if (--indeg[size_t(j)] == 0) queue.push_back(j);
    }
  }
  return seen == net.n_nodes;
}

std::vector<int> service_topo_order(const NetworkModel& net, const DecisionState& state,
                                    int sid) {
  std::vector<int> indeg(size_t(net.n_nodes), 0);
  for (int a = 0; a < net.n_arcs(); ++a)
    if (state.phi_at(sid, a) > 0.0) ++indeg[size_t(net.edges[size_t(a)].second)];
  std::deque<int> queue;
  for (int i = 0; i < net.n_nodes; ++i)
    if (indeg[size_t(i)] == 0) queue.push_back(i);
  std::vector<int> order;
  order.reserve(size_t(net.n_nodes));
  while (!queue.empty()) {
    int i = queue.front();
    queue.pop_front();
    order.push_back(i);
    for (int a : net.out_edges[size_t(i)]) {
      if (state.phi_at(sid, a) <= 0.0) continue;
      int j = net.edges[size_t(a)].second;
      if (--indeg[size_t(j)] == 0) queue.push_back(j);
    }
  }
  if (int(order.size()) != net.n_nodes)
    throw LoopDetected("service " + std::to_string(sid) + " routing graph is cyclic");
  return order;
}

// ---------------------------------------------------------------------------
// Routing DAG helpers
// ---------------------------------------------------------------------------

std::vector<int> hop_distance_to_hosts(const NetworkModel& net, const std::vector<int>& hosts) {
  std::vector<int> dist(size_t(net.n_nodes), -1);
  std::deque<int> queue;
  for (int h : hosts)
    if (dist[size_t(h)] < 0) {
      dist[size_t(h)] = 0;
      queue.push_back(h);
    }
  while (!queue.empty()) {
    int i = queue.front();
    queue.pop_front();
    for (int a : net.out_edges[size_t(i)]) {
      int j = net.edges[size_t(a)].second;
      if (dist[size_t(j)] < 0) {
        dist[size_t(j)] = dist[size_t(i)] + 1;
        queue.push_back(j);
      }
    }
  }
  return dist;
}

std::vector<std::vector<int>> service_routing_dag(const NetworkModel& net,
                                                  const std::vector<int>& hosts) {
  if (hosts.empty()) throw UnreachableHost("service has no host");
  std::vector<int> dist = hop_distance_to_hosts(net, hosts);
  for (int i = 0; i < net.n_nodes; ++i)
    if (dist[size_t(i)] < 0)
      throw UnreachableHost("node " + std::to_string(i) + " cannot reach any host");
  std::vector<std::vector<int>> allowed(size_t(net.n_nodes));
  for (int a = 0; a < net.n_arcs(); ++a) {
    auto [i, j] = net.edges[size_t(a)];
    // j precedes i in the (distance, id) total order
    if (std::make_pair(dist[size_t(j)], j) < std::make_pair(dist[size_t(i)], i))
      allowed[size_t(i)].push_back(a);
  }
  return allowed;
}

// ---------------------------------------------------------------------------
// Random feasible states
// ---------------------------------------------------------------------------

DecisionState random_feasible_state(const Instance& inst, uint64_t seed, PlacementMode mode) {
  const NetworkModel& net = inst.net;
  const ServiceCatalog& cat = inst.catalog;
  const int S = cat.n_services();
  Rng rng(seed * 0x51c64e6dull + 17);
  DecisionState st = DecisionState::zeros(net.n_nodes, S, net.n_arcs());

  // binary placement: every remote service gets one or two hosts, storage
  // permitting; joint mode differs only in how the state is later updated
  (void)mode;
  std::vector<double> remaining = net.storage;
  std::vector<int> order;
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) {
      for (int i = 0; i < net.n_nodes; ++i) st.y_at(i, sid) = 1.0;
    } else {
      order.push_back(sid);
    }
  }
  // first-fit decreasing (random tie order) so fragmentation cannot starve
  // the large models; every service is guaranteed one host before any
  // service gets a second one
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return cat.services[size_t(a)].l_mod > cat.services[size_t(b)].l_mod;
  });
  std::vector<int> nodes(size_t(net.n_nodes));
  for (int i = 0; i < net.n_nodes; ++i) nodes[size_t(i)] = i;

  for (int sid : order) {
    const Service& sv = cat.services[size_t(sid)];
    rng.shuffle(nodes);
    bool placed = false;
    for (int i : nodes) {
      if (remaining[size_t(i)] >= sv.l_mod) {
        remaining[size_t(i)] -= sv.l_mod;
        st.y_at(i, sid) = 1.0;
        placed = true;
        break;
      }
    }
    if (!placed)
      throw NoFeasiblePlacement("service (" + std::to_string(sv.task) + "," +
                                std::to_string(sv.model) + ") fits on no node");
  }
  for (int sid : order) {
    const Service& sv = cat.services[size_t(sid)];
    if (rng.uniform() >= 0.5) continue;  // second host for roughly half
    rng.shuffle(nodes);
    for (int i : nodes) {
      if (st.y_at(i, sid) == 0.0 && remaining[size_t(i)] >= sv.l_mod) {
        remaining[size_t(i)] -= sv.l_mod;
        st.y_at(i, sid) = 1.0;
        break;
      }
    }
  }

  // phi on the distance-based routing DAG
  for (int sid = 0; sid < S; ++sid) {
    if (cat.is_local(sid)) continue;
    std::vector<int> hosts;
    for (int i = 0; i < net.n_nodes; ++i)
      if (st.y_at(i, sid) > 0.5) hosts.push_back(i);
    auto allowed = service_routing_dag(net, hosts);
    for (int i = 0; i < net.n_nodes; ++i) {
      if (st.y_at(i, sid) > 0.5) continue;
      double total = 0.0;
      for (int a : allowed[size_t(i)]) {
        double w = 0.25 + rng.uniform();
        st.phi_at(sid, a) = w;
        total += w;
      }
      for (int a : allowed[size_t(i)]) st.phi_at(sid, a) /= total;
    }
  }

  // interior random point on each selection simplex
  for (int i = 0; i < net.n_nodes; ++i) {
    for (int k = 0; k < cat.n_tasks; ++k) {
      double total = 0.0;
      for (int sid : cat.task_services[size_t(k)]) {
        double w = 0.05 + rng.uniform();
        st.s_at(i, sid) = w;
        total += w;
      }
      for (int sid : cat.task_services[size_t(k)]) st.s_at(i, sid) /= total;
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

namespace {

struct ParsedLine {
  std::string section;
  std::vector<std::string> tokens;
};

std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

Instance parse_scenario(std::istream& in) {
  std::string name = "scenario";
  double d_ap = 0.0, c_u = 0.0, eta = 1.0;
  DelayFamily link_family = DelayFamily::Taylor3, node_family = DelayFamily::Taylor3;
  std::vector<std::tuple<int, int, double>> arcs;
  std::vector<std::pair<int, std::pair<double, double>>> node_caps;  // id -> (nu, R)
  std::vector<Service> services;
  std::vector<std::tuple<int, int, double>> requests;  // i k rate
  std::vector<std::tuple<int, int, double>> mobility;  // i j lambda
  std::vector<std::pair<int, int>> layers;

  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto toks = tokens_of(line);
    if (toks.empty()) continue;
    if (toks[0].front() == '[') {
      section = toks[0];
      continue;
    }
    try {
      if (section.empty()) {
        if (toks.size() < 2) throw ConfigError("expected 'key value'");
        const std::string& key = toks[0];
        if (key == "name") name = toks[1];
        else if (key == "d_ap") d_ap = std::stod(toks[1]);
        else if (key == "c_u") c_u = std::stod(toks[1]);
        else if (key == "eta") eta = std::stod(toks[1]);
        else if (key == "link_delay") link_family = delay_family_from_name(toks[1]);
        else if (key == "node_delay") node_family = delay_family_from_name(toks[1]);
        else throw ConfigError("unknown key '" + key + "'");
      } else if (section == "[links]") {
        arcs.emplace_back(std::stoi(toks.at(0)), std::stoi(toks.at(1)), std::stod(toks.at(2)));
      } else if (section == "[nodes]") {
        node_caps.push_back({std::stoi(toks.at(0)), {std::stod(toks.at(1)), std::stod(toks.at(2))}});
      } else if (section == "[services]") {
        Service sv;
        sv.task = std::stoi(toks.at(0));
        sv.model = std::stoi(toks.at(1));
        sv.l_req = std::stod(toks.at(2));
        sv.l_res = std::stod(toks.at(3));
        sv.l_mod = std::stod(toks.at(4));
        sv.work = std::stod(toks.at(5));
        sv.utility = std::stod(toks.at(6));
        services.push_back(sv);
      } else if (section == "[requests]") {
        requests.emplace_back(std::stoi(toks.at(0)), std::stoi(toks.at(1)), std::stod(toks.at(2)));
      } else if (section == "[mobility]") {
        mobility.emplace_back(std::stoi(toks.at(0)), std::stoi(toks.at(1)), std::stod(toks.at(2)));
      } else if (section == "[layers]") {
        layers.emplace_back(std::stoi(toks.at(0)), std::stoi(toks.at(1)));
      } else {
        throw ConfigError("unknown section " + section);
      }
    } catch (const std::exception& e) {
      throw ConfigError("scenario line " + std::to_string(lineno) + ": " + e.what());
    }
  }

  int n_nodes = 0;
  for (auto& [id, caps] : node_caps) n_nodes = std::max(n_nodes, id + 1);
  for (auto& [i, j, cap] : arcs) n_nodes = std::max({n_nodes, i + 1, j + 1});
  std::vector<double> nu(size_t(n_nodes), 1.0), storage(size_t(n_nodes), 0.0);
  for (auto& [id, caps] : node_caps) {
    nu[size_t(id)] = caps.first;
    storage[size_t(id)] = caps.second;
  }

  Instance inst;
  inst.net = NetworkModel::build(n_nodes, arcs, nu, storage, d_ap, c_u);
  if (!layers.empty()) {
    inst.net.layer.assign(size_t(n_nodes), 0);
    for (auto [i, l] : layers) inst.net.layer.at(size_t(i)) = l;
  }
  inst.catalog.services = std::move(services);
  inst.catalog.eta = eta;
  inst.catalog.rebuild_task_index();
  inst.demand = RequestProfile::uniform(n_nodes, inst.catalog.n_tasks, 0.0);
  for (auto& [i, k, rate] : requests) inst.demand.r(i, k) = rate;
  std::vector<double> lambda(size_t(inst.net.n_arcs()), 0.0);
  for (auto& [i, j, rate] : mobility) {
    int a = inst.net.arc_between(i, j);
    if (a < 0) throw ConfigError("mobility on nonexistent link");
    lambda[size_t(a)] = rate;
  }
  inst.mobility = MobilityModel::from_rates(inst.net, lambda);
  inst.cost.link_family = link_family;
  inst.cost.node_family = node_family;
  return inst;
}

Instance load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open scenario file: " + path);
  return parse_scenario(in);
}

void serialize_scenario(const Instance& inst, const std::string& name, std::ostream& out) {
  out << "name " << name << "\n";
  out << "d_ap " << fmt_double(inst.net.d_ap) << "\n";
  out << "c_u " << fmt_double(inst.net.c_u) << "\n";
  out << "eta " << fmt_double(inst.catalog.eta) << "\n";
  out << "link_delay " << delay_family_name(inst.cost.link_family) << "\n";
  out << "node_delay " << delay_family_name(inst.cost.node_family) << "\n";
  out << "\n[links]\n";
  for (int a = 0; a < inst.net.n_arcs(); ++a) {
    auto [i, j] = inst.net.edges[size_t(a)];
    out << i << " " << j << " " << fmt_double(inst.net.mu[size_t(a)]) << "\n";
  }
  out << "\n[nodes]\n";
  for (int i = 0; i < inst.net.n_nodes; ++i)
    out << i << " " << fmt_double(inst.net.nu[size_t(i)]) << " "
        << fmt_double(inst.net.storage[size_t(i)]) << "\n";
  out << "\n[services]\n";
  for (const Service& sv : inst.catalog.services)
    out << sv.task << " " << sv.model << " " << fmt_double(sv.l_req) << " "
        << fmt_double(sv.l_res) << " " << fmt_double(sv.l_mod) << " " << fmt_double(sv.work)
        << " " << fmt_double(sv.utility) << "\n";
  out << "\n[requests]\n";
  for (int i = 0; i < inst.demand.n_nodes; ++i)
    for (int k = 0; k < inst.demand.n_tasks; ++k)
      if (inst.demand.r(i, k) != 0.0)
        out << i << " " << k << " " << fmt_double(inst.demand.r(i, k)) << "\n";
  out << "\n[mobility]\n";
  for (int a = 0; a < inst.net.n_arcs(); ++a)
    if (inst.mobility.lambda[size_t(a)] != 0.0) {
      auto [i, j] = inst.net.edges[size_t(a)];
      out << i << " " << j << " " << fmt_double(inst.mobility.lambda[size_t(a)]) << "\n";
    }
  if (!inst.net.layer.empty()) {
    out << "\n[layers]\n";
    for (int i = 0; i < inst.net.n_nodes; ++i) out << i << " " << inst.net.layer[size_t(i)] << "\n";
  }
}

std::string scenario_to_string(const Instance& inst, const std::string& name) {
  std::ostringstream out;
  serialize_scenario(inst, name, out);
  return out.str();
}

}  // namespace spsr
