#include "spsr/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "spsr/rng.hpp"

namespace spsr {

std::string default_data_dir() {
#ifdef SPSR_DATA_DIR
  return SPSR_DATA_DIR;
#else
  return "data";
#endif
}

std::vector<std::string> table1_names() { return {"grid", "mec", "er", "dtel", "sw"}; }

ScenarioSpec table1_spec(const std::string& name) {
  ScenarioSpec spec;
  spec.name = name;
  if (name == "grid" || name == "grid-rand" || name == "grid-uni") {
    spec.topology = ScenarioSpec::Topology::Grid;
    spec.n_nodes = 9;
    spec.n_tasks = 5;
    spec.n_services = 15;
    spec.mu = spec.nu = 10.0;
    spec.lambda = 0.10;
    spec.storage = 20.0;
    if (name == "grid-uni") spec.mobility = ScenarioSpec::MobilityKind::Uni;
  } else if (name == "mec") {
    spec.topology = ScenarioSpec::Topology::MecTree;
    spec.n_nodes = 13;
    spec.n_tasks = 5;
    spec.n_services = 20;
    spec.mu = spec.nu = 10.0;
    spec.lambda = 0.10;
    spec.storage = 20.0;
  } else if (name == "er") {
    spec.topology = ScenarioSpec::Topology::ErdosRenyi;
    spec.n_nodes = 30;
    spec.n_tasks = 20;
    spec.n_services = 40;
    spec.mu = spec.nu = 15.0;
    spec.lambda = 0.15;
    spec.storage = 30.0;
  } else if (name == "dtel") {
    spec.topology = ScenarioSpec::Topology::EdgeListFile;
    spec.edge_file = default_data_dir() + "/dtel.edges";
    spec.n_nodes = 68;
    spec.n_tasks = 30;
    spec.n_services = 100;
    spec.mu = spec.nu = 15.0;
    spec.lambda = 0.15;
    spec.storage = 30.0;
  } else if (name == "sw") {
    spec.topology = ScenarioSpec::Topology::SmallWorld;
    spec.n_nodes = 120;
    spec.n_tasks = 45;
    spec.n_services = 150;
    spec.mu = spec.nu = 20.0;
    spec.lambda = 0.15;
    spec.storage = 30.0;
  } else {
    throw ConfigError("unknown scenario preset: " + name);
  }
  return spec;
}

namespace {

using ArcList = std::vector<std::tuple<int, int, double>>;

ArcList grid_arcs(int n_nodes, double mu) {
  int side = int(std::lround(std::sqrt(double(n_nodes))));
  if (side * side != n_nodes) throw ConfigError("grid node count must be a square");
  ArcList arcs;
  auto id = [side](int r, int c) { return side * r + c; };
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      if (c + 1 < side) arcs.emplace_back(id(r, c), id(r, c + 1), mu);
      if (r + 1 < side) arcs.emplace_back(id(r, c), id(r + 1, c), mu);
    }
  return arcs;
}

// 3-level 3-ary tree with same-parent children linearly connected
ArcList mec_arcs(double mu) {
  ArcList arcs;
  for (int c = 1; c <= 3; ++c) arcs.emplace_back(0, c, mu);
  arcs.emplace_back(1, 2, mu);
  arcs.emplace_back(2, 3, mu);
  for (int p = 1; p <= 3; ++p) {
    int base = 1 + 3 * p;  // children 4..6, 7..9, 10..12
    for (int c = 0; c < 3; ++c) arcs.emplace_back(p, base + c, mu);
    arcs.emplace_back(base, base + 1, mu);
    arcs.emplace_back(base + 1, base + 2, mu);
  }
  return arcs;
}

bool arcs_connected(int n, const ArcList& arcs) {
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (auto& [a, b, mu] : arcs) {
    (void)mu;
    adj[size_t(a)].push_back(b);
    adj[size_t(b)].push_back(a);
  }
  std::vector<char> seen(size_t(n), 0);
  std::deque<int> queue{0};
  seen[0] = 1;
  int count = 1;
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    for (int v : adj[size_t(u)])
      if (!seen[size_t(v)]) {
        seen[size_t(v)] = 1;
        ++count;
        queue.push_back(v);
      }
  }
  return count == n;
}

ArcList erdos_renyi_arcs(int n, double p, double mu, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    ArcList arcs;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform() < p) arcs.emplace_back(i, j, mu);
    if (arcs_connected(n, arcs)) return arcs;
  }
  throw DisconnectedAfterRetries("Erdos-Renyi stayed disconnected after 100 retries");
}

ArcList small_world_arcs(int n, int ring_degree, double rewire, double mu, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::set<std::pair<int, int>> edges;
    auto key = [](int a, int b) { return std::make_pair(std::min(a, b), std::max(a, b)); };
    for (int i = 0; i < n; ++i)
      for (int k = 1; k <= ring_degree / 2; ++k) edges.insert(key(i, (i + k) % n));
    // Watts-Strogatz rewiring
    std::vector<std::pair<int, int>> all(edges.begin(), edges.end());
    for (auto& e : all) {
      if (rng.uniform() >= rewire) continue;
      int a = e.first;
      for (int tries = 0; tries < 50; ++tries) {
        int b = rng.uniform_int(n);
        if (b == a || edges.count(key(a, b))) continue;
        edges.erase(e);
        edges.insert(key(a, b));
        break;
      }
    }
    ArcList arcs;
    for (auto& [a, b] : edges) arcs.emplace_back(a, b, mu);
    if (arcs_connected(n, arcs)) return arcs;
  }
  throw DisconnectedAfterRetries("small-world stayed disconnected after 100 retries");
}

ArcList edge_file_arcs(const std::string& path, double mu, int* n_out) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open edge list: " + path);
  ArcList arcs;
  int max_node = -1;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    int a, b;
    if (ls >> a >> b) {
      arcs.emplace_back(a, b, mu);
      max_node = std::max({max_node, a, b});
    }
  }
  *n_out = max_node + 1;
  return arcs;
}

}  // namespace

Instance generate_scenario(const ScenarioSpec& spec) {
  Rng rng(spec.seed * 0x9e3779b97f4a7c15ull + 0x7f4a);
  int n = spec.n_nodes;
  ArcList arcs;
  switch (spec.topology) {
    case ScenarioSpec::Topology::Grid:
      arcs = grid_arcs(n, spec.mu);
      break;
    case ScenarioSpec::Topology::MecTree:
      if (n != 13) throw ConfigError("the MEC tree preset has 13 nodes");
      arcs = mec_arcs(spec.mu);
      break;
    case ScenarioSpec::Topology::ErdosRenyi:
      arcs = erdos_renyi_arcs(n, spec.er_edge_prob, spec.mu, rng);
      break;
    case ScenarioSpec::Topology::SmallWorld:
      arcs = small_world_arcs(n, spec.sw_ring_degree, spec.sw_rewire_prob, spec.mu, rng);
      break;
    case ScenarioSpec::Topology::EdgeListFile:
      arcs = edge_file_arcs(spec.edge_file, spec.mu, &n);
      break;
  }

  Instance inst;
  inst.net = NetworkModel::build(n, arcs, std::vector<double>(size_t(n), spec.nu),
                                 std::vector<double>(size_t(n), spec.storage), spec.d_ap,
                                 spec.c_u);
  // layer annotation (used by the SM baseline): hop distance from node 0
  inst.net.layer = hop_distance_to_hosts(inst.net, {0});

  // services dealt round-robin: pass p gives model p to every task until |S|
  // runs out; model 0 is the on-device local model. The hosting-size sequence
  // wraps over the entries that fit within a node (with R = 20 a size-30
  // model could not be placed anywhere).
  static const double kUtil[] = {0.1, 0.3, 0.5, 0.7};
  std::vector<double> sizes;
  for (double s : {10.0, 20.0, 30.0})
    if (s <= spec.storage) sizes.push_back(s);
  if (sizes.empty()) throw NoFeasiblePlacement("storage too small for any model size");
  int dealt = 0, pass = 0;
  std::vector<Service> services;
  while (dealt < spec.n_services) {
    for (int k = 0; k < spec.n_tasks && dealt < spec.n_services; ++k, ++dealt) {
      Service sv;
      sv.task = k;
      sv.model = pass;
      if (pass == 0) {
        sv.l_req = sv.l_res = sv.l_mod = 0.0;
        sv.work = spec.w_local;
        sv.utility = kUtil[0];
      } else {
        sv.l_req = 0.25;
        sv.l_res = 0.75;
        sv.l_mod = sizes[size_t((pass - 1) % int(sizes.size()))];
        sv.work = spec.w_remote;
        sv.utility = kUtil[pass % 4];
      }
      services.push_back(sv);
    }
    ++pass;
  }
  inst.catalog.services = std::move(services);
  inst.catalog.eta = spec.eta;
  inst.catalog.rebuild_task_index();

  inst.demand = RequestProfile::uniform(n, spec.n_tasks, 1.0);

  std::vector<double> lambda(size_t(inst.net.n_arcs()), 0.0);
  if (spec.lambda > 0.0) {
    for (int i = 0; i < n; ++i) {
      const auto& out = inst.net.out_edges[size_t(i)];
      if (out.empty()) continue;
      if (spec.mobility == ScenarioSpec::MobilityKind::Uni) {
        for (int a : out) lambda[size_t(a)] = spec.lambda / double(out.size());
      } else {
        // transition split drawn uniformly at random and normalized
        double total = 0.0;
        std::vector<double> w(out.size());
        for (size_t idx = 0; idx < out.size(); ++idx) {
          w[idx] = rng.uniform();
          total += w[idx];
        }
        if (total <= 0.0) {
          w.assign(out.size(), 1.0);
          total = double(out.size());
        }
        for (size_t idx = 0; idx < out.size(); ++idx)
          lambda[size_t(out[idx])] = spec.lambda * w[idx] / total;
      }
    }
  }
  inst.mobility = MobilityModel::from_rates(inst.net, lambda);
  inst.cost.link_family = spec.cost_family;
  inst.cost.node_family = spec.cost_family;
  return inst;
}

}  // namespace spsr
