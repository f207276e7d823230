#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spsr/model.hpp"

namespace spsr {

/// Evaluation scenario parameters. The five presets carry the benchmark
/// defaults exactly:
///   name  |V|  |K|  |S|   mu   nu  Lambda  R
///   grid    9    5   15   10   10    0.10  20
///   mec    13    5   20   10   10    0.10  20
///   er     30   20   40   15   15    0.15  30
///   dtel   68   30  100   15   15    0.15  30
///   sw    120   45  150   20   20    0.15  30
struct ScenarioSpec {
  enum class Topology { Grid, MecTree, ErdosRenyi, EdgeListFile, SmallWorld };
  enum class MobilityKind { Rand, Uni };

  std::string name = "grid";
  Topology topology = Topology::Grid;
  int n_nodes = 9;
  int n_tasks = 5;
  int n_services = 15;
  double mu = 10.0;
  double nu = 10.0;
  double lambda = 0.10;   // per-node transition rate Lambda_i
  double storage = 20.0;  // R_i
  MobilityKind mobility = MobilityKind::Rand;
  uint64_t seed = 1;

  double eta = 1.0;
  double d_ap = 0.0;
  double c_u = 0.0;
  DelayFamily cost_family = DelayFamily::Taylor3;
  double w_local = 0.1;   // workload of m = 0
  double w_remote = 1.0;  // workload of m >= 1
  double er_edge_prob = 0.15;
  int sw_ring_degree = 4;
  double sw_rewire_prob = 0.1;
  std::string edge_file;  // EdgeListFile topology source
};

/// Preset by name: grid, grid-uni, mec, er, dtel, sw.
ScenarioSpec table1_spec(const std::string& name);
std::vector<std::string> table1_names();

/// Deterministic per (spec, seed). Demand r = 1 everywhere; request/result
/// sizes 0.25/0.75; hosting sizes cycle over [10,20,30]; utilities over
/// [0.1,0.3,0.5,0.7]; services dealt to tasks round-robin (model 0 first)
/// so sum |M_k| = |S|. Throws FileNotFound / DisconnectedAfterRetries.
Instance generate_scenario(const ScenarioSpec& spec);

/// Directory with the bundled data files (dtel.edges), overridable per spec.
std::string default_data_dir();

}  // namespace spsr
