#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "uncplan/dataset.hpp"
#include "uncplan/graph.hpp"
#include "uncplan/planner.hpp"
#include "uncplan/symbolic.hpp"

namespace uncplan {

// Ground truth for one (graph, target) unit, indexed by source node.
struct UnitTruth {
  std::vector<int> labels;                 // canonical next hops, -1 unreachable
  std::vector<std::vector<int>> opt_hops;  // all optimal first hops per source
  std::vector<int> steps;                  // GT path length in hops, -1 unreachable
  std::vector<double> opt_dist;            // GT geodesic graph distance
};

UnitTruth unit_truth(const TopoGraph& g, int target);

// Per-node next hop toward a fixed target; -1 where the producing planner
// has no answer.
using NextHopTable = std::array<int, kMaxNodes>;

NextHopTable table_from_actions(const std::vector<double>& actions_row_major, int n_nodes);
NextHopTable threshold_table(const TopoGraph& g, double tau, int target);
NextHopTable custom_cost_table(const TopoGraph& g, double lambda, int target);
NextHopTable gt_table(const TopoGraph& g, int target);

// Scores one unit: first-hop predictions plus graph-space rollouts against
// gt_adjacency for every source with GT path length >= min_steps.
void accumulate_unit(const TopoGraph& g, int target, const UnitTruth& truth,
                     const NextHopTable& table, std::vector<PairPrediction>& pairs,
                     std::vector<GraphEpisode>& episodes, int min_steps = 2);

// Deterministic (graph,target) unit subsample over pairs with GT length >= 2.
std::vector<UnitRef> sample_units(const Dataset& data, int max_units, std::uint64_t seed);

struct EvalSummary {
  double accuracy = 0.0;
  double hspl = 0.0;
  int n_pairs = 0;
  int n_units = 0;
};

struct NeuralEvalOptions {
  int k_steps = 6;
  GtChannelMode mode = GtChannelMode::kProbsOnly;
  bool zero_features = false;
  Aggregator aggregator = Aggregator::kSerializedGru;
};

EvalSummary evaluate_neural(const Dataset& data, PlannerParams& params,
                            const NeuralEvalOptions& opts, const std::vector<UnitRef>& units);
EvalSummary evaluate_threshold(const Dataset& data, double tau,
                               const std::vector<UnitRef>& units);
EvalSummary evaluate_custom_cost(const Dataset& data, double lambda,
                                 const std::vector<UnitRef>& units);
EvalSummary evaluate_gt_oracle(const Dataset& data, const std::vector<UnitRef>& units);

}  // namespace uncplan
