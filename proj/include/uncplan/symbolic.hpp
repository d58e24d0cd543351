#pragma once

#include <functional>
#include <vector>

#include "uncplan/graph.hpp"

namespace uncplan {

using AdjMask = std::vector<std::uint8_t>;  // kMaxNodes * kMaxNodes

AdjMask gt_mask(const TopoGraph& g);
AdjMask threshold_mask(const TopoGraph& g, double tau);

struct DistTable {
  std::vector<double> bounds;    // kMaxNodes, +inf when unreachable
  std::vector<int> predecessor;  // kMaxNodes, -1 at source/unreachable
};

struct PathResult {
  std::vector<int> nodes;
  double total_dist = 0.0;
  bool reached = false;
  std::vector<int> predecessor;
};

// Exact shortest paths over edges where `adjacency` is true, weighted by
// g.distances. Predecessors are canonical: lowest-index optimal parent.
DistTable dijkstra(const TopoGraph& g, const AdjMask& adjacency, int source);

// Sequential relaxation sweeps in ascending node order, updating bounds in
// place. With rounds >= N-1 this equals dijkstra exactly.
DistTable bellman_ford(const TopoGraph& g, const AdjMask& adjacency, int source, int rounds);

// Test oracle: exact optimum by enumerating all simple paths. n_nodes <= 10.
PathResult brute_force_shortest(const TopoGraph& g, const AdjMask& adjacency, int source,
                                int target);

// Symbolic baseline: adjacency = (edge_probs >= tau), then Dijkstra.
PathResult threshold_plan(const TopoGraph& g, double tau, int source, int target);

// Symbolic baseline with blended edge cost D_ij - lambda*log(E_ij); edges
// with E_ij == 0 are dropped. total_dist reports metric distance of the
// returned sequence, not the blended cost.
PathResult custom_cost_plan(const TopoGraph& g, double lambda, int source, int target);

// Generic Dijkstra over an explicit cost matrix (kMaxNodes^2). Exposed for
// oracle tests against custom_cost_plan.
DistTable dijkstra_costs(const std::vector<double>& costs, const AdjMask& adjacency,
                         const std::vector<std::uint8_t>& valid_mask, int source);

// Per-node GT next hop toward `target` under gt_adjacency: the canonical
// lowest-index first node of a shortest path. labels[target] = target,
// unreachable nodes -1.
std::vector<int> gt_labels(const TopoGraph& g, int target);

// All GT-optimal first hops from `source` toward `target` (lowest index
// first). Empty when unreachable or source == target.
std::vector<int> optimal_first_hops(const TopoGraph& g, int source, int target);

// Number of hops on a GT shortest path source -> target, -1 if unreachable.
int gt_path_steps(const TopoGraph& g, int source, int target);

using NextHopFn = std::function<int(int current)>;

// Repeatedly queries the planner for a next hop; every hop is checked
// against gt_adjacency. reached only if the target was hit via valid hops
// within max_steps (default 2*N when max_steps <= 0).
PathResult rollout_graph_path(const NextHopFn& planner, const TopoGraph& g, int source,
                              int target, int max_steps = 0);

struct PairPrediction {
  int predicted_hop = -1;
  std::vector<int> optimal_hops;
  int gt_steps = 0;  // GT path length in hops for the (source,target) pair
};

// Fraction of pairs whose prediction is any GT-optimal first hop, restricted
// to pairs with GT path length >= min_steps. Throws if the filter empties
// the set.
double accuracy_metric(const std::vector<PairPrediction>& pairs, int min_steps = 2);

struct GraphEpisode {
  bool reached = false;
  double achieved = 0.0;
  double optimal = 0.0;
};

// Mean of reached * optimal / max(optimal, achieved).
double hspl_metric(const std::vector<GraphEpisode>& episodes);

}  // namespace uncplan
