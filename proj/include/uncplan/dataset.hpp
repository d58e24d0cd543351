#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "uncplan/graph.hpp"

namespace uncplan {

struct GraphRecord {
  std::uint64_t env_seed = 0;
  std::shared_ptr<const TopoGraph> graph;
  std::string grid_ref;  // path to the occupancy grid file, relative to the manifest
};

struct Dataset {
  std::vector<GraphRecord> graphs;
  int feature_dim() const { return graphs.empty() ? 0 : graphs.front().graph->feature_dim; }
};

// Ordered (source, target) evaluation pair within a dataset.
struct PairRef {
  int graph_idx = 0;
  int source = 0;
  int target = 0;
};

// A (graph, target) forward unit: one planner forward serves every source.
struct UnitRef {
  int graph_idx = 0;
  int target = 0;
};

// All ordered (S,T) pairs with GT path length >= min_steps.
std::vector<PairRef> enumerate_pairs(const Dataset& data, int min_steps = 2);

// Distinct (graph, target) units of a pair list, in first-seen order.
std::vector<UnitRef> units_of_pairs(const std::vector<PairRef>& pairs);

}  // namespace uncplan
