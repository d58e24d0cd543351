#pragma once

#include <vector>

#include "uncplan/graph.hpp"
#include "uncplan/rng.hpp"

namespace uncplan::testutil {

// Random geometric-ish graph: uniform locations, Euclidean distances,
// Bernoulli(p_edge) GT adjacency, uniform edge probabilities. Not
// necessarily connected.
inline TopoGraph random_graph(int n, Rng& rng, double p_edge = 0.5, int feature_dim = 4) {
  TopoGraph g = TopoGraph::with_capacity(n, feature_dim);
  for (int i = 0; i < n; ++i) g.locations[i] = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      g.set_dist(i, j, euclidean(g.locations[i], g.locations[j]));
      g.set_prob(i, j, rng.uniform());
    }
  }
  g.gt_adjacency.assign(kMaxNodes * kMaxNodes, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.bernoulli(p_edge)) g.set_adjacent(i, j, true);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < feature_dim; ++k) g.features[i * feature_dim + k] = rng.uniform(0.1, 1.0);
  }
  return g;
}

// Graph from explicit locations; edges given as index pairs.
inline TopoGraph graph_from(const std::vector<Location>& locs,
                            const std::vector<std::pair<int, int>>& edges, int feature_dim = 2) {
  TopoGraph g = TopoGraph::with_capacity(static_cast<int>(locs.size()), feature_dim);
  for (std::size_t i = 0; i < locs.size(); ++i) g.locations[i] = locs[i];
  const int n = g.n_nodes;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) g.set_dist(i, j, euclidean(g.locations[i], g.locations[j]));
  }
  g.gt_adjacency.assign(kMaxNodes * kMaxNodes, 0);
  for (auto [a, b] : edges) {
    g.set_adjacent(a, b, true);
    g.set_prob(a, b, 1.0);
  }
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < feature_dim; ++k) g.features[i * feature_dim + k] = 1.0 + i + 0.1 * k;
  }
  return g;
}

}  // namespace uncplan::testutil
