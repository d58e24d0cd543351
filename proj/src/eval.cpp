#include "uncplan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "uncplan/rng.hpp"

namespace uncplan {

namespace {
constexpr double kOptTol = 1e-9;

int idx(int i, int j) { return i * kMaxNodes + j; }

// Canonical next hops toward `target` from a from-target distance table.
NextHopTable table_from_bounds(const std::vector<double>& costs, const AdjMask& adjacency,
                               const TopoGraph& g, const DistTable& from_target, int target) {
  NextHopTable table;
  table.fill(-1);
  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i]) continue;
    if (i == target) {
      table[i] = target;
      continue;
    }
    if (!std::isfinite(from_target.bounds[i])) continue;
    for (int j = 0; j < kMaxNodes; ++j) {
      if (j == i || !g.valid_mask[j] || !adjacency[idx(i, j)]) continue;
      if (std::isfinite(from_target.bounds[j]) &&
          std::abs(costs[idx(i, j)] + from_target.bounds[j] - from_target.bounds[i]) <=
              kOptTol) {
        table[i] = j;
        break;
      }
    }
  }
  return table;
}
}  // namespace

std::vector<PairRef> enumerate_pairs(const Dataset& data, int min_steps) {
  std::vector<PairRef> pairs;
  for (int gi = 0; gi < static_cast<int>(data.graphs.size()); ++gi) {
    const TopoGraph& g = *data.graphs[gi].graph;
    for (int target = 0; target < kMaxNodes; ++target) {
      if (!g.valid_mask[target]) continue;
      const UnitTruth truth = unit_truth(g, target);
      for (int source = 0; source < kMaxNodes; ++source) {
        if (!g.valid_mask[source] || source == target) continue;
        if (truth.steps[source] >= min_steps) pairs.push_back({gi, source, target});
      }
    }
  }
  return pairs;
}

std::vector<UnitRef> units_of_pairs(const std::vector<PairRef>& pairs) {
  std::vector<UnitRef> units;
  for (const PairRef& p : pairs) {
    if (units.empty() || units.back().graph_idx != p.graph_idx ||
        units.back().target != p.target) {
      bool seen = false;
      for (const UnitRef& u : units) {
        if (u.graph_idx == p.graph_idx && u.target == p.target) {
          seen = true;
          break;
        }
      }
      if (!seen) units.push_back({p.graph_idx, p.target});
    }
  }
  return units;
}

UnitTruth unit_truth(const TopoGraph& g, int target) {
  const AdjMask adj = gt_mask(g);
  const DistTable from_target = dijkstra(g, adj, target);

  UnitTruth t;
  t.labels.assign(kMaxNodes, -1);
  t.opt_hops.resize(kMaxNodes);
  t.steps.assign(kMaxNodes, -1);
  t.opt_dist.assign(kMaxNodes, std::numeric_limits<double>::infinity());

  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i]) continue;
    if (i == target) {
      t.labels[i] = target;
      t.steps[i] = 0;
      t.opt_dist[i] = 0.0;
      continue;
    }
    if (!std::isfinite(from_target.bounds[i])) continue;
    t.opt_dist[i] = from_target.bounds[i];
    for (int j = 0; j < kMaxNodes; ++j) {
      if (j == i || !g.valid_mask[j] || !adj[idx(i, j)]) continue;
      if (std::isfinite(from_target.bounds[j]) &&
          std::abs(g.dist(i, j) + from_target.bounds[j] - from_target.bounds[i]) <= kOptTol) {
        if (t.labels[i] < 0) t.labels[i] = j;
        t.opt_hops[i].push_back(j);
      }
    }
  }
  // hop counts along the canonical label chain
  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i] || t.labels[i] < 0 || t.steps[i] == 0) continue;
    int steps = 0;
    for (int cur = i; cur != target; cur = t.labels[cur]) ++steps;
    t.steps[i] = steps;
  }
  return t;
}

NextHopTable table_from_actions(const std::vector<double>& actions_row_major, int n_nodes) {
  NextHopTable table;
  table.fill(-1);
  for (int i = 0; i < n_nodes; ++i) {
    int best = -1;
    double best_p = -1.0;
    for (int j = 0; j < kMaxNodes; ++j) {
      const double p = actions_row_major[idx(i, j)];
      if (p > best_p) {
        best_p = p;
        best = j;
      }
    }
    table[i] = best;
  }
  return table;
}

NextHopTable threshold_table(const TopoGraph& g, double tau, int target) {
  const AdjMask m = threshold_mask(g, tau);
  return table_from_bounds(g.distances, m, g, dijkstra(g, m, target), target);
}

NextHopTable custom_cost_table(const TopoGraph& g, double lambda, int target) {
  AdjMask m(kMaxNodes * kMaxNodes, 0);
  std::vector<double> costs(kMaxNodes * kMaxNodes, 0.0);
  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i]) continue;
    for (int j = 0; j < kMaxNodes; ++j) {
      if (j == i || !g.valid_mask[j]) continue;
      const double p = g.prob(i, j);
      if (p <= 0.0) continue;
      m[idx(i, j)] = 1;
      costs[idx(i, j)] = g.dist(i, j) - lambda * std::log(p);
    }
  }
  return table_from_bounds(costs, m, g, dijkstra_costs(costs, m, g.valid_mask, target), target);
}

NextHopTable gt_table(const TopoGraph& g, int target) {
  const std::vector<int> labels = gt_labels(g, target);
  NextHopTable table;
  table.fill(-1);
  for (int i = 0; i < kMaxNodes; ++i) table[i] = labels[i];
  return table;
}

void accumulate_unit(const TopoGraph& g, int target, const UnitTruth& truth,
                     const NextHopTable& table, std::vector<PairPrediction>& pairs,
                     std::vector<GraphEpisode>& episodes, int min_steps) {
  const NextHopFn planner = [&table](int current) { return table[current]; };
  for (int source = 0; source < kMaxNodes; ++source) {
    if (!g.valid_mask[source] || source == target) continue;
    if (truth.steps[source] < min_steps) continue;
    pairs.push_back({table[source], truth.opt_hops[source], truth.steps[source]});
    const PathResult roll = rollout_graph_path(planner, g, source, target);
    episodes.push_back({roll.reached, roll.total_dist, truth.opt_dist[source]});
  }
}

std::vector<UnitRef> sample_units(const Dataset& data, int max_units, std::uint64_t seed) {
  std::vector<UnitRef> units = units_of_pairs(enumerate_pairs(data));
  if (max_units > 0 && max_units < static_cast<int>(units.size())) {
    Rng rng(seed);
    rng.shuffle(units);
    units.resize(max_units);
  }
  return units;
}

namespace {
template <typename TableFn>
EvalSummary evaluate_with_tables(const Dataset& data, const std::vector<UnitRef>& units,
                                 const TableFn& make_table) {
  std::vector<PairPrediction> pairs;
  std::vector<GraphEpisode> episodes;
  for (const UnitRef& u : units) {
    const TopoGraph& g = *data.graphs[u.graph_idx].graph;
    const UnitTruth truth = unit_truth(g, u.target);
    accumulate_unit(g, u.target, truth, make_table(g, u.target), pairs, episodes);
  }
  EvalSummary s;
  s.n_units = static_cast<int>(units.size());
  s.n_pairs = static_cast<int>(pairs.size());
  if (!pairs.empty()) {
    s.accuracy = accuracy_metric(pairs);
    s.hspl = hspl_metric(episodes);
  }
  return s;
}
}  // namespace

EvalSummary evaluate_neural(const Dataset& data, PlannerParams& params,
                            const NeuralEvalOptions& opts, const std::vector<UnitRef>& units) {
  ForwardOptions fo;
  fo.k_steps = opts.k_steps;
  fo.mode = opts.mode;
  fo.zero_features = opts.zero_features;
  fo.aggregator = opts.aggregator;

  std::vector<PairPrediction> pairs;
  std::vector<GraphEpisode> episodes;
  constexpr int kChunk = 16;
  std::size_t i = 0;
  while (i < units.size()) {
    // batch consecutive same-shape units through one forward pass
    const int n = data.graphs[units[i].graph_idx].graph->n_nodes;
    std::vector<PlanningInstance> insts;
    std::size_t j = i;
    while (j < units.size() && static_cast<int>(insts.size()) < kChunk &&
           data.graphs[units[j].graph_idx].graph->n_nodes == n) {
      PlanningInstance inst;
      inst.graph = data.graphs[units[j].graph_idx].graph;
      inst.source = units[j].target;
      inst.target = units[j].target;
      insts.push_back(std::move(inst));
      ++j;
    }
    const std::vector<ad::Tensor> actions = planner_actions_batch(insts, params, fo);
    for (std::size_t k = 0; k < insts.size(); ++k) {
      const UnitRef& u = units[i + k];
      const TopoGraph& g = *data.graphs[u.graph_idx].graph;
      const UnitTruth truth = unit_truth(g, u.target);
      accumulate_unit(g, u.target, truth, table_from_actions(actions[k].values, g.n_nodes),
                      pairs, episodes);
    }
    i = j;
  }

  EvalSummary s;
  s.n_units = static_cast<int>(units.size());
  s.n_pairs = static_cast<int>(pairs.size());
  if (!pairs.empty()) {
    s.accuracy = accuracy_metric(pairs);
    s.hspl = hspl_metric(episodes);
  }
  return s;
}

EvalSummary evaluate_threshold(const Dataset& data, double tau,
                               const std::vector<UnitRef>& units) {
  return evaluate_with_tables(
      data, units, [&](const TopoGraph& g, int target) { return threshold_table(g, tau, target); });
}

EvalSummary evaluate_custom_cost(const Dataset& data, double lambda,
                                 const std::vector<UnitRef>& units) {
  return evaluate_with_tables(data, units, [&](const TopoGraph& g, int target) {
    return custom_cost_table(g, lambda, target);
  });
}

EvalSummary evaluate_gt_oracle(const Dataset& data, const std::vector<UnitRef>& units) {
  return evaluate_with_tables(
      data, units, [&](const TopoGraph& g, int target) { return gt_table(g, target); });
}

}  // namespace uncplan
