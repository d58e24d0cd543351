#include "uncplan/symbolic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace uncplan {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kOptTol = 1e-9;

int idx(int i, int j) { return i * kMaxNodes + j; }

// Walk the predecessor tree (rooted at source) backward from target.
PathResult extract_path(const TopoGraph& g, const DistTable& table, int source, int target) {
  PathResult r;
  r.predecessor = table.predecessor;
  if (!std::isfinite(table.bounds[target])) {
    r.nodes = {source};
    return r;
  }
  std::vector<int> rev;
  for (int cur = target; cur != -1; cur = table.predecessor[cur]) rev.push_back(cur);
  std::reverse(rev.begin(), rev.end());
  r.nodes = std::move(rev);
  r.reached = true;
  for (std::size_t i = 1; i < r.nodes.size(); ++i) {
    r.total_dist += g.dist(r.nodes[i - 1], r.nodes[i]);
  }
  return r;
}

void canonical_predecessors(const std::vector<double>& costs, const AdjMask& adjacency,
                            const std::vector<std::uint8_t>& valid_mask, int source,
                            DistTable& table) {
  for (int i = 0; i < kMaxNodes; ++i) {
    table.predecessor[i] = -1;
    if (i == source || !valid_mask[i] || !std::isfinite(table.bounds[i])) continue;
    for (int j = 0; j < kMaxNodes; ++j) {
      if (j == i || !valid_mask[j] || !adjacency[idx(j, i)]) continue;
      if (std::isfinite(table.bounds[j]) &&
          std::abs(table.bounds[j] + costs[idx(j, i)] - table.bounds[i]) <= kOptTol) {
        table.predecessor[i] = j;
        break;
      }
    }
  }
}
}  // namespace

AdjMask gt_mask(const TopoGraph& g) {
  if (!g.has_gt()) throw std::invalid_argument("gt_mask: gt_adjacency absent");
  return g.gt_adjacency;
}

AdjMask threshold_mask(const TopoGraph& g, double tau) {
  AdjMask m(kMaxNodes * kMaxNodes, 0);
  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i]) continue;
    for (int j = 0; j < kMaxNodes; ++j) {
      if (j == i || !g.valid_mask[j]) continue;
      m[idx(i, j)] = g.prob(i, j) >= tau ? 1 : 0;
    }
  }
  return m;
}

DistTable dijkstra_costs(const std::vector<double>& costs, const AdjMask& adjacency,
                         const std::vector<std::uint8_t>& valid_mask, int source) {
  DistTable t;
  t.bounds.assign(kMaxNodes, kInf);
  t.predecessor.assign(kMaxNodes, -1);
  t.bounds[source] = 0.0;

  std::array<bool, kMaxNodes> done{};
  for (int iter = 0; iter < kMaxNodes; ++iter) {
    int u = -1;
    double best = kInf;
    for (int i = 0; i < kMaxNodes; ++i) {
      if (done[i] || !valid_mask[i]) continue;
      if (t.bounds[i] < best) {
        best = t.bounds[i];
        u = i;
      }
    }
    if (u < 0) break;
    done[u] = true;
    for (int v = 0; v < kMaxNodes; ++v) {
      if (v == u || !valid_mask[v] || !adjacency[idx(u, v)]) continue;
      const double cand = t.bounds[u] + costs[idx(u, v)];
      if (cand < t.bounds[v]) t.bounds[v] = cand;
    }
  }
  canonical_predecessors(costs, adjacency, valid_mask, source, t);
  return t;
}

DistTable dijkstra(const TopoGraph& g, const AdjMask& adjacency, int source) {
  return dijkstra_costs(g.distances, adjacency, g.valid_mask, source);
}

DistTable bellman_ford(const TopoGraph& g, const AdjMask& adjacency, int source, int rounds) {
  if (rounds < 1) throw std::invalid_argument("bellman_ford: rounds must be >= 1");
  DistTable t;
  t.bounds.assign(kMaxNodes, kInf);
  t.predecessor.assign(kMaxNodes, -1);
  t.bounds[source] = 0.0;

  for (int round = 0; round < rounds; ++round) {
    for (int i = 0; i < kMaxNodes; ++i) {
      if (!g.valid_mask[i]) continue;
      for (int j = 0; j < kMaxNodes; ++j) {
        if (j == i || !g.valid_mask[j] || !adjacency[idx(i, j)]) continue;
        if (!std::isfinite(t.bounds[j])) continue;
        const double cand = t.bounds[j] + g.dist(i, j);
        if (cand < t.bounds[i]) {
          t.bounds[i] = cand;
          t.predecessor[i] = j;
        }
      }
    }
  }
  return t;
}

PathResult brute_force_shortest(const TopoGraph& g, const AdjMask& adjacency, int source,
                                int target) {
  if (g.n_nodes > 10) throw std::invalid_argument("brute_force_shortest: graph too large");
  PathResult best;
  best.predecessor.assign(kMaxNodes, -1);
  best.nodes = {source};
  best.total_dist = kInf;

  std::vector<int> path = {source};
  std::array<bool, kMaxNodes> used{};
  used[source] = true;

  std::function<void(int, double)> dfs = [&](int cur, double dist) {
    if (cur == target) {
      if (dist < best.total_dist) {
        best.total_dist = dist;
        best.nodes = path;
        best.reached = true;
      }
      return;
    }
    for (int j = 0; j < g.n_nodes; ++j) {
      if (used[j] || !g.valid_mask[j] || !adjacency[idx(cur, j)]) continue;
      used[j] = true;
      path.push_back(j);
      dfs(j, dist + g.dist(cur, j));
      path.pop_back();
      used[j] = false;
    }
  };
  dfs(source, 0.0);
  if (!best.reached) best.total_dist = 0.0;
  return best;
}

PathResult threshold_plan(const TopoGraph& g, double tau, int source, int target) {
  const AdjMask m = threshold_mask(g, tau);
  return extract_path(g, dijkstra(g, m, source), source, target);
}

PathResult custom_cost_plan(const TopoGraph& g, double lambda, int source, int target) {
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
  const DistTable t = dijkstra_costs(costs, m, g.valid_mask, source);
  PathResult r;
  r.predecessor = t.predecessor;
  if (!std::isfinite(t.bounds[target])) {
    r.nodes = {source};
    return r;
  }
  std::vector<int> rev;
  for (int cur = target; cur != -1; cur = t.predecessor[cur]) rev.push_back(cur);
  std::reverse(rev.begin(), rev.end());
  r.nodes = std::move(rev);
  r.reached = true;
  for (std::size_t i = 1; i < r.nodes.size(); ++i) {
    r.total_dist += g.dist(r.nodes[i - 1], r.nodes[i]);  // metric, not blended cost
  }
  return r;
}

std::vector<int> gt_labels(const TopoGraph& g, int target) {
  const AdjMask adj = gt_mask(g);
  const DistTable from_target = dijkstra(g, adj, target);
  std::vector<int> labels(kMaxNodes, -1);
  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i]) continue;
    if (i == target) {
      labels[i] = target;
      continue;
    }
    if (!std::isfinite(from_target.bounds[i])) continue;
    for (int j = 0; j < kMaxNodes; ++j) {
      if (j == i || !g.valid_mask[j] || !adj[idx(i, j)]) continue;
      if (std::isfinite(from_target.bounds[j]) &&
          std::abs(g.dist(i, j) + from_target.bounds[j] - from_target.bounds[i]) <= kOptTol) {
        labels[i] = j;
        break;
      }
    }
  }
  return labels;
}

std::vector<int> optimal_first_hops(const TopoGraph& g, int source, int target) {
  const AdjMask adj = gt_mask(g);
  const DistTable from_target = dijkstra(g, adj, target);
  std::vector<int> hops;
  if (source == target || !std::isfinite(from_target.bounds[source])) return hops;
  for (int j = 0; j < kMaxNodes; ++j) {
    if (j == source || !g.valid_mask[j] || !adj[idx(source, j)]) continue;
    if (std::isfinite(from_target.bounds[j]) &&
        std::abs(g.dist(source, j) + from_target.bounds[j] - from_target.bounds[source]) <=
            kOptTol) {
      hops.push_back(j);
    }
  }
  return hops;
}

int gt_path_steps(const TopoGraph& g, int source, int target) {
  if (source == target) return 0;
  const std::vector<int> labels = gt_labels(g, target);
  if (labels[source] < 0) return -1;
  int steps = 0;
  for (int cur = source; cur != target; cur = labels[cur]) ++steps;
  return steps;
}

PathResult rollout_graph_path(const NextHopFn& planner, const TopoGraph& g, int source,
                              int target, int max_steps) {
  const AdjMask adj = gt_mask(g);
  if (max_steps <= 0) max_steps = 2 * g.n_nodes;
  PathResult r;
  r.predecessor.assign(kMaxNodes, -1);
  r.nodes = {source};
  int cur = source;
  if (cur == target) {
    r.reached = true;
    return r;
  }
  for (int step = 0; step < max_steps; ++step) {
    const int nh = planner(cur);
    if (nh < 0 || nh >= kMaxNodes || !g.valid_mask[nh] || !adj[idx(cur, nh)]) {
      return r;  // invalid hop: failure, hop not appended
    }
    r.total_dist += g.dist(cur, nh);
    r.nodes.push_back(nh);
    cur = nh;
    if (cur == target) {
      r.reached = true;
      return r;
    }
  }
  return r;  // budget exhausted
}

double accuracy_metric(const std::vector<PairPrediction>& pairs, int min_steps) {
  int counted = 0, correct = 0;
  for (const auto& p : pairs) {
    if (p.gt_steps < min_steps) continue;
    ++counted;
    if (std::find(p.optimal_hops.begin(), p.optimal_hops.end(), p.predicted_hop) !=
        p.optimal_hops.end()) {
      ++correct;
    }
  }
  if (counted == 0) throw std::invalid_argument("accuracy_metric: empty filtered set");
  return static_cast<double>(correct) / counted;
}

double hspl_metric(const std::vector<GraphEpisode>& episodes) {
  if (episodes.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& e : episodes) {
    if (e.optimal <= 0.0) throw std::invalid_argument("hspl_metric: non-positive optimal");
    if (e.reached) sum += e.optimal / std::max(e.optimal, e.achieved);
  }
  return sum / episodes.size();
}

}  // namespace uncplan
