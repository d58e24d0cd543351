#include "uncplan/hierarchical.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "uncplan/eval.hpp"

namespace uncplan {

namespace {

Cell nearest_free_cell(const OccupancyGrid& grid, const Location& goal) {
  const Cell direct = grid.cell_of(goal);
  if (grid.free(direct)) return direct;
  Cell best{-1, -1};
  double best_d = 0.0;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      const Cell c{x, y};
      if (!grid.free(c)) continue;
      const double d = euclidean(grid.center(c), goal);
      if (best.x < 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
  }
  if (best.x < 0) throw std::runtime_error("nearest_free_cell: no free space");
  return best;
}

}  // namespace

LocalPolicyResult local_policy(const OccupancyGrid& grid, Cell start, const Location& goal,
                               const LocalPolicyConfig& config) {
  if (!grid.free(start)) throw std::invalid_argument("local_policy: start blocked");
  LocalPolicyResult res;
  res.end = start;
  if (euclidean(grid.center(start), goal) <= config.stop_radius) {
    res.stopped = true;
    return res;
  }
  const std::vector<Cell> route = astar_grid(grid, start, nearest_free_cell(grid, goal));
  for (std::size_t i = 1; i < route.size() && res.steps < config.m; ++i) {
    res.end = route[i];
    res.path.push_back(route[i]);
    ++res.steps;
    if (euclidean(grid.center(route[i]), goal) <= config.stop_radius) {
      res.stopped = true;
      break;
    }
  }
  return res;
}

EpisodeResult run_episode(const OccupancyGrid& grid, const TopoGraph& g,
                          const NodePlanner& planner, Cell source,
                          const std::vector<double>& target_query,
                          const LocalPolicyConfig& config, int budget) {
  if (!grid.free(source)) throw std::invalid_argument("run_episode: source blocked");
  const int target = localize_target(g, target_query);
  const Location lt = g.locations[target];

  EpisodeResult res;
  const std::vector<Cell> opt = astar_grid(grid, source, nearest_free_cell(grid, lt));
  if (!opt.empty()) {
    res.geodesic_optimum = (static_cast<double>(opt.size()) - 1.0) * grid.resolution;
  }

  Cell agent = source;
  int current = nearest_node(g, grid.center(agent));
  while (res.low_level_steps < budget) {
    if (euclidean(grid.center(agent), lt) <= config.stop_radius) {
      res.success = true;
      break;
    }
    const int proposed = planner(current, target);
    res.trace.push_back({agent, current, proposed});
    if (proposed < 0 || proposed >= kMaxNodes || !g.valid_mask[proposed]) break;

    LocalPolicyConfig inner = config;
    inner.m = std::min(config.m, budget - res.low_level_steps);
    const LocalPolicyResult lr = local_policy(grid, agent, g.locations[proposed], inner);
    agent = lr.end;
    res.achieved_length += lr.steps * grid.resolution;
    // a zero-motion inner loop still burns one low-level action (the STOP),
    // so self-loop planners exhaust the budget instead of spinning
    res.low_level_steps += std::max(1, lr.steps);
    if (lr.steps == 0 && !lr.stopped) break;
    // The node estimate only advances when a subgoal is actually reached; a
    // truncated inner loop keeps the estimate frozen so the next query
    // continues the same journey. Re-localizing to the metrically nearest
    // node mid-transit can livelock: a long edge A->B often crosses the
    // Voronoi cell of a third node C whose best next hop points back to A,
    // and the agent then shuttles between A and C forever.
    if (lr.stopped) current = proposed;
  }
  if (!res.success && euclidean(grid.center(agent), lt) <= config.stop_radius) {
    res.success = true;
  }
  return res;
}

double spl_metric(const std::vector<EpisodeResult>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("spl_metric: empty");
  double sum = 0.0;
  for (const EpisodeResult& e : episodes) {
    if (e.geodesic_optimum <= 0.0) {
      throw std::invalid_argument("spl_metric: nonpositive geodesic optimum");
    }
    if (e.success) {
      sum += e.geodesic_optimum / std::max(e.geodesic_optimum, e.achieved_length);
    }
  }
  return sum / static_cast<double>(episodes.size());
}

int random_planner(const TopoGraph& g, int current, Rng& rng) {
  std::vector<int> options;
  for (int i = 0; i < kMaxNodes; ++i) {
    if (g.valid_mask[i] && i != current) options.push_back(i);
  }
  if (options.empty()) throw std::invalid_argument("random_planner: no other nodes");
  return options[rng.integer(options.size())];
}

NodePlanner neural_node_planner(std::shared_ptr<const TopoGraph> graph, PlannerParams& params,
                                const ForwardOptions& opts, bool sample, Rng* rng) {
  if (sample && rng == nullptr) {
    throw std::invalid_argument("neural_node_planner: sampling needs an rng");
  }
  auto cache = std::make_shared<std::map<int, ad::Tensor>>();
  return [graph, &params, opts, sample, rng, cache](int current, int target) {
    auto it = cache->find(target);
    if (it == cache->end()) {
      PlanningInstance inst;
      inst.graph = graph;
      inst.source = target;
      inst.target = target;
      it = cache->emplace(target, planner_actions(inst, params, opts)).first;
    }
    return predict_next(it->second, current,
                        sample ? PredictMode::kSampling : PredictMode::kDeterministic, rng);
  };
}

std::vector<EpisodeSpec> sample_episode_specs(const Dataset& data,
                                              const std::vector<OccupancyGrid>& grids, int n,
                                              std::uint64_t seed) {
  if (data.graphs.empty() || grids.size() != data.graphs.size()) {
    throw std::invalid_argument("sample_episode_specs: dataset/grid mismatch");
  }
  Rng rng(mix_seed(seed, 0xE915));
  std::vector<EpisodeSpec> specs;
  int guard = 200 * n;
  while (static_cast<int>(specs.size()) < n && guard-- > 0) {
    const int gi = static_cast<int>(rng.integer(data.graphs.size()));
    const TopoGraph& g = *data.graphs[gi].graph;
    const OccupancyGrid& grid = grids[gi];
    const int target = static_cast<int>(rng.integer(g.n_nodes));
    if (!g.valid_mask[target]) continue;

    std::vector<Cell> free_cells;
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        if (grid.free({x, y})) free_cells.push_back({x, y});
      }
    }
    const Cell source = free_cells[rng.integer(free_cells.size())];
    const int start_node = nearest_node(g, grid.center(source));
    const UnitTruth truth = unit_truth(g, target);
    if (truth.steps[start_node] < 2) continue;
    if (euclidean(grid.center(source), g.locations[target]) <= 0.3) continue;
    specs.push_back({gi, source, target});
  }
  if (static_cast<int>(specs.size()) < n) {
    throw std::runtime_error("sample_episode_specs: could not fill suite");
  }
  return specs;
}

SuiteResult run_suite(const Dataset& data, const std::vector<OccupancyGrid>& grids,
                      const std::vector<EpisodeSpec>& specs,
                      const std::function<NodePlanner(int)>& planner_for,
                      const LocalPolicyConfig& config, int budget,
                      std::vector<EpisodeResult>* out_episodes) {
  std::vector<EpisodeResult> episodes;
  episodes.reserve(specs.size());
  for (const EpisodeSpec& s : specs) {
    const TopoGraph& g = *data.graphs[s.graph_idx].graph;
    const std::vector<double> query(g.feature_row(s.target),
                                    g.feature_row(s.target) + g.feature_dim);
    episodes.push_back(run_episode(grids[s.graph_idx], g, planner_for(s.graph_idx), s.source,
                                   query, config, budget));
  }
  SuiteResult res;
  res.episodes = static_cast<int>(episodes.size());
  int succ = 0;
  for (const EpisodeResult& e : episodes) succ += e.success ? 1 : 0;
  res.success_rate = static_cast<double>(succ) / std::max<std::size_t>(1, episodes.size());
  res.spl = spl_metric(episodes);
  if (out_episodes) *out_episodes = std::move(episodes);
  return res;
}

}  // namespace uncplan
