#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "uncplan/dataset.hpp"
#include "uncplan/graph.hpp"
#include "uncplan/planner.hpp"
#include "uncplan/rng.hpp"
#include "uncplan/worldgen.hpp"

namespace uncplan {

struct LocalPolicyConfig {
  int m = 10;               // max inner steps
  double stop_radius = 0.3;  // meters
};

struct LocalPolicyResult {
  Cell end;
  bool stopped = false;  // STOP emitted within stop_radius of the goal
  int steps = 0;
  std::vector<Cell> path;  // cells entered, excluding start
};

// Scripted point-goal policy: grid A* toward the free cell nearest `goal`
// for at most m steps, STOP on entering the stop radius. Throws if start
// is blocked.
LocalPolicyResult local_policy(const OccupancyGrid& grid, Cell start, const Location& goal,
                               const LocalPolicyConfig& config);

struct TraceStep {
  Cell agent;
  int current_node = -1;
  int proposed_node = -1;
};

struct EpisodeResult {
  bool success = false;
  int low_level_steps = 0;
  double achieved_length = 0.0;    // meters
  double geodesic_optimum = 0.0;   // meters, grid A* source -> target location
  std::vector<TraceStep> trace;
};

// Proposes the next waypoint node given (current node, target node).
using NodePlanner = std::function<int(int current, int target)>;

// Outer/inner loop: localize target, re-plan from the nearest node after
// every inner rollout, stop on entering stop_radius of the target node
// location or after `budget` low-level steps.
EpisodeResult run_episode(const OccupancyGrid& grid, const TopoGraph& g,
                          const NodePlanner& planner, Cell source,
                          const std::vector<double>& target_query,
                          const LocalPolicyConfig& config = {}, int budget = 500);

// Mean of success * opt / max(opt, achieved). Throws on nonpositive optimum.
double spl_metric(const std::vector<EpisodeResult>& episodes);

// Uniform random valid node != current.
int random_planner(const TopoGraph& g, int current, Rng& rng);

// NodePlanner over the neural model; one forward per target, cached.
// sample=true draws from the action row via `rng` (required then),
// otherwise argmax with lowest-index ties.
NodePlanner neural_node_planner(std::shared_ptr<const TopoGraph> graph, PlannerParams& params,
                                const ForwardOptions& opts, bool sample, Rng* rng);

struct EpisodeSpec {
  int graph_idx = 0;
  Cell source;
  int target = 0;
};

// Deterministic episode suite: random free source cells and target nodes
// with GT graph distance >= 2 hops from the source's nearest node.
std::vector<EpisodeSpec> sample_episode_specs(const Dataset& data,
                                              const std::vector<OccupancyGrid>& grids, int n,
                                              std::uint64_t seed);

struct SuiteResult {
  double success_rate = 0.0;
  double spl = 0.0;
  int episodes = 0;
};

// Runs one planner over the suite; planner_for(graph_idx) builds the
// NodePlanner for that environment.
SuiteResult run_suite(const Dataset& data, const std::vector<OccupancyGrid>& grids,
                      const std::vector<EpisodeSpec>& specs,
                      const std::function<NodePlanner(int)>& planner_for,
                      const LocalPolicyConfig& config = {}, int budget = 500,
                      std::vector<EpisodeResult>* out_episodes = nullptr);

}  // namespace uncplan
