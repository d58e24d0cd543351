#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uncplan/dataset.hpp"
#include "uncplan/graph.hpp"

namespace uncplan {

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

// 2D boolean free/blocked world at fixed metric resolution. Ground truth
// for line of sight and geodesics. Border cells are always blocked and the
// free space forms a single 4-connected component.
struct OccupancyGrid {
  int width = 0;
  int height = 0;
  double resolution = 0.1;             // meters per cell
  std::vector<std::uint8_t> cells;     // 1 = free

  bool in_bounds(const Cell& c) const {
    return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height;
  }
  bool free(const Cell& c) const { return in_bounds(c) && cells[c.y * width + c.x] != 0; }
  void set_free(const Cell& c, bool v) { cells[c.y * width + c.x] = v ? 1 : 0; }

  Location center(const Cell& c) const {
    return {(c.x + 0.5) * resolution, (c.y + 0.5) * resolution};
  }
  Cell cell_of(const Location& p) const {
    return {static_cast<int>(p.x / resolution), static_cast<int>(p.y / resolution)};
  }
  int free_count() const;
};

enum class Redundancy { kEq7ArgMin, kOverlapArgMax };

struct GenParams {
  int grid_width = 96;
  int grid_height = 96;
  int min_rooms = 6;
  int max_rooms = 10;
  int min_room = 12;  // cells per side
  int max_room = 24;
  int corridor_width = 2;
  int n_nodes = 32;            // node budget k
  double kernel_sigma = 0.8;   // meters
  int patch_window = 11;       // cells, odd
  int walk_cells = 4000;       // coverage walk length
  int node_stride = 0;         // 0 = derived so the walk yields ~1.3k candidates
  int max_retries = 64;
  Redundancy redundancy = Redundancy::kEq7ArgMin;
};

// Parametric edge-noise model standing in for a learned line-of-sight
// classifier: flip the GT bit with probability `flip`, then squash a
// jittered logit of scale `sharpness`.
struct NoiseModel {
  double sharpness = 3.0;  // alpha > 0
  double jitter = 1.5;     // s >= 0
  double flip = 0.1;       // epsilon in [0, 0.5)
};

// Rooms-and-corridors layout; deterministic in seed. Throws if invariants
// cannot be met within max_retries attempts.
OccupancyGrid generate_grid(const GenParams& params, std::uint64_t seed);

// True iff the open segment a->b crosses no blocked cell interior; grazing
// a blocked cell's boundary (exact corner crossings) is allowed. Throws if
// an endpoint lies in a blocked cell.
bool line_of_sight(const OccupancyGrid& grid, const Location& a, const Location& b);

// Gaussian-kernel-sum node selection among locations; kEq7ArgMin returns
// the argmin as printed, kOverlapArgMax the argmax. Ties to lowest index.
int most_redundant_node(const std::vector<Location>& locations, double sigma,
                        Redundancy redundancy = Redundancy::kEq7ArgMin);

// Flattened window x window occupancy patch centered at `p` (1 free,
// 0 blocked or out of bounds).
std::vector<double> node_features(const OccupancyGrid& grid, const Location& p, int window);

// Coverage-walk node proposal with kernel replacement, then line-of-sight
// GT adjacency, Euclidean distances and patch features. edge_probs is left
// zero until corrupt_edges runs.
TopoGraph extract_graph(const OccupancyGrid& grid, const GenParams& params, std::uint64_t seed);

// Fills g.edge_probs from g.gt_adjacency under the noise model.
void corrupt_edges(TopoGraph& g, const NoiseModel& model, std::uint64_t seed);

// 4-connected A* on the grid; returns the cell path including both
// endpoints, empty when unreachable.
std::vector<Cell> astar_grid(const OccupancyGrid& grid, Cell start, Cell goal);

struct MakeDatasetResult {
  int n_train = 0;
  int n_val = 0;
  int n_test = 0;
  std::string manifest_path;
};

// Generates n_graphs environments (9:2 train:test by environment seed, an
// optional validation slice carved from the train share), serializes graph
// records, grids and a manifest under out_dir.
MakeDatasetResult make_dataset(int n_graphs, const GenParams& gen, const NoiseModel& noise,
                               std::uint64_t seed, const std::string& out_dir,
                               double val_fraction = 0.1);

}  // namespace uncplan
