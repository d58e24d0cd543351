#include "uncplan/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <tuple>

#include "uncplan/io.hpp"
#include "uncplan/rng.hpp"
#include "uncplan/symbolic.hpp"

namespace uncplan {

int OccupancyGrid::free_count() const {
  int n = 0;
  for (auto c : cells) n += c != 0 ? 1 : 0;
  return n;
}

namespace {

void carve_rect(OccupancyGrid& g, int x0, int y0, int w, int h) {
  // border stays blocked
  const int x1 = std::min(g.width - 1, x0 + w);
  const int y1 = std::min(g.height - 1, y0 + h);
  for (int y = std::max(1, y0); y < y1; ++y) {
    for (int x = std::max(1, x0); x < x1; ++x) g.set_free({x, y}, true);
  }
}

// Keeps the largest 4-connected free component, blocking the rest.
void keep_largest_component(OccupancyGrid& g) {
  std::vector<int> comp(g.cells.size(), -1);
  int n_comp = 0;
  std::vector<int> sizes;
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      if (!g.free({x, y}) || comp[y * g.width + x] >= 0) continue;
      int size = 0;
      std::vector<Cell> stack = {{x, y}};
      comp[y * g.width + x] = n_comp;
      while (!stack.empty()) {
        const Cell c = stack.back();
        stack.pop_back();
        ++size;
        const Cell nbrs[4] = {{c.x + 1, c.y}, {c.x - 1, c.y}, {c.x, c.y + 1}, {c.x, c.y - 1}};
        for (const Cell& nb : nbrs) {
          if (g.free(nb) && comp[nb.y * g.width + nb.x] < 0) {
            comp[nb.y * g.width + nb.x] = n_comp;
            stack.push_back(nb);
          }
        }
      }
      sizes.push_back(size);
      ++n_comp;
    }
  }
  if (n_comp <= 1) return;
  const int keep = static_cast<int>(
      std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    if (g.cells[i] != 0 && comp[i] != keep) g.cells[i] = 0;
  }
}

}  // namespace

OccupancyGrid generate_grid(const GenParams& params, std::uint64_t seed) {
  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    OccupancyGrid g;
    g.width = params.grid_width;
    g.height = params.grid_height;
    g.cells.assign(static_cast<std::size_t>(g.width) * g.height, 0);

    const int n_rooms = rng.int_range(params.min_rooms, params.max_rooms);
    std::vector<Cell> centers;
    for (int r = 0; r < n_rooms; ++r) {
      const int w = rng.int_range(params.min_room, params.max_room);
      const int h = rng.int_range(params.min_room, params.max_room);
      const int x = rng.int_range(1, std::max(1, g.width - 1 - w));
      const int y = rng.int_range(1, std::max(1, g.height - 1 - h));
      carve_rect(g, x, y, w, h);
      centers.push_back({x + w / 2, y + h / 2});
    }
    // L-shaped corridors between consecutive room centers
    for (std::size_t r = 1; r < centers.size(); ++r) {
      const Cell a = centers[r - 1];
      const Cell b = centers[r];
      const int cw = params.corridor_width;
      if (rng.bernoulli(0.5)) {
        carve_rect(g, std::min(a.x, b.x), a.y, std::abs(a.x - b.x) + cw, cw);
        carve_rect(g, b.x, std::min(a.y, b.y), cw, std::abs(a.y - b.y) + cw);
      } else {
        carve_rect(g, a.x, std::min(a.y, b.y), cw, std::abs(a.y - b.y) + cw);
        carve_rect(g, std::min(a.x, b.x), b.y, std::abs(a.x - b.x) + cw, cw);
      }
    }

    keep_largest_component(g);
    const double free_frac =
        static_cast<double>(g.free_count()) / (static_cast<double>(g.width) * g.height);
    if (free_frac >= 0.30) return g;
  }
  throw std::runtime_error("generate_grid: invariants not met within retry budget");
}

bool line_of_sight(const OccupancyGrid& grid, const Location& a, const Location& b) {
  Cell cur = grid.cell_of(a);
  const Cell end = grid.cell_of(b);
  if (!grid.free(cur) || !grid.free(end)) {
    throw std::invalid_argument("line_of_sight: endpoint in blocked cell");
  }
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const int step_x = dx > 0 ? 1 : -1;
  const int step_y = dy > 0 ? 1 : -1;
  const double res = grid.resolution;
  constexpr double kEps = 1e-12;

  // parametric distance to the next vertical/horizontal cell boundary
  auto t_max_x = [&](const Cell& c) {
    if (dx == 0.0) return std::numeric_limits<double>::infinity();
    const double edge = (c.x + (step_x > 0 ? 1 : 0)) * res;
    return (edge - a.x) / dx;
  };
  auto t_max_y = [&](const Cell& c) {
    if (dy == 0.0) return std::numeric_limits<double>::infinity();
    const double edge = (c.y + (step_y > 0 ? 1 : 0)) * res;
    return (edge - a.y) / dy;
  };

  int guard = 4 * (grid.width + grid.height);
  while (!(cur == end) && guard-- > 0) {
    const double tx = t_max_x(cur);
    const double ty = t_max_y(cur);
    if (tx < ty - kEps) {
      cur.x += step_x;
    } else if (ty < tx - kEps) {
      cur.y += step_y;
    } else {
      // exact corner: the side cells are only grazed at a point, so the
      // segment skips straight to the diagonal cell
      cur.x += step_x;
      cur.y += step_y;
    }
    if (!grid.free(cur)) return false;
  }
  return true;
}

int most_redundant_node(const std::vector<Location>& locations, double sigma,
                        Redundancy redundancy) {
  if (locations.size() < 2) {
    throw std::invalid_argument("most_redundant_node: need at least 2 locations");
  }
  const double denom = 2.0 * sigma * sigma;
  int best = 0;
  double best_sum = 0.0;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < locations.size(); ++j) {
      const double dx = locations[i].x - locations[j].x;
      const double dy = locations[i].y - locations[j].y;
      sum += std::exp(-(dx * dx + dy * dy) / denom);
    }
    const bool better = redundancy == Redundancy::kEq7ArgMin ? sum < best_sum : sum > best_sum;
    if (i == 0 || better) {
      best = static_cast<int>(i);
      best_sum = sum;
    }
  }
  return best;
}

std::vector<double> node_features(const OccupancyGrid& grid, const Location& p, int window) {
  const Cell c = grid.cell_of(p);
  if (!grid.free(c)) throw std::invalid_argument("node_features: blocked location");
  std::vector<double> patch(static_cast<std::size_t>(window) * window, 0.0);
  const int half = window / 2;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      if (grid.free({c.x + dx, c.y + dy})) {
        patch[(dy + half) * window + (dx + half)] = 1.0;
      }
    }
  }
  return patch;
}

std::vector<Cell> astar_grid(const OccupancyGrid& grid, Cell start, Cell goal) {
  if (!grid.free(start) || !grid.free(goal)) return {};
  const int n = grid.width * grid.height;
  auto id = [&](const Cell& c) { return c.y * grid.width + c.x; };
  std::vector<int> g_cost(n, -1);
  std::vector<int> parent(n, -1);
  // (f, h, cell id): deterministic ordering
  using QE = std::tuple<int, int, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<QE>> open;
  auto h = [&](const Cell& c) { return std::abs(c.x - goal.x) + std::abs(c.y - goal.y); };

  g_cost[id(start)] = 0;
  open.emplace(h(start), h(start), id(start));
  while (!open.empty()) {
    const auto [f, hh, ci] = open.top();
    open.pop();
    const Cell c{ci % grid.width, ci / grid.width};
    if (c == goal) break;
    if (f - hh > g_cost[ci]) continue;  // stale entry
    const Cell nbrs[4] = {{c.x + 1, c.y}, {c.x - 1, c.y}, {c.x, c.y + 1}, {c.x, c.y - 1}};
    for (const Cell& nb : nbrs) {
      if (!grid.free(nb)) continue;
      const int ni = id(nb);
      const int ng = g_cost[ci] + 1;
      if (g_cost[ni] < 0 || ng < g_cost[ni]) {
        g_cost[ni] = ng;
        parent[ni] = ci;
        open.emplace(ng + h(nb), h(nb), ni);
      }
    }
  }
  if (g_cost[id(goal)] < 0) return {};
  std::vector<Cell> path;
  for (int ci = id(goal); ci >= 0; ci = parent[ci]) {
    path.push_back({ci % grid.width, ci / grid.width});
  }
  std::reverse(path.begin(), path.end());
  return path;
}

TopoGraph extract_graph(const OccupancyGrid& grid, const GenParams& params, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6772));
  std::vector<Cell> free_cells;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      if (grid.free({x, y})) free_cells.push_back({x, y});
    }
  }
  if (free_cells.empty()) throw std::runtime_error("extract_graph: no free space");

  const int stride = params.node_stride > 0
                         ? params.node_stride
                         : std::max(1, params.walk_cells / (params.n_nodes + 8));

  // fill to budget, then kernel replacement on the union
  std::vector<Location> nodes;
  const double min_sep = 2.0 * grid.resolution;
  const auto offer = [&](const Location& cand) {
    for (const Location& l : nodes) {
      if (euclidean(l, cand) < min_sep) return;
    }
    if (static_cast<int>(nodes.size()) < params.n_nodes) {
      nodes.push_back(cand);
      return;
    }
    std::vector<Location> pool = nodes;
    pool.push_back(cand);
    const int r = most_redundant_node(pool, params.kernel_sigma, params.redundancy);
    if (r != static_cast<int>(nodes.size())) nodes[r] = cand;
  };

  // scripted coverage walk: random waypoints joined by grid A*. The walk
  // extends past its nominal length until the node budget is met, so tight
  // maps still yield full graphs.
  Cell cur = free_cells[rng.integer(free_cells.size())];
  long walked = 0;
  const long cap = 50L * params.walk_cells;
  while (walked < params.walk_cells || static_cast<int>(nodes.size()) < params.n_nodes) {
    if (walked >= cap) throw std::runtime_error("extract_graph: walk produced too few nodes");
    const Cell wp = free_cells[rng.integer(free_cells.size())];
    const std::vector<Cell> path = astar_grid(grid, cur, wp);
    for (std::size_t i = 1; i < path.size(); ++i) {
      ++walked;
      if (walked % stride == 0) offer(grid.center(path[i]));
      if (walked >= params.walk_cells && static_cast<int>(nodes.size()) >= params.n_nodes) break;
    }
    cur = wp;
  }

  const int k = params.n_nodes;
  TopoGraph g = TopoGraph::with_capacity(k, params.patch_window * params.patch_window);
  g.gt_adjacency.assign(kMaxNodes * kMaxNodes, 0);
  for (int i = 0; i < k; ++i) {
    g.locations[i] = nodes[i];
    const std::vector<double> patch = node_features(grid, nodes[i], params.patch_window);
    std::copy(patch.begin(), patch.end(),
              g.features.begin() + static_cast<std::size_t>(i) * g.feature_dim);
  }
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      g.set_dist(i, j, euclidean(nodes[i], nodes[j]));
      g.set_adjacent(i, j, line_of_sight(grid, nodes[i], nodes[j]));
    }
  }
  return g;
}

void corrupt_edges(TopoGraph& g, const NoiseModel& model, std::uint64_t seed) {
  if (!g.has_gt()) throw std::invalid_argument("corrupt_edges: gt_adjacency absent");
  if (model.sharpness <= 0.0 || model.jitter < 0.0 || model.flip < 0.0 || model.flip >= 0.5) {
    throw std::invalid_argument("corrupt_edges: invalid noise model");
  }
  Rng rng(mix_seed(seed, 0xEDCE));
  for (int i = 0; i < kMaxNodes; ++i) {
    for (int j = i + 1; j < kMaxNodes; ++j) {
      if (!g.valid_mask[i] || !g.valid_mask[j]) continue;
      bool y = g.adjacent(i, j);
      if (rng.bernoulli(model.flip)) y = !y;
      const double logit = model.sharpness * (y ? 1.0 : -1.0) + model.jitter * rng.normal();
      g.set_prob(i, j, 1.0 / (1.0 + std::exp(-logit)));
    }
  }
}

MakeDatasetResult make_dataset(int n_graphs, const GenParams& gen, const NoiseModel& noise,
                               std::uint64_t seed, const std::string& out_dir,
                               double val_fraction) {
  if (n_graphs < 1) throw std::invalid_argument("make_dataset: n_graphs must be >= 1");
  const int n_test = 2 * n_graphs / 11;  // preserves the 9:2 environment split
  const int n_train_total = n_graphs - n_test;
  const int n_val = static_cast<int>(n_train_total * val_fraction);
  const int n_train = n_train_total - n_val;

  io::ensure_dir(out_dir);
  io::ensure_dir(out_dir + "/grids");

  std::vector<std::uint64_t> split_seeds[3];
  std::vector<GraphRecord> split_records[3];
  for (int i = 0; i < n_graphs; ++i) {
    const std::uint64_t env_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    const OccupancyGrid grid = generate_grid(gen, env_seed);
    auto graph = std::make_shared<TopoGraph>(extract_graph(grid, gen, mix_seed(env_seed, 7)));
    corrupt_edges(*graph, noise, mix_seed(env_seed, 13));
    io::canonicalize_graph(*graph);

    char name[64];
    std::snprintf(name, sizeof(name), "grids/env_%05d.grid", i);
    io::write_grid(out_dir + "/" + name, grid);

    const int split = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    split_seeds[split].push_back(env_seed);
    split_records[split].push_back({env_seed, std::move(graph), name});
  }

  const char* names[3] = {"train.jsonl", "val.jsonl", "test.jsonl"};
  for (int s = 0; s < 3; ++s) {
    io::write_dataset(out_dir + "/" + names[s], split_records[s]);
  }

  MakeDatasetResult res;
  res.n_train = n_train;
  res.n_val = n_val;
  res.n_test = n_test;
  res.manifest_path = out_dir + "/manifest.json";
  io::write_dataset_manifest(res.manifest_path, gen, noise, seed,
                             {split_seeds[0], split_seeds[1], split_seeds[2]});
  return res;
}

}  // namespace uncplan
