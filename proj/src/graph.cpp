#include "uncplan/graph.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace uncplan {

namespace {
constexpr double kTriangleSlack = 1e-9;
std::atomic<std::uint64_t> g_gt_channel_reads{0};
}  // namespace

TopoGraph TopoGraph::with_capacity(int n_nodes, int feature_dim) {
  TopoGraph g;
  g.n_nodes = n_nodes;
  g.feature_dim = feature_dim;
  g.locations.assign(kMaxNodes, Location{});
  g.distances.assign(kMaxNodes * kMaxNodes, 0.0);
  g.edge_probs.assign(kMaxNodes * kMaxNodes, 0.0);
  g.features.assign(static_cast<std::size_t>(kMaxNodes) * feature_dim, 0.0);
  g.valid_mask.assign(kMaxNodes, 0);
  for (int i = 0; i < n_nodes; ++i) g.valid_mask[i] = 1;
  return g;
}

std::string GraphViolation::to_string() const {
  std::ostringstream os;
  os << invariant;
  if (i >= 0) {
    os << "(" << i;
    if (j >= 0) os << "," << j;
    os << ")";
  }
  return os.str();
}

std::vector<GraphViolation> validate_graph(const TopoGraph& g) {
  std::vector<GraphViolation> out;
  auto flag = [&](const char* name, int i = -1, int j = -1) {
    out.push_back(GraphViolation{name, i, j});
  };

  if (g.n_nodes < 1 || g.n_nodes > kMaxNodes) flag("n_nodes_out_of_range");
  if (static_cast<int>(g.valid_mask.size()) != kMaxNodes ||
      static_cast<int>(g.locations.size()) != kMaxNodes ||
      static_cast<int>(g.distances.size()) != kMaxNodes * kMaxNodes ||
      static_cast<int>(g.edge_probs.size()) != kMaxNodes * kMaxNodes) {
    flag("storage_shape_mismatch");
    return out;  // index checks below would be unsafe
  }

  int n_valid = 0;
  for (int i = 0; i < kMaxNodes; ++i) n_valid += g.valid_mask[i] ? 1 : 0;
  if (n_valid != g.n_nodes) flag("valid_mask_count_mismatch");

  const bool gt = g.has_gt();
  for (int i = 0; i < kMaxNodes; ++i) {
    const bool vi = g.valid_mask[i] != 0;
    if (g.prob(i, i) != 0.0) flag("edge_probs_nonzero_diagonal", i);
    if (g.dist(i, i) != 0.0) flag("distances_nonzero_diagonal", i);
    if (gt && g.adjacent(i, i)) flag("gt_adjacency_nonzero_diagonal", i);
    for (int j = i + 1; j < kMaxNodes; ++j) {
      const bool vj = g.valid_mask[j] != 0;
      if (g.prob(i, j) != g.prob(j, i)) flag("edge_probs_asymmetric", i, j);
      if (g.dist(i, j) != g.dist(j, i)) flag("distances_asymmetric", i, j);
      if (gt && g.adjacent(i, j) != g.adjacent(j, i)) flag("gt_adjacency_asymmetric", i, j);
      if (g.prob(i, j) < 0.0 || g.prob(i, j) > 1.0) flag("edge_probs_out_of_range", i, j);
      if (g.dist(i, j) < 0.0) flag("distances_negative", i, j);
      if (!vi || !vj) {
        if (g.prob(i, j) != 0.0) flag("edge_probs_nonzero_padding", i, j);
        if (g.dist(i, j) != 0.0) flag("distances_nonzero_padding", i, j);
        if (gt && g.adjacent(i, j)) flag("gt_adjacency_nonzero_padding", i, j);
      }
    }
    if (!vi) {
      for (int k = 0; k < g.feature_dim; ++k) {
        if (g.feature_row(i)[k] != 0.0) {
          flag("features_nonzero_padding", i);
          break;
        }
      }
      if (g.locations[i].x != 0.0 || g.locations[i].y != 0.0) flag("locations_nonzero_padding", i);
    }
  }

  // triangle inequality over valid triples (Euclidean construction)
  for (int i = 0; i < g.n_nodes; ++i) {
    if (!g.valid_mask[i]) continue;
    for (int j = 0; j < g.n_nodes; ++j) {
      if (j == i || !g.valid_mask[j]) continue;
      for (int k = 0; k < g.n_nodes; ++k) {
        if (k == i || k == j || !g.valid_mask[k]) continue;
        if (g.dist(i, j) > g.dist(i, k) + g.dist(k, j) + kTriangleSlack) {
          flag("distances_triangle_violation", i, j);
        }
      }
    }
  }
  return out;
}

std::vector<double> NodeEmbedding::flat() const {
  std::vector<double> out;
  out.reserve(flat_size(static_cast<int>(visual.size())));
  out.insert(out.end(), visual.begin(), visual.end());
  out.insert(out.end(), edge_row.begin(), edge_row.end());
  out.push_back(is_target);
  out.insert(out.end(), dist_row.begin(), dist_row.end());
  out.insert(out.end(), one_hot.begin(), one_hot.end());
  return out;
}

NodeEmbedding build_embedding(const TopoGraph& g, int i, int target, GtChannelMode mode) {
  if (!g.valid(i) || !g.valid(target)) {
    throw std::invalid_argument("build_embedding: node out of range");
  }
  if (mode != GtChannelMode::kProbsOnly && !g.has_gt()) {
    throw std::invalid_argument("build_embedding: gt channel requested but gt_adjacency absent");
  }
  if (mode != GtChannelMode::kProbsOnly) {
    g_gt_channel_reads.fetch_add(1, std::memory_order_relaxed);
  }

  NodeEmbedding e;
  e.visual.assign(g.feature_row(i), g.feature_row(i) + g.feature_dim);
  e.edge_row.assign(2 * kMaxNodes, 0.0);
  if (mode != GtChannelMode::kGtOnly) {
    for (int j = 0; j < kMaxNodes; ++j) e.edge_row[j] = g.prob(i, j);
  }
  if (mode != GtChannelMode::kProbsOnly) {
    for (int j = 0; j < kMaxNodes; ++j) e.edge_row[kMaxNodes + j] = g.adjacent(i, j) ? 1.0 : 0.0;
  }
  e.is_target = (i == target) ? 1.0 : 0.0;
  e.dist_row.assign(kMaxNodes, 0.0);
  for (int j = 0; j < kMaxNodes; ++j) e.dist_row[j] = g.dist(i, j);
  e.one_hot.assign(kMaxNodes, 0.0);
  e.one_hot[i] = 1.0;
  return e;
}

std::uint64_t gt_channel_reads() { return g_gt_channel_reads.load(std::memory_order_relaxed); }
void reset_gt_channel_reads() { g_gt_channel_reads.store(0, std::memory_order_relaxed); }

int nearest_node(const TopoGraph& g, const Location& p) {
  if (g.n_nodes < 1) throw std::invalid_argument("nearest_node: empty graph");
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i]) continue;
    const double d = euclidean(g.locations[i], p);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

int localize_target(const TopoGraph& g, const std::vector<double>& query) {
  if (static_cast<int>(query.size()) != g.feature_dim) {
    throw std::invalid_argument("localize_target: query dimension mismatch");
  }
  double qn = 0.0;
  for (double v : query) qn += v * v;
  qn = std::sqrt(qn);
  if (qn == 0.0) throw std::invalid_argument("localize_target: zero-norm query");

  int best = -1;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < kMaxNodes; ++i) {
    if (!g.valid_mask[i]) continue;
    const double* row = g.feature_row(i);
    double rn = 0.0, dot = 0.0;
    for (int k = 0; k < g.feature_dim; ++k) {
      rn += row[k] * row[k];
      dot += row[k] * query[k];
    }
    rn = std::sqrt(rn);
    if (rn == 0.0) throw std::invalid_argument("localize_target: zero-norm feature row");
    const double sim = dot / (rn * qn);
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return best;
}

}  // namespace uncplan
