#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace uncplan {

// Fixed graph capacity. Node-indexed vectors inside the planner input are
// sized against this, so every graph is padded up to kMaxNodes.
inline constexpr int kMaxNodes = 32;

struct Location {
  double x = 0.0;
  double y = 0.0;
};

inline double euclidean(const Location& a, const Location& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

// Valued topological map: locations, pairwise metric distances, edge
// existence probabilities, per-node occupancy-patch features and (train/eval
// only) the true boolean adjacency. All matrices are kMaxNodes-padded with
// zeros; valid nodes occupy the leading n_nodes indices.
struct TopoGraph {
  int n_nodes = 0;
  int feature_dim = 0;
  std::vector<Location> locations;          // kMaxNodes
  std::vector<double> distances;            // kMaxNodes * kMaxNodes
  std::vector<double> edge_probs;           // kMaxNodes * kMaxNodes
  std::vector<double> features;             // kMaxNodes * feature_dim
  std::vector<std::uint8_t> gt_adjacency;   // kMaxNodes * kMaxNodes, empty if absent
  std::vector<std::uint8_t> valid_mask;     // kMaxNodes

  static TopoGraph with_capacity(int n_nodes, int feature_dim);

  bool has_gt() const { return !gt_adjacency.empty(); }
  bool valid(int i) const { return i >= 0 && i < kMaxNodes && valid_mask[i]; }
  double dist(int i, int j) const { return distances[i * kMaxNodes + j]; }
  double prob(int i, int j) const { return edge_probs[i * kMaxNodes + j]; }
  bool adjacent(int i, int j) const { return gt_adjacency[i * kMaxNodes + j] != 0; }
  const double* feature_row(int i) const { return features.data() + i * feature_dim; }

  void set_dist(int i, int j, double v) {
    distances[i * kMaxNodes + j] = v;
    distances[j * kMaxNodes + i] = v;
  }
  void set_prob(int i, int j, double v) {
    edge_probs[i * kMaxNodes + j] = v;
    edge_probs[j * kMaxNodes + i] = v;
  }
  void set_adjacent(int i, int j, bool v) {
    gt_adjacency[i * kMaxNodes + j] = v ? 1 : 0;
    gt_adjacency[j * kMaxNodes + i] = v ? 1 : 0;
  }
};

struct GraphViolation {
  std::string invariant;  // stable identifier, e.g. "edge_probs_asymmetric"
  int i = -1;
  int j = -1;
  std::string to_string() const;
};

// Empty result iff every TopoGraph invariant holds. Violations are data,
// not failures.
std::vector<GraphViolation> validate_graph(const TopoGraph& g);

// Which half of the edge-probability/GT-adjacency input channel is visible.
enum class GtChannelMode { kProbsOnly, kGtOnly, kBoth };

struct NodeEmbedding {
  std::vector<double> visual;    // feature_dim
  std::vector<double> edge_row;  // 2 * kMaxNodes: [E row | A* row], mod-drop masked
  double is_target = 0.0;
  std::vector<double> dist_row;  // kMaxNodes
  std::vector<double> one_hot;   // kMaxNodes

  std::vector<double> flat() const;
  static int flat_size(int feature_dim) { return feature_dim + 4 * kMaxNodes + 1; }
};

NodeEmbedding build_embedding(const TopoGraph& g, int i, int target, GtChannelMode mode);

// Instrumentation: number of embeddings built with the GT channel visible.
// Lets evaluation paths assert they never consumed ground-truth adjacency.
std::uint64_t gt_channel_reads();
void reset_gt_channel_reads();

// Valid node nearest to p in Euclidean distance; ties to the lowest index.
int nearest_node(const TopoGraph& g, const Location& p);

// Valid node whose feature row has the highest cosine similarity with the
// query; ties to the lowest index. Throws on zero-norm query or rows.
int localize_target(const TopoGraph& g, const std::vector<double>& query);

struct PlanningInstance {
  std::shared_ptr<const TopoGraph> graph;
  int source = 0;
  int target = 0;
  std::vector<int> labels;  // per-node GT next hop toward target, -1 unreachable; empty at eval
};

}  // namespace uncplan
