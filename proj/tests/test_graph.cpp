#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "test_util.hpp"
#include "uncplan/graph.hpp"
#include "uncplan/rng.hpp"

using namespace uncplan;

TEST_CASE("with_capacity pads to kMaxNodes and validates clean") {
  Rng rng(3);
  TopoGraph g = testutil::random_graph(7, rng);
  CHECK(g.n_nodes == 7);
  CHECK(static_cast<int>(g.locations.size()) == kMaxNodes);
  CHECK(validate_graph(g).empty());
}

TEST_CASE("validate_graph flags asymmetry and padding leaks") {
  Rng rng(5);
  TopoGraph g = testutil::random_graph(6, rng);

  SUBCASE("asymmetric probs") {
    g.edge_probs[0 * kMaxNodes + 1] = 0.9;
    g.edge_probs[1 * kMaxNodes + 0] = 0.1;
    bool found = false;
    for (const auto& v : validate_graph(g)) found |= v.invariant == "edge_probs_asymmetric";
    CHECK(found);
  }
  SUBCASE("nonzero padding row") {
    g.set_prob(2, 20, 0.5);  // node 20 is invalid
    bool found = false;
    for (const auto& v : validate_graph(g)) found |= v.invariant == "edge_probs_nonzero_padding";
    CHECK(found);
  }
  SUBCASE("prob out of range") {
    g.set_prob(0, 1, 1.5);
    bool found = false;
    for (const auto& v : validate_graph(g)) found |= v.invariant == "edge_probs_out_of_range";
    CHECK(found);
  }
  SUBCASE("mask count mismatch") {
    g.valid_mask[6] = 1;
    bool found = false;
    for (const auto& v : validate_graph(g)) found |= v.invariant == "valid_mask_count_mismatch";
    CHECK(found);
  }
}

TEST_CASE("embedding layout and channel masking") {
  Rng rng(11);
  TopoGraph g = testutil::random_graph(5, rng, 0.6, 3);
  const int target = 2;

  NodeEmbedding e = build_embedding(g, 1, target, GtChannelMode::kProbsOnly);
  CHECK(static_cast<int>(e.visual.size()) == 3);
  CHECK(static_cast<int>(e.edge_row.size()) == 2 * kMaxNodes);
  CHECK(static_cast<int>(e.flat().size()) == NodeEmbedding::flat_size(3));
  CHECK(e.is_target == 0.0);
  CHECK(build_embedding(g, 2, target, GtChannelMode::kProbsOnly).is_target == 1.0);
  // probs half populated, gt half zeroed
  CHECK(e.edge_row[0] == g.prob(1, 0));
  for (int j = 0; j < kMaxNodes; ++j) CHECK(e.edge_row[kMaxNodes + j] == 0.0);
  CHECK(e.one_hot[1] == 1.0);
  CHECK(e.dist_row[3] == g.dist(1, 3));

  NodeEmbedding eg = build_embedding(g, 1, target, GtChannelMode::kGtOnly);
  for (int j = 0; j < kMaxNodes; ++j) {
    CHECK(eg.edge_row[j] == 0.0);
    CHECK(eg.edge_row[kMaxNodes + j] == (g.adjacent(1, j) ? 1.0 : 0.0));
  }

  NodeEmbedding eb = build_embedding(g, 1, target, GtChannelMode::kBoth);
  CHECK(eb.edge_row[0] == g.prob(1, 0));
  CHECK(eb.edge_row[kMaxNodes + 0] == (g.adjacent(1, 0) ? 1.0 : 0.0));
}

TEST_CASE("gt channel read counter") {
  Rng rng(12);
  TopoGraph g = testutil::random_graph(4, rng);
  reset_gt_channel_reads();
  (void)build_embedding(g, 0, 1, GtChannelMode::kProbsOnly);
  CHECK(gt_channel_reads() == 0);
  (void)build_embedding(g, 0, 1, GtChannelMode::kGtOnly);
  (void)build_embedding(g, 0, 1, GtChannelMode::kBoth);
  CHECK(gt_channel_reads() == 2);
  reset_gt_channel_reads();
  CHECK(gt_channel_reads() == 0);
}

TEST_CASE("embedding rejects invalid node and missing gt") {
  Rng rng(13);
  TopoGraph g = testutil::random_graph(4, rng);
  CHECK_THROWS_AS((void)build_embedding(g, 4, 0, GtChannelMode::kProbsOnly),
                  std::invalid_argument);
  g.gt_adjacency.clear();
  CHECK_THROWS_AS((void)build_embedding(g, 0, 1, GtChannelMode::kGtOnly), std::invalid_argument);
  CHECK_NOTHROW((void)build_embedding(g, 0, 1, GtChannelMode::kProbsOnly));
}

TEST_CASE("nearest_node matches exhaustive scan on a 32-node graph") {
  // DERIVED: brute-force scan over all nodes
  Rng rng(21);
  TopoGraph g = testutil::random_graph(kMaxNodes, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Location p{rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
    int best = -1;
    double best_d = 1e300;
    for (int i = 0; i < kMaxNodes; ++i) {
      if (!g.valid_mask[i]) continue;
      const double d = euclidean(g.locations[i], p);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    CHECK(nearest_node(g, p) == best);
  }
}

TEST_CASE("nearest_node tie goes to lowest index") {
  TopoGraph g = testutil::graph_from({{0.0, 1.0}, {2.0, 1.0}, {0.0, 3.0}}, {});
  CHECK(nearest_node(g, {1.0, 1.0}) == 0);  // nodes 0 and 1 both at distance 1
}

TEST_CASE("localize_target recovers a perturbed feature row") {
  // DERIVED: verify by exhaustive cosine scan
  Rng rng(31);
  TopoGraph g = testutil::random_graph(12, rng, 0.5, 9);
  double norm = 0.0;
  for (int k = 0; k < 9; ++k) {
    const double v = g.feature_row(6)[k];
    norm += v * v;
  }
  norm = std::sqrt(norm);
  std::vector<double> q(g.feature_row(6), g.feature_row(6) + 9);
  for (double& v : q) v += 0.01 * norm * rng.normal();
  CHECK(localize_target(g, q) == 6);

  // exhaustive cosine scan agrees for arbitrary queries
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> r(9);
    for (double& v : r) v = rng.uniform(0.05, 1.0);
    double qn = 0.0;
    for (double v : r) qn += v * v;
    qn = std::sqrt(qn);
    int best = -1;
    double best_sim = -2.0;
    for (int i = 0; i < 12; ++i) {
      double rn = 0.0, dot = 0.0;
      for (int k = 0; k < 9; ++k) {
        rn += g.feature_row(i)[k] * g.feature_row(i)[k];
        dot += g.feature_row(i)[k] * r[k];
      }
      const double sim = dot / (std::sqrt(rn) * qn);
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    CHECK(localize_target(g, r) == best);
  }
}

TEST_CASE("localize_target rejects zero-norm inputs") {
  Rng rng(33);
  TopoGraph g = testutil::random_graph(4, rng, 0.5, 3);
  CHECK_THROWS_AS((void)localize_target(g, std::vector<double>(3, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS((void)localize_target(g, std::vector<double>(5, 1.0)), std::invalid_argument);
}
