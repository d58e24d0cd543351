#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "test_util.hpp"
#include "uncplan/io.hpp"
#include "uncplan/planner.hpp"
#include "uncplan/worldgen.hpp"

using namespace uncplan;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TmpDir {
  std::string path;
  explicit TmpDir(const std::string& name) : path("/tmp/uncplan_test_" + name) {
    std::filesystem::remove_all(path);
    io::ensure_dir(path);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("round9 is idempotent and preserves 9 significant digits") {
  CHECK(io::round9(0.0) == 0.0);
  CHECK(io::round9(1.0 / 3.0) == io::round9(io::round9(1.0 / 3.0)));
  CHECK(io::round9(0.123456789) == doctest::Approx(0.123456789).epsilon(1e-12));
  CHECK(io::round9(-2.5) == -2.5);
  CHECK(io::round9(1e-300) != 0.0);
}

TEST_CASE("fnv1a is stable and order sensitive") {
  CHECK(io::fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(io::fnv1a("abc") == io::fnv1a("abc"));
  CHECK(io::fnv1a("abc") != io::fnv1a("acb"));
}

TEST_CASE("atomic_write replaces content without partial files") {
  TmpDir dir("atomic");
  const std::string path = dir.path + "/f.txt";
  io::atomic_write(path, "one");
  CHECK(slurp(path) == "one");
  io::atomic_write(path, "two");
  CHECK(slurp(path) == "two");
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path)) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);  // no leftover temp file
}

TEST_CASE("grid RLE round trip is byte-identical") {
  GenParams p;
  p.grid_width = 48;
  p.grid_height = 40;
  p.n_nodes = 8;
  p.walk_cells = 1500;
  const OccupancyGrid g = generate_grid(p, 13);

  TmpDir dir("grid");
  const std::string path = dir.path + "/g.grid";
  io::write_grid(path, g);
  const OccupancyGrid r = io::read_grid(path);
  CHECK(r.width == g.width);
  CHECK(r.height == g.height);
  CHECK(r.resolution == g.resolution);
  CHECK(r.cells == g.cells);

  const std::string first = slurp(path);
  io::write_grid(path, r);
  CHECK(slurp(path) == first);
}

TEST_CASE("dataset JSONL round trip: canonical save -> load -> save is byte-identical") {
  Rng rng(17);
  std::vector<GraphRecord> records;
  for (int i = 0; i < 3; ++i) {
    TopoGraph g = testutil::random_graph(5 + i, rng, 0.5, 6);
    io::canonicalize_graph(g);
    GraphRecord rec;
    rec.env_seed = mix_seed(17, i);
    rec.grid_ref = "grids/env_0000" + std::to_string(i) + ".grid";
    rec.graph = std::make_shared<TopoGraph>(std::move(g));
    records.push_back(std::move(rec));
  }

  TmpDir dir("jsonl");
  const std::string path = dir.path + "/d.jsonl";
  io::write_dataset(path, records);
  const std::string first = slurp(path);

  const Dataset loaded = io::read_dataset(path);
  REQUIRE(loaded.graphs.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const TopoGraph& a = *records[i].graph;
    const TopoGraph& b = *loaded.graphs[i].graph;
    CHECK(loaded.graphs[i].env_seed == records[i].env_seed);
    CHECK(loaded.graphs[i].grid_ref == records[i].grid_ref);
    CHECK(b.n_nodes == a.n_nodes);
    CHECK(b.edge_probs == a.edge_probs);
    CHECK(b.gt_adjacency == a.gt_adjacency);
    CHECK(b.features == a.features);
    CHECK(b.distances == a.distances);  // recomputed from rounded locations
    CHECK(validate_graph(b).empty());
  }

  io::write_dataset(path, loaded.graphs);
  CHECK(slurp(path) == first);
}

TEST_CASE("dataset without gt serializes and loads without the channel") {
  Rng rng(18);
  TopoGraph g = testutil::random_graph(4, rng, 0.5, 3);
  g.gt_adjacency.clear();
  io::canonicalize_graph(g);
  GraphRecord rec;
  rec.graph = std::make_shared<TopoGraph>(std::move(g));

  TmpDir dir("nogt");
  const std::string path = dir.path + "/d.jsonl";
  io::write_dataset(path, {rec});
  const Dataset loaded = io::read_dataset(path);
  CHECK(!loaded.graphs[0].graph->has_gt());
}

TEST_CASE("canonicalize_graph is idempotent and keeps graphs valid") {
  Rng rng(19);
  TopoGraph g = testutil::random_graph(7, rng, 0.5, 4);
  io::canonicalize_graph(g);
  CHECK(validate_graph(g).empty());
  TopoGraph again = g;
  io::canonicalize_graph(again);
  CHECK(again.distances == g.distances);
  CHECK(again.edge_probs == g.edge_probs);
  CHECK(again.features == g.features);
}

TEST_CASE("checkpoint round trip restores parameters bit-exactly") {
  PlannerDims dims;
  dims.feature_dim = 9;
  dims.msg = 5;
  dims.hidden = 7;
  dims.r_dim = 4;
  Rng init(23);
  io::Checkpoint ckpt;
  ckpt.params = PlannerParams::init(dims, init);
  ckpt.rng_seed = 99;
  ckpt.epoch = 42;
  ckpt.meta["aggregator"] = "gru";
  ckpt.meta["val_accuracy"] = "0.875";

  TmpDir dir("ckpt");
  const std::string path = dir.path + "/c.txt";
  io::save_checkpoint(path, ckpt);
  io::Checkpoint r = io::load_checkpoint(path);

  CHECK(r.rng_seed == 99);
  CHECK(r.epoch == 42);
  CHECK(r.meta.at("aggregator") == "gru");
  CHECK(r.meta.at("val_accuracy") == "0.875");
  CHECK(r.params.dims.feature_dim == 9);
  CHECK(r.params.dims.msg == 5);

  auto a = ckpt.params.named();
  auto b = r.params.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second->values == b[i].second->values);  // %.17g round-trips doubles
  }

  // save -> load -> save is byte-identical
  const std::string first = slurp(path);
  io::save_checkpoint(path, r);
  CHECK(slurp(path) == first);
}

TEST_CASE("restored checkpoint replays the forward pass") {
  Rng rng(27);
  TopoGraph g = testutil::random_graph(6, rng, 0.5, 4);
  PlannerDims dims;
  dims.feature_dim = 4;
  dims.msg = dims.hidden = dims.r_dim = 5;
  Rng init(28);
  io::Checkpoint ckpt;
  ckpt.params = PlannerParams::init(dims, init);

  TmpDir dir("replay");
  io::save_checkpoint(dir.path + "/c.txt", ckpt);
  io::Checkpoint r = io::load_checkpoint(dir.path + "/c.txt");

  PlanningInstance inst;
  inst.graph = std::make_shared<TopoGraph>(g);
  inst.source = inst.target = 2;
  ForwardOptions opts;
  opts.k_steps = 2;
  const ad::Tensor before = planner_actions(inst, ckpt.params, opts);
  const ad::Tensor after = planner_actions(inst, r.params, opts);
  // parameters round-trip bitwise, but heap alignment can shift how the
  // vectorized exp splits into packet and scalar lanes between the two
  // calls, so compare within a few ulps rather than bitwise
  REQUIRE(after.values.size() == before.values.size());
  for (std::size_t i = 0; i < before.values.size(); ++i) {
    CHECK(after.values[i] == doctest::Approx(before.values[i]).epsilon(1e-14));
  }
}

TEST_CASE("curve and csv writers emit one row per entry") {
  TmpDir dir("csv");
  std::vector<CurveRow> curve(2);
  curve[0] = {0, 3.25, 0.125, 0.5, 0.5};
  curve[1] = {1, 2.5, 0.25, 0.625, 0.502};
  io::write_curve(dir.path + "/curve.csv", curve);
  const std::string text = slurp(dir.path + "/curve.csv");
  CHECK(text.find("epoch") != std::string::npos);
  CHECK(text.find("\n0,") != std::string::npos);
  CHECK(text.find("\n1,") != std::string::npos);

  io::write_csv(dir.path + "/t.csv", "a,b", {{"1", "x"}, {"2", "y"}});
  CHECK(slurp(dir.path + "/t.csv") == "a,b\n1,x\n2,y\n");
}

TEST_CASE("dataset manifest records seeds and a config hash") {
  TmpDir dir("manifest");
  GenParams gen;
  NoiseModel noise;
  io::write_dataset_manifest(dir.path + "/manifest.json", gen, noise, 7,
                             {{1, 2, 3}, {4}, {5, 6}});
  const std::string text = slurp(dir.path + "/manifest.json");
  CHECK(text.find("config_hash") != std::string::npos);
  CHECK(text.find("\"seed\": 7") != std::string::npos);

  // identical inputs -> identical bytes
  io::write_dataset_manifest(dir.path + "/m2.json", gen, noise, 7, {{1, 2, 3}, {4}, {5, 6}});
  CHECK(slurp(dir.path + "/m2.json") == text);
}
