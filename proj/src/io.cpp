#include "uncplan/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace uncplan::io {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_dir(const std::string& path) { fs::create_directories(path); }

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp);
    out << content;
    if (!out) throw std::runtime_error("atomic_write: write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

double round9(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return std::strtod(buf, nullptr);
}

void canonicalize_graph(TopoGraph& g) {
  for (int i = 0; i < g.n_nodes; ++i) {
    g.locations[i].x = round9(g.locations[i].x);
    g.locations[i].y = round9(g.locations[i].y);
  }
  for (double& p : g.edge_probs) p = round9(p);
  for (double& f : g.features) f = round9(f);
  for (int i = 0; i < g.n_nodes; ++i) {
    for (int j = i + 1; j < g.n_nodes; ++j) {
      g.set_dist(i, j, euclidean(g.locations[i], g.locations[j]));
    }
  }
}

namespace {

json graph_to_json(const GraphRecord& rec) {
  const TopoGraph& g = *rec.graph;
  json o;
  o["env_seed"] = rec.env_seed;
  o["grid_ref"] = rec.grid_ref;
  o["n_nodes"] = g.n_nodes;
  o["feature_dim"] = g.feature_dim;
  json locs = json::array();
  for (int i = 0; i < g.n_nodes; ++i) {
    locs.push_back(json::array({g.locations[i].x, g.locations[i].y}));
  }
  o["locations"] = std::move(locs);
  json probs = json::array();
  for (int i = 0; i < g.n_nodes; ++i) {
    for (int j = i + 1; j < g.n_nodes; ++j) probs.push_back(g.prob(i, j));
  }
  o["edge_probs"] = std::move(probs);
  if (g.has_gt()) {
    json adj = json::array();
    for (int i = 0; i < g.n_nodes; ++i) {
      for (int j = i + 1; j < g.n_nodes; ++j) adj.push_back(g.adjacent(i, j) ? 1 : 0);
    }
    o["gt_adjacency"] = std::move(adj);
  }
  json feats = json::array();
  for (int i = 0; i < g.n_nodes; ++i) {
    json row = json::array();
    for (int k = 0; k < g.feature_dim; ++k) row.push_back(g.feature_row(i)[k]);
    feats.push_back(std::move(row));
  }
  o["features"] = std::move(feats);
  return o;
}

GraphRecord graph_from_json(const json& o) {
  GraphRecord rec;
  rec.env_seed = o.at("env_seed").get<std::uint64_t>();
  rec.grid_ref = o.value("grid_ref", std::string());
  const int n = o.at("n_nodes").get<int>();
  const int fd = o.at("feature_dim").get<int>();
  TopoGraph g = TopoGraph::with_capacity(n, fd);
  const json& locs = o.at("locations");
  if (static_cast<int>(locs.size()) != n) throw std::runtime_error("bad locations length");
  for (int i = 0; i < n; ++i) {
    g.locations[i] = {locs[i][0].get<double>(), locs[i][1].get<double>()};
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) g.set_dist(i, j, euclidean(g.locations[i], g.locations[j]));
  }
  const json& probs = o.at("edge_probs");
  const int n_upper = n * (n - 1) / 2;
  if (static_cast<int>(probs.size()) != n_upper) throw std::runtime_error("bad edge_probs length");
  int k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) g.set_prob(i, j, probs[k++].get<double>());
  }
  if (o.contains("gt_adjacency")) {
    g.gt_adjacency.assign(kMaxNodes * kMaxNodes, 0);
    const json& adj = o.at("gt_adjacency");
    if (static_cast<int>(adj.size()) != n_upper) throw std::runtime_error("bad gt length");
    k = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) g.set_adjacent(i, j, adj[k++].get<int>() != 0);
    }
  }
  const json& feats = o.at("features");
  if (static_cast<int>(feats.size()) != n) throw std::runtime_error("bad features length");
  for (int i = 0; i < n; ++i) {
    const json& row = feats[i];
    if (static_cast<int>(row.size()) != fd) throw std::runtime_error("bad feature row");
    for (int c = 0; c < fd; ++c) {
      g.features[static_cast<std::size_t>(i) * fd + c] = row[c].get<double>();
    }
  }
  rec.graph = std::make_shared<TopoGraph>(std::move(g));
  return rec;
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<GraphRecord>& records) {
  std::ostringstream out;
  for (const GraphRecord& rec : records) out << graph_to_json(rec).dump() << '\n';
  atomic_write(path, out.str());
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path);
  Dataset data;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    data.graphs.push_back(graph_from_json(json::parse(line)));
  }
  return data;
}

void write_grid(const std::string& path, const OccupancyGrid& grid) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", grid.resolution);
  out << "gridv1\n"
      << "width " << grid.width << "\n"
      << "height " << grid.height << "\n"
      << "resolution " << buf << "\n";
  for (int y = 0; y < grid.height; ++y) {
    out << "row";
    int x = 0;
    while (x < grid.width) {
      const std::uint8_t v = grid.cells[y * grid.width + x];
      int run = 1;
      while (x + run < grid.width && grid.cells[y * grid.width + x + run] == v) ++run;
      out << ' ' << run << 'x' << static_cast<int>(v);
      x += run;
    }
    out << '\n';
  }
  atomic_write(path, out.str());
}

OccupancyGrid read_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_grid: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "gridv1") throw std::runtime_error("read_grid: bad magic in " + path);
  OccupancyGrid g;
  std::string key;
  in >> key >> g.width >> key >> g.height >> key >> g.resolution;
  if (g.width <= 0 || g.height <= 0) throw std::runtime_error("read_grid: bad dims");
  g.cells.assign(static_cast<std::size_t>(g.width) * g.height, 0);
  std::string line;
  std::getline(in, line);  // trailing newline of the header
  for (int y = 0; y < g.height; ++y) {
    if (!std::getline(in, line)) throw std::runtime_error("read_grid: truncated");
    std::istringstream row(line);
    row >> key;
    if (key != "row") throw std::runtime_error("read_grid: bad row line");
    int x = 0;
    std::string token;
    while (row >> token) {
      const std::size_t sep = token.find('x');
      const int run = std::stoi(token.substr(0, sep));
      const int v = std::stoi(token.substr(sep + 1));
      for (int r = 0; r < run; ++r, ++x) g.cells[y * g.width + x] = static_cast<std::uint8_t>(v);
    }
    if (x != g.width) throw std::runtime_error("read_grid: row length mismatch");
  }
  return g;
}

void write_dataset_manifest(const std::string& path, const GenParams& gen,
                            const NoiseModel& noise, std::uint64_t seed,
                            const std::vector<std::vector<std::uint64_t>>& split_seeds) {
  json o;
  o["format_version"] = 1;
  o["seed"] = seed;
  o["gen"] = {{"grid_width", gen.grid_width},
              {"grid_height", gen.grid_height},
              {"min_rooms", gen.min_rooms},
              {"max_rooms", gen.max_rooms},
              {"min_room", gen.min_room},
              {"max_room", gen.max_room},
              {"corridor_width", gen.corridor_width},
              {"n_nodes", gen.n_nodes},
              {"kernel_sigma", gen.kernel_sigma},
              {"patch_window", gen.patch_window},
              {"walk_cells", gen.walk_cells},
              {"node_stride", gen.node_stride},
              {"redundancy", gen.redundancy == Redundancy::kEq7ArgMin ? "eq7_argmin"
                                                                      : "overlap_argmax"}};
  o["noise"] = {{"sharpness", noise.sharpness}, {"jitter", noise.jitter}, {"flip", noise.flip}};
  const char* names[3] = {"train", "val", "test"};
  for (std::size_t s = 0; s < split_seeds.size() && s < 3; ++s) {
    o["splits"][names[s]] = split_seeds[s];
  }
  const std::string body = o.dump(2) + "\n";
  json withhash = o;
  withhash["config_hash"] = fnv1a(body);
  atomic_write(path, withhash.dump(2) + "\n");
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream out;
  const PlannerDims& d = ckpt.params.dims;
  out << "uncplan-checkpoint v1\n"
      << "rng_seed " << ckpt.rng_seed << "\n"
      << "epoch " << ckpt.epoch << "\n"
      << "dims " << d.feature_dim << ' ' << d.msg << ' ' << d.hidden << ' ' << d.r_dim << ' '
      << d.n_actions << "\n";
  for (const auto& [key, value] : ckpt.meta) out << "meta " << key << ' ' << value << "\n";
  char buf[64];
  PlannerParams& p = const_cast<PlannerParams&>(ckpt.params);
  for (const auto& [name, tensor] : p.named()) {
    out << "param " << name << ' ' << tensor->rows << ' ' << tensor->cols << "\n";
    for (std::size_t i = 0; i < tensor->values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", tensor->values[i]);
      out << buf << (i + 1 == tensor->values.size() ? "\n" : " ");
    }
    if (tensor->values.empty()) out << "\n";
  }
  atomic_write(path, out.str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "uncplan-checkpoint" || version != "v1") {
    throw std::runtime_error("load_checkpoint: bad header in " + path);
  }
  Checkpoint ckpt;
  std::string key;
  in >> key >> ckpt.rng_seed >> key >> ckpt.epoch;
  PlannerDims dims;
  in >> key >> dims.feature_dim >> dims.msg >> dims.hidden >> dims.r_dim >> dims.n_actions;
  if (key != "dims") throw std::runtime_error("load_checkpoint: missing dims");
  Rng scratch(0);
  ckpt.params = PlannerParams::init(dims, scratch);
  auto named = ckpt.params.named();
  while (in >> key) {
    if (key == "meta") {
      std::string k, v;
      in >> k >> v;
      ckpt.meta[k] = v;
      continue;
    }
    if (key != "param") throw std::runtime_error("load_checkpoint: unexpected token " + key);
    std::string name;
    int rows = 0, cols = 0;
    in >> name >> rows >> cols;
    ad::Tensor* tensor = nullptr;
    for (const auto& [n, t] : named) {
      if (n == name) {
        tensor = t;
        break;
      }
    }
    if (!tensor || tensor->rows != rows || tensor->cols != cols) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    }
    for (double& v : tensor->values) {
      if (!(in >> v)) throw std::runtime_error("load_checkpoint: truncated " + name);
    }
  }
  return ckpt;
}

void write_curve(const std::string& path, const std::vector<CurveRow>& curve) {
  std::ostringstream out;
  out << "epoch,train_loss,val_accuracy,val_hspl,moddrop_p\n";
  char buf[160];
  for (const CurveRow& r : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                  r.val_accuracy, r.val_hspl, r.moddrop_p);
    out << buf;
  }
  atomic_write(path, out.str());
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  out << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << row[i] << (i + 1 == row.size() ? '\n' : ',');
  }
  atomic_write(path, out.str());
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace uncplan::io
