#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uncplan/dataset.hpp"
#include "uncplan/planner.hpp"
#include "uncplan/worldgen.hpp"

namespace uncplan::io {

void ensure_dir(const std::string& path);

// Writes content to a temp file in the same directory, then renames.
void atomic_write(const std::string& path, const std::string& content);

// Rounds x to 9 significant digits (the on-disk float precision for graph
// records), so save -> load -> save is byte-identical.
double round9(double x);

// Rounds locations/probs/features to on-disk precision and recomputes
// distances from the rounded locations. make_dataset applies this before
// writing so the in-memory dataset equals its serialization.
void canonicalize_graph(TopoGraph& g);

// One JSON object per line: env_seed, grid_ref, n_nodes, feature_dim,
// locations, edge_probs (upper triangle), gt_adjacency (upper triangle,
// omitted when absent), features. Distances are recomputed on load.
void write_dataset(const std::string& path, const std::vector<GraphRecord>& records);
Dataset read_dataset(const std::string& path);

void write_grid(const std::string& path, const OccupancyGrid& grid);
OccupancyGrid read_grid(const std::string& path);

void write_dataset_manifest(const std::string& path, const GenParams& gen,
                            const NoiseModel& noise, std::uint64_t seed,
                            const std::vector<std::vector<std::uint64_t>>& split_seeds);

struct Checkpoint {
  PlannerParams params;
  std::uint64_t rng_seed = 0;
  int epoch = 0;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

void write_curve(const std::string& path, const std::vector<CurveRow>& curve);

// Generic CSV: header plus stringified rows.
void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows);

// FNV-1a over a canonical string; used for config hashes in manifests.
std::uint64_t fnv1a(const std::string& s);

}  // namespace uncplan::io
