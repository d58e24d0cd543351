#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uncplan/autodiff.hpp"
#include "uncplan/dataset.hpp"
#include "uncplan/graph.hpp"
#include "uncplan/rng.hpp"

namespace uncplan {

enum class Aggregator { kSerializedGru, kMeanPool };

struct PlannerDims {
  int feature_dim = 121;
  int msg = 64;
  int hidden = 64;
  int r_dim = 64;
  int n_actions = kMaxNodes;

  int embed_in() const { return NodeEmbedding::flat_size(feature_dim); }
  int node_dim() const { return embed_in() + r_dim; }
  int pair_dim() const { return 2 * node_dim(); }
};

// All learnable tensors of the recurrent graph planner: gated-linear message
// weights, a stacked 2-layer GRU, the state-update MLP and the action
// readout.
struct PlannerParams {
  PlannerDims dims;

  ad::Tensor w1, b1;  // message content: msg x pair_dim
  ad::Tensor w2, b2;  // message gate
  struct GruLayer {
    ad::Tensor wz, uz, bz;  // update gate
    ad::Tensor wr, ur, br;  // reset gate
    ad::Tensor wc, uc, bc;  // candidate
  };
  GruLayer gru[2];
  ad::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  ad::Tensor readout;  // n_actions x r_dim, bias-free

  static PlannerParams init(const PlannerDims& dims, Rng& rng);

  std::vector<ad::Tensor*> all();
  std::vector<std::pair<std::string, ad::Tensor*>> named();
  void zero_grads();
};

// orders[round][node] lists that node's neighbor sequence for the round.
using NeighborOrders = std::vector<std::vector<std::vector<int>>>;

NeighborOrders ascending_orders(int n_nodes, int rounds);
NeighborOrders shuffled_orders(int n_nodes, int rounds, Rng& rng);

struct ForwardOptions {
  int k_steps = 6;
  GtChannelMode mode = GtChannelMode::kProbsOnly;
  bool zero_features = false;
  Aggregator aggregator = Aggregator::kSerializedGru;
  const NeighborOrders* orders = nullptr;  // null = ascending
};

struct ForwardRefs {
  ad::Tape::Ref logits;   // n_nodes x n_actions
  ad::Tape::Ref actions;  // masked row softmax of logits
};

// Gated-linear message between two node vectors; exposed standalone for
// oracle tests against the full forward pass.
std::vector<double> message(const std::vector<double>& n_i, const std::vector<double>& n_j,
                            const PlannerParams& params);

// Records k message-passing rounds for one instance on the tape.
ForwardRefs planner_forward(ad::Tape& tape, const PlanningInstance& inst, PlannerParams& params,
                            const ForwardOptions& opts);

// Batched variant: stacks B same-sized instances into (B*n)-row matrices so
// tape overhead amortizes. Rows u*n..u*n+n of logits/actions belong to
// instance u. `modes` optionally overrides opts.mode per instance (mod-drop).
ForwardRefs planner_forward_batch(ad::Tape& tape, const std::vector<PlanningInstance>& insts,
                                  PlannerParams& params, const ForwardOptions& opts,
                                  const std::vector<GtChannelMode>* modes = nullptr);

// One padded kMaxNodes x kMaxNodes action matrix per instance.
std::vector<ad::Tensor> planner_actions_batch(const std::vector<PlanningInstance>& insts,
                                              PlannerParams& params, const ForwardOptions& opts);

// Convenience wrapper: fresh tape, returns the kMaxNodes x kMaxNodes action
// matrix (padded rows/columns exactly zero).
ad::Tensor planner_actions(const PlanningInstance& inst, PlannerParams& params,
                           const ForwardOptions& opts);

enum class PredictMode { kDeterministic, kSampling };

// Next waypoint from the action distribution of `current`: argmax (lowest
// index on ties) or a categorical sample over valid nodes.
int predict_next(const ad::Tensor& actions, int current, PredictMode mode, Rng* rng = nullptr);

struct TrainConfig {
  double lr = 0.001;
  double weight_decay = 0.0001;
  int batch_size = 32;
  int epochs = 100;
  double lr_decay = 0.1;
  int lr_decay_every = 120;
  int gnn_steps = 6;
  int gru_depth = 2;  // informational; the implementation stacks exactly 2
  double clip_norm = 2.0;
  double moddrop_start = 0.5;
  int moddrop_taper_epochs = 250;
  enum class NeighborOrder { kAscending, kShuffledPerStep };
  NeighborOrder neighbor_order = NeighborOrder::kAscending;
  std::uint64_t seed = 1;

  // desk-scale knobs
  int msg = 64;
  int hidden = 64;
  int r_dim = 64;
  int train_instances = 0;  // sampled (S,T) pairs; 0 = all
  int val_units = 200;      // (graph,target) units per validation pass; 0 = all
  Aggregator aggregator = Aggregator::kSerializedGru;
  std::optional<GtChannelMode> channel_mode;  // fixed mode; unset = mod-drop
  bool zero_features = false;
};

// Probability of masking the GT-adjacency channel at this epoch: tapers
// linearly from moddrop_start to 1 over the first moddrop_taper_epochs.
double moddrop_p(int epoch, const TrainConfig& config);

// Draws the per-instance channel mode for a training step.
GtChannelMode moddrop_mask(int epoch, const TrainConfig& config, Rng& rng);

struct CurveRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_hspl = 0.0;
  double moddrop_p = 0.0;
};

struct TrainResult {
  PlannerParams best;   // best-validation checkpoint (final params if no val data)
  PlannerParams final_params;
  std::vector<CurveRow> curve;
  int best_epoch = -1;
};

TrainResult train_planner(const Dataset& train, const Dataset& val, const TrainConfig& config);

}  // namespace uncplan
