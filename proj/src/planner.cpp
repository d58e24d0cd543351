#include "uncplan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uncplan/eval.hpp"
#include "uncplan/symbolic.hpp"

namespace uncplan {

namespace {
using Ref = ad::Tape::Ref;

ad::Tensor glorot(int rows, int cols, Rng& rng) {
  const double scale = std::sqrt(2.0 / (rows + cols));
  return ad::Tensor::randn(rows, cols, rng, scale, /*rg=*/true);
}

// Fixed node embedding matrix for one instance; never carries gradients.
ad::Tensor embedding_matrix(const PlanningInstance& inst, GtChannelMode mode,
                            bool zero_features) {
  const TopoGraph& g = *inst.graph;
  const int n = g.n_nodes;
  ad::Tensor x(n, NodeEmbedding::flat_size(g.feature_dim));
  for (int i = 0; i < n; ++i) {
    NodeEmbedding e = build_embedding(g, i, inst.target, mode);
    if (zero_features) std::fill(e.visual.begin(), e.visual.end(), 0.0);
    const std::vector<double> flat = e.flat();
    std::copy(flat.begin(), flat.end(), x.values.begin() + static_cast<std::size_t>(i) * x.cols);
  }
  return x;
}
}  // namespace

PlannerParams PlannerParams::init(const PlannerDims& dims, Rng& rng) {
  PlannerParams p;
  p.dims = dims;
  const int pd = dims.pair_dim();
  p.w1 = glorot(dims.msg, pd, rng);
  p.b1 = ad::Tensor(1, dims.msg, 0.0, true);
  p.w2 = glorot(dims.msg, pd, rng);
  p.b2 = ad::Tensor(1, dims.msg, 0.0, true);
  for (int l = 0; l < 2; ++l) {
    const int in = l == 0 ? dims.msg : dims.hidden;
    auto& gl = p.gru[l];
    gl.wz = glorot(dims.hidden, in, rng);
    gl.uz = glorot(dims.hidden, dims.hidden, rng);
    gl.bz = ad::Tensor(1, dims.hidden, 0.0, true);
    gl.wr = glorot(dims.hidden, in, rng);
    gl.ur = glorot(dims.hidden, dims.hidden, rng);
    gl.br = ad::Tensor(1, dims.hidden, 0.0, true);
    gl.wc = glorot(dims.hidden, in, rng);
    gl.uc = glorot(dims.hidden, dims.hidden, rng);
    gl.bc = ad::Tensor(1, dims.hidden, 0.0, true);
  }
  p.mlp_w1 = glorot(dims.hidden, dims.hidden, rng);
  p.mlp_b1 = ad::Tensor(1, dims.hidden, 0.0, true);
  p.mlp_w2 = glorot(dims.r_dim, dims.hidden, rng);
  p.mlp_b2 = ad::Tensor(1, dims.r_dim, 0.0, true);
  p.readout = glorot(dims.n_actions, dims.r_dim, rng);
  return p;
}

std::vector<std::pair<std::string, ad::Tensor*>> PlannerParams::named() {
  std::vector<std::pair<std::string, ad::Tensor*>> out = {
      {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2},
  };
  for (int l = 0; l < 2; ++l) {
    const std::string pfx = "gru" + std::to_string(l) + ".";
    auto& gl = gru[l];
    out.emplace_back(pfx + "wz", &gl.wz);
    out.emplace_back(pfx + "uz", &gl.uz);
    out.emplace_back(pfx + "bz", &gl.bz);
    out.emplace_back(pfx + "wr", &gl.wr);
    out.emplace_back(pfx + "ur", &gl.ur);
    out.emplace_back(pfx + "br", &gl.br);
    out.emplace_back(pfx + "wc", &gl.wc);
    out.emplace_back(pfx + "uc", &gl.uc);
    out.emplace_back(pfx + "bc", &gl.bc);
  }
  out.emplace_back("mlp_w1", &mlp_w1);
  out.emplace_back("mlp_b1", &mlp_b1);
  out.emplace_back("mlp_w2", &mlp_w2);
  out.emplace_back("mlp_b2", &mlp_b2);
  out.emplace_back("readout", &readout);
  return out;
}

std::vector<ad::Tensor*> PlannerParams::all() {
  std::vector<ad::Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void PlannerParams::zero_grads() {
  for (ad::Tensor* t : all()) t->zero_grad();
}

NeighborOrders ascending_orders(int n_nodes, int rounds) {
  NeighborOrders orders(rounds);
  for (int k = 0; k < rounds; ++k) {
    orders[k].resize(n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
      for (int j = 0; j < n_nodes; ++j) {
        if (j != i) orders[k][i].push_back(j);
      }
    }
  }
  return orders;
}

NeighborOrders shuffled_orders(int n_nodes, int rounds, Rng& rng) {
  NeighborOrders orders = ascending_orders(n_nodes, rounds);
  for (auto& round : orders) {
    for (auto& seq : round) rng.shuffle(seq);
  }
  return orders;
}

std::vector<double> message(const std::vector<double>& n_i, const std::vector<double>& n_j,
                            const PlannerParams& params) {
  const int pd = params.dims.pair_dim();
  if (static_cast<int>(n_i.size() + n_j.size()) != pd) {
    throw std::invalid_argument("message: node vector dimension mismatch");
  }
  std::vector<double> pair(n_i);
  pair.insert(pair.end(), n_j.begin(), n_j.end());
  std::vector<double> out(params.dims.msg);
  for (int r = 0; r < params.dims.msg; ++r) {
    double lin = params.b1.values[r];
    double gate = params.b2.values[r];
    for (int c = 0; c < pd; ++c) {
      lin += params.w1.at(r, c) * pair[c];
      gate += params.w2.at(r, c) * pair[c];
    }
    out[r] = lin / (1.0 + std::exp(-gate));
  }
  return out;
}

ForwardRefs planner_forward_batch(ad::Tape& tape, const std::vector<PlanningInstance>& insts,
                                  PlannerParams& params, const ForwardOptions& opts,
                                  const std::vector<GtChannelMode>* modes) {
  if (insts.empty()) throw std::invalid_argument("planner_forward_batch: empty batch");
  if (modes && modes->size() != insts.size()) {
    throw std::invalid_argument("planner_forward_batch: modes size mismatch");
  }
  const int batch = static_cast<int>(insts.size());
  const int n = insts[0].graph->n_nodes;
  const int fd = insts[0].graph->feature_dim;
  for (const PlanningInstance& inst : insts) {
    if (inst.graph->n_nodes != n || inst.graph->feature_dim != fd) {
      throw std::invalid_argument("planner_forward_batch: instances must share graph shape");
    }
  }
  if (opts.k_steps < 1) throw std::invalid_argument("planner_forward: k_steps must be >= 1");
  if (opts.aggregator == Aggregator::kMeanPool && params.dims.msg != params.dims.hidden) {
    throw std::invalid_argument("planner_forward: mean-pool requires msg == hidden dims");
  }

  ad::Tensor xall(batch * n, NodeEmbedding::flat_size(fd));
  for (int u = 0; u < batch; ++u) {
    const ad::Tensor xu = embedding_matrix(insts[u], modes ? (*modes)[u] : opts.mode,
                                           opts.zero_features);
    std::copy(xu.values.begin(), xu.values.end(),
              xall.values.begin() + static_cast<std::size_t>(u) * n * xall.cols);
  }
  const Ref x = tape.constant(std::move(xall));
  const int nd = params.dims.node_dim();

  const Ref w1 = tape.leaf(&params.w1);
  const Ref b1 = tape.leaf(&params.b1);
  const Ref w2 = tape.leaf(&params.w2);
  const Ref b2 = tape.leaf(&params.b2);
  const Ref w1_own = tape.slice_cols(w1, 0, nd);
  const Ref w1_peer = tape.slice_cols(w1, nd, 2 * nd);
  const Ref w2_own = tape.slice_cols(w2, 0, nd);
  const Ref w2_peer = tape.slice_cols(w2, nd, 2 * nd);

  struct GruRefs {
    Ref wz, uz, bz, wr, ur, br, wc, uc, bc;
  };
  GruRefs gl[2];
  for (int l = 0; l < 2; ++l) {
    gl[l] = {tape.leaf(&params.gru[l].wz), tape.leaf(&params.gru[l].uz),
             tape.leaf(&params.gru[l].bz), tape.leaf(&params.gru[l].wr),
             tape.leaf(&params.gru[l].ur), tape.leaf(&params.gru[l].br),
             tape.leaf(&params.gru[l].wc), tape.leaf(&params.gru[l].uc),
             tape.leaf(&params.gru[l].bc)};
  }
  const Ref mlp_w1 = tape.leaf(&params.mlp_w1);
  const Ref mlp_b1 = tape.leaf(&params.mlp_b1);
  const Ref mlp_w2 = tape.leaf(&params.mlp_w2);
  const Ref mlp_b2 = tape.leaf(&params.mlp_b2);
  const Ref readout = tape.leaf(&params.readout);

  auto gru_cell = [&](const GruRefs& p, Ref input, Ref h) -> Ref {
    return tape.gru_cell(input, h, p.wz, p.uz, p.bz, p.wr, p.ur, p.br, p.wc, p.uc, p.bc);
  };
  auto mlp = [&](Ref in) -> Ref {
    const Ref hidden =
        tape.relu(tape.add_rowvec(tape.matmul_nt(in, mlp_w1), mlp_b1));
    return tape.add_rowvec(tape.matmul_nt(hidden, mlp_w2), mlp_b2);
  };

  Ref r = tape.zeros(batch * n, params.dims.r_dim);
  Ref h0 = tape.zeros(batch * n, params.dims.hidden);
  Ref h1 = tape.zeros(batch * n, params.dims.hidden);

  const NeighborOrders fallback =
      opts.orders == nullptr ? ascending_orders(n, opts.k_steps) : NeighborOrders{};
  const NeighborOrders& orders = opts.orders ? *opts.orders : fallback;
  if (static_cast<int>(orders.size()) < opts.k_steps) {
    throw std::invalid_argument("planner_forward: neighbor orders shorter than k_steps");
  }

  for (int round = 0; round < opts.k_steps; ++round) {
    const Ref nodes = tape.concat_cols(x, r);
    // Message halves precomputed per node; a pair message is the sum of its
    // endpoints' halves, so each GRU step only gathers rows.
    const Ref own1 = tape.matmul_nt(nodes, w1_own);
    const Ref peer1 = tape.matmul_nt(nodes, w1_peer);
    const Ref own2 = tape.matmul_nt(nodes, w2_own);
    const Ref peer2 = tape.matmul_nt(nodes, w2_peer);

    Ref mean_acc = -1;
    const int steps = n - 1;
    for (int t = 0; t < steps; ++t) {
      std::vector<int> idx(batch * n);
      for (int i = 0; i < n; ++i) {
        const auto& seq = orders[round][i];
        if (static_cast<int>(seq.size()) != steps) {
          throw std::invalid_argument("planner_forward: bad neighbor sequence length");
        }
        for (int u = 0; u < batch; ++u) idx[u * n + i] = u * n + seq[t];
      }
      const Ref msg = tape.gated_gather(own1, peer1, b1, own2, peer2, b2, std::move(idx));

      if (opts.aggregator == Aggregator::kSerializedGru) {
        h0 = gru_cell(gl[0], msg, h0);
        h1 = gru_cell(gl[1], h0, h1);
      } else {
        mean_acc = mean_acc < 0 ? msg : tape.add(mean_acc, msg);
      }
    }

    if (opts.aggregator == Aggregator::kSerializedGru) {
      r = mlp(h1);
    } else {
      const Ref pooled = mean_acc < 0 ? tape.zeros(batch * n, params.dims.msg)
                                      : tape.affine(mean_acc, 1.0 / steps, 0.0);
      r = mlp(pooled);
    }
  }

  ForwardRefs out;
  out.logits = tape.matmul_nt(r, readout);
  out.actions = tape.softmax_rows(out.logits, insts[0].graph->valid_mask);
  return out;
}

ForwardRefs planner_forward(ad::Tape& tape, const PlanningInstance& inst, PlannerParams& params,
                            const ForwardOptions& opts) {
  return planner_forward_batch(tape, {inst}, params, opts);
}

std::vector<ad::Tensor> planner_actions_batch(const std::vector<PlanningInstance>& insts,
                                              PlannerParams& params, const ForwardOptions& opts) {
  ad::Tape tape;
  const ForwardRefs refs = planner_forward_batch(tape, insts, params, opts);
  const ad::Tensor& a = tape.val(refs.actions);
  const int n = insts[0].graph->n_nodes;
  std::vector<ad::Tensor> out;
  out.reserve(insts.size());
  for (std::size_t u = 0; u < insts.size(); ++u) {
    ad::Tensor full(kMaxNodes, kMaxNodes);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < a.cols; ++j) {
        full.at(i, j) = a.at(static_cast<int>(u) * n + i, j);
      }
    }
    out.push_back(std::move(full));
  }
  return out;
}

ad::Tensor planner_actions(const PlanningInstance& inst, PlannerParams& params,
                           const ForwardOptions& opts) {
  return planner_actions_batch({inst}, params, opts)[0];
}

int predict_next(const ad::Tensor& actions, int current, PredictMode mode, Rng* rng) {
  const int cols = actions.cols;
  if (mode == PredictMode::kDeterministic) {
    int best = -1;
    double best_p = -1.0;
    for (int j = 0; j < cols; ++j) {
      const double p = actions.at(current, j);
      if (p > best_p) {
        best_p = p;
        best = j;
      }
    }
    return best;
  }
  if (rng == nullptr) throw std::invalid_argument("predict_next: sampling requires an rng");
  const double u = rng->uniform();
  double acc = 0.0;
  int last_positive = -1;
  for (int j = 0; j < cols; ++j) {
    const double p = actions.at(current, j);
    if (p <= 0.0) continue;
    last_positive = j;
    acc += p;
    if (u < acc) return j;
  }
  return last_positive;  // guard against accumulated rounding
}

double moddrop_p(int epoch, const TrainConfig& config) {
  if (config.moddrop_taper_epochs <= 0) return 1.0;
  const double p = config.moddrop_start +
                   (1.0 - config.moddrop_start) *
                       (static_cast<double>(epoch) / config.moddrop_taper_epochs);
  return std::min(1.0, p);
}

GtChannelMode moddrop_mask(int epoch, const TrainConfig& config, Rng& rng) {
  return rng.bernoulli(moddrop_p(epoch, config)) ? GtChannelMode::kProbsOnly
                                                 : GtChannelMode::kGtOnly;
}

TrainResult train_planner(const Dataset& train, const Dataset& val, const TrainConfig& config) {
  if (train.graphs.empty()) throw std::invalid_argument("train_planner: empty dataset");

  Rng root(config.seed);
  PlannerDims dims;
  dims.feature_dim = train.feature_dim();
  dims.msg = config.msg;
  dims.hidden = config.hidden;
  dims.r_dim = config.r_dim;

  Rng init_rng = root.fork(0);
  PlannerParams params = PlannerParams::init(dims, init_rng);

  std::vector<PairRef> pairs = enumerate_pairs(train);
  if (pairs.empty()) throw std::invalid_argument("train_planner: no trainable pairs");
  if (config.train_instances > 0 && config.train_instances < static_cast<int>(pairs.size())) {
    Rng sample_rng = root.fork(1);
    sample_rng.shuffle(pairs);
    pairs.resize(config.train_instances);
  }
  const std::vector<UnitRef> units = units_of_pairs(pairs);

  // Per-unit supervision: canonical next-hop labels with the target's own
  // row excluded from the loss.
  std::vector<std::vector<int>> unit_labels;
  unit_labels.reserve(units.size());
  for (const UnitRef& u : units) {
    std::vector<int> labels = gt_labels(*train.graphs[u.graph_idx].graph, u.target);
    labels[u.target] = -1;
    labels.resize(train.graphs[u.graph_idx].graph->n_nodes);  // one logits row per node
    unit_labels.push_back(std::move(labels));
  }

  const std::vector<UnitRef> val_units =
      val.graphs.empty() ? std::vector<UnitRef>{}
                         : sample_units(val, config.val_units, mix_seed(config.seed, 101));
  const GtChannelMode eval_mode = config.channel_mode.value_or(GtChannelMode::kProbsOnly);

  ad::AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  adam_cfg.weight_decay = config.weight_decay;
  adam_cfg.clip_norm = config.clip_norm;
  ad::Adam adam(params.all(), adam_cfg);

  Rng train_rng = root.fork(2);
  TrainResult result;
  result.best = params;
  double best_acc = -1.0;

  std::vector<int> order(units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr_scale = std::pow(config.lr_decay, epoch / config.lr_decay_every);
    train_rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      params.zero_grads();

      // One stacked forward per mini-batch; the loss is the mean over all
      // labeled node rows in the batch.
      std::vector<PlanningInstance> insts;
      std::vector<GtChannelMode> modes;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        const UnitRef& u = units[order[k]];
        PlanningInstance inst;
        inst.graph = train.graphs[u.graph_idx].graph;
        inst.source = u.target;  // unused by the forward pass
        inst.target = u.target;
        insts.push_back(std::move(inst));
        modes.push_back(config.channel_mode ? *config.channel_mode
                                            : moddrop_mask(epoch, config, train_rng));
        labels.insert(labels.end(), unit_labels[order[k]].begin(), unit_labels[order[k]].end());
      }

      ForwardOptions opts;
      opts.k_steps = config.gnn_steps;
      opts.zero_features = config.zero_features;
      opts.aggregator = config.aggregator;
      NeighborOrders shuffled;
      if (config.neighbor_order == TrainConfig::NeighborOrder::kShuffledPerStep) {
        shuffled = shuffled_orders(insts[0].graph->n_nodes, config.gnn_steps, train_rng);
        opts.orders = &shuffled;
      }

      ad::Tape tape;
      const ForwardRefs fwd = planner_forward_batch(tape, insts, params, opts, &modes);
      const ad::Tape::Ref loss =
          tape.cross_entropy(fwd.logits, labels, insts[0].graph->valid_mask);
      tape.backward(loss);
      loss_sum += tape.val(loss).values[0];
      ++batches;
      adam.step(params.all(), lr_scale);
    }

    CurveRow row;
    row.epoch = epoch;
    row.train_loss = batches > 0 ? loss_sum / batches : 0.0;
    row.moddrop_p = config.channel_mode ? 1.0 : moddrop_p(epoch, config);
    if (!val_units.empty()) {
      NeuralEvalOptions eo;
      eo.k_steps = config.gnn_steps;
      eo.mode = eval_mode;
      eo.zero_features = config.zero_features;
      eo.aggregator = config.aggregator;
      const EvalSummary vs = evaluate_neural(val, params, eo, val_units);
      row.val_accuracy = vs.accuracy;
      row.val_hspl = vs.hspl;
      if (vs.accuracy > best_acc) {
        best_acc = vs.accuracy;
        result.best = params;
        result.best_epoch = epoch;
      }
    }
    result.curve.push_back(row);
  }

  result.final_params = params;
  if (val_units.empty()) {
    result.best = params;
    result.best_epoch = config.epochs - 1;
  }
  return result;
}

}  // namespace uncplan
