#include "uncplan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "uncplan/planner.hpp"
#include "uncplan/rng.hpp"
#include "uncplan/symbolic.hpp"

namespace uncplan {

namespace {

std::shared_ptr<TopoGraph> random_tiny_graph(int n, int feature_dim, Rng& rng) {
  while (true) {
    TopoGraph g = TopoGraph::with_capacity(n, feature_dim);
    g.gt_adjacency.assign(kMaxNodes * kMaxNodes, 0);
    for (int i = 0; i < n; ++i) {
      g.locations[i] = {3.0 * rng.uniform(), 3.0 * rng.uniform()};
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        g.set_dist(i, j, euclidean(g.locations[i], g.locations[j]));
        g.set_prob(i, j, 0.05 + 0.9 * rng.uniform());
        g.set_adjacent(i, j, rng.bernoulli(0.6));
      }
    }
    for (int i = 0; i < n * feature_dim; ++i) g.features[i] = rng.uniform();
    // need at least one labeled non-target row for a nonzero loss
    const std::vector<int> labels = gt_labels(g, 0);
    int labeled = 0;
    for (int i = 1; i < n; ++i) labeled += labels[i] >= 0 ? 1 : 0;
    if (labeled >= 1) return std::make_shared<TopoGraph>(std::move(g));
  }
}

double loss_value(const PlanningInstance& inst, PlannerParams& params,
                  const ForwardOptions& opts, const std::vector<int>& labels,
                  ad::Tape::Ref* out_loss = nullptr, ad::Tape* out_tape = nullptr) {
  ad::Tape local;
  ad::Tape& tape = out_tape ? *out_tape : local;
  const ForwardRefs refs = planner_forward(tape, inst, params, opts);
  std::vector<std::uint8_t> col_mask(inst.graph->valid_mask.begin(),
                                     inst.graph->valid_mask.end());
  col_mask.resize(params.dims.n_actions);
  const ad::Tape::Ref loss = tape.cross_entropy(refs.logits, labels, col_mask);
  if (out_loss) *out_loss = loss;
  return tape.val(loss).values[0];
}

}  // namespace

GradCheckReport run_gradcheck(int n_configs, double tol, std::uint64_t seed) {
  GradCheckReport report;
  report.n_configs = n_configs;
  char buf[160];

  for (int cfg = 0; cfg < n_configs; ++cfg) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cfg)));

    PlannerDims dims;
    dims.feature_dim = 3 + static_cast<int>(rng.integer(3));
    dims.hidden = 3 + static_cast<int>(rng.integer(3));
    dims.msg = dims.hidden;  // meanpool configs require msg == hidden
    dims.r_dim = 2 + static_cast<int>(rng.integer(3));

    ForwardOptions opts;
    opts.k_steps = 1 + static_cast<int>(rng.integer(2));
    opts.aggregator = cfg % 4 == 3 ? Aggregator::kMeanPool : Aggregator::kSerializedGru;
    const GtChannelMode modes[3] = {GtChannelMode::kProbsOnly, GtChannelMode::kGtOnly,
                                    GtChannelMode::kBoth};
    opts.mode = modes[cfg % 3];

    const int n = 3 + static_cast<int>(rng.integer(3));
    PlanningInstance inst;
    inst.graph = random_tiny_graph(n, dims.feature_dim, rng);
    inst.target = static_cast<int>(rng.integer(n));
    inst.source = inst.target;
    std::vector<int> labels = gt_labels(*inst.graph, inst.target);
    labels[inst.target] = -1;
    labels.resize(n);  // logits have one row per valid node

    PlannerParams params = PlannerParams::init(dims, rng);
    params.zero_grads();
    {
      ad::Tape tape;
      ad::Tape::Ref loss;
      loss_value(inst, params, opts, labels, &loss, &tape);
      tape.backward(loss);
    }

    double cfg_max = 0.0;
    int cfg_fail = 0;
    for (ad::Tensor* t : params.all()) {
      const int n_coords = std::min(3, t->numel());
      for (int c = 0; c < n_coords; ++c) {
        const int idx = static_cast<int>(rng.integer(t->numel()));
        const double analytic = t->grad[idx];
        const double x0 = t->values[idx];
        const double h = 1e-5 * std::max(1.0, std::abs(x0));
        t->values[idx] = x0 + h;
        const double lp = loss_value(inst, params, opts, labels);
        t->values[idx] = x0 - h;
        const double lm = loss_value(inst, params, opts, labels);
        t->values[idx] = x0;
        const double fd = (lp - lm) / (2.0 * h);
        const double rel =
            std::abs(analytic - fd) / std::max(std::abs(analytic) + std::abs(fd), 1e-3);
        cfg_max = std::max(cfg_max, rel);
        ++report.n_coords;
        if (!(rel < tol)) ++cfg_fail;
      }
    }
    report.n_failures += cfg_fail;
    report.max_rel_err = std::max(report.max_rel_err, cfg_max);
    std::snprintf(buf, sizeof(buf),
                  "config %2d n=%d k=%d agg=%s mode=%d max_rel=%.3e %s", cfg, n, opts.k_steps,
                  opts.aggregator == Aggregator::kMeanPool ? "mean" : "gru",
                  static_cast<int>(opts.mode), cfg_max, cfg_fail == 0 ? "ok" : "FAIL");
    report.lines.emplace_back(buf);
  }
  return report;
}

}  // namespace uncplan
