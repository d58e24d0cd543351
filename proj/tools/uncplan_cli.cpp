#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uncplan/eval.hpp"
#include "uncplan/gradcheck.hpp"
#include "uncplan/hierarchical.hpp"
#include "uncplan/io.hpp"
#include "uncplan/planner.hpp"
#include "uncplan/worldgen.hpp"

namespace fs = std::filesystem;
using namespace uncplan;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

Dataset load_split(const std::string& dir, const std::string& name) {
  const std::string path = dir + "/" + name;
  if (!fs::exists(path)) throw std::runtime_error("missing dataset file " + path);
  return io::read_dataset(path);
}

std::vector<OccupancyGrid> load_grids(const std::string& dir, const Dataset& data) {
  std::vector<OccupancyGrid> grids;
  grids.reserve(data.graphs.size());
  for (const GraphRecord& rec : data.graphs) {
    grids.push_back(io::read_grid(dir + "/" + rec.grid_ref));
  }
  return grids;
}

std::string file_contents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GtChannelMode channel_of(const std::string& name) {
  if (name == "gt") return GtChannelMode::kGtOnly;
  if (name == "both") return GtChannelMode::kBoth;
  return GtChannelMode::kProbsOnly;
}

NeuralEvalOptions eval_options_of(const io::Checkpoint& ckpt) {
  NeuralEvalOptions opts;
  auto meta = [&](const std::string& k, const std::string& dflt) {
    auto it = ckpt.meta.find(k);
    return it == ckpt.meta.end() ? dflt : it->second;
  };
  opts.k_steps = std::stoi(meta("k_steps", "6"));
  opts.zero_features = meta("zero_features", "0") == "1";
  opts.aggregator =
      meta("aggregator", "gru") == "mean" ? Aggregator::kMeanPool : Aggregator::kSerializedGru;
  const std::string ch = meta("channel", "moddrop");
  // mod-drop trained models are evaluated probs-only
  opts.mode = ch == "gt" ? GtChannelMode::kGtOnly
                         : (ch == "both" ? GtChannelMode::kBoth : GtChannelMode::kProbsOnly);
  return opts;
}

// NodePlanner over cached per-target next-hop tables.
NodePlanner table_planner(std::function<NextHopTable(int)> make) {
  auto cache = std::make_shared<std::map<int, NextHopTable>>();
  return [make = std::move(make), cache](int current, int target) {
    auto it = cache->find(target);
    if (it == cache->end()) it = cache->emplace(target, make(target)).first;
    return it->second[current];
  };
}

int cmd_gen_data(int n_graphs, std::uint64_t seed, const std::string& out, GenParams gen,
                 NoiseModel noise, double val_fraction) {
  const MakeDatasetResult res = make_dataset(n_graphs, gen, noise, seed, out, val_fraction);
  const std::uint64_t hash = io::fnv1a(file_contents(res.manifest_path));
  std::printf("gen-data: %d train / %d val / %d test environments\n", res.n_train, res.n_val,
              res.n_test);
  std::printf("manifest %s hash %016llx\n", res.manifest_path.c_str(),
              static_cast<unsigned long long>(hash));
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out, TrainConfig cfg,
              const std::string& channel, const std::string& aggregator,
              const std::string& neighbor_order) {
  cfg.aggregator = aggregator == "mean" ? Aggregator::kMeanPool : Aggregator::kSerializedGru;
  if (aggregator == "mean") cfg.msg = cfg.hidden;
  if (channel != "moddrop") cfg.channel_mode = channel_of(channel);
  cfg.neighbor_order = neighbor_order == "shuffled" ? TrainConfig::NeighborOrder::kShuffledPerStep
                                                    : TrainConfig::NeighborOrder::kAscending;

  const Dataset train = load_split(data_dir, "train.jsonl");
  Dataset val;
  if (fs::exists(data_dir + "/val.jsonl")) val = load_split(data_dir, "val.jsonl");

  const TrainResult res = train_planner(train, val, cfg);

  io::ensure_dir(out);
  io::Checkpoint ckpt;
  ckpt.params = res.best;
  ckpt.rng_seed = cfg.seed;
  ckpt.epoch = res.best_epoch;
  ckpt.meta["aggregator"] = aggregator == "mean" ? "mean" : "gru";
  ckpt.meta["channel"] = channel;
  ckpt.meta["zero_features"] = cfg.zero_features ? "1" : "0";
  ckpt.meta["k_steps"] = std::to_string(cfg.gnn_steps);
  double best_acc = 0.0;
  for (const CurveRow& r : res.curve) {
    if (r.epoch == res.best_epoch) best_acc = r.val_accuracy;
  }
  ckpt.meta["val_accuracy"] = fmt(best_acc);
  io::save_checkpoint(out + "/checkpoint.txt", ckpt);

  const std::string curve_name =
      aggregator == "mean" ? "curve_ablation.csv" : "curve.csv";
  io::write_curve(out + "/" + curve_name, res.curve);

  std::ostringstream cfgstr;
  cfgstr << "train seed=" << cfg.seed << " epochs=" << cfg.epochs << " lr=" << cfg.lr
         << " wd=" << cfg.weight_decay << " batch=" << cfg.batch_size << " k=" << cfg.gnn_steps
         << " clip=" << cfg.clip_norm << " msg=" << cfg.msg << " hidden=" << cfg.hidden
         << " r=" << cfg.r_dim << " agg=" << aggregator << " channel=" << channel
         << " zero_features=" << cfg.zero_features << " instances=" << cfg.train_instances;
  std::ofstream mf(out + "/train_manifest.json");
  mf << "{\n  \"config\": \"" << cfgstr.str() << "\",\n  \"config_hash\": " << io::fnv1a(cfgstr.str())
     << ",\n  \"best_epoch\": " << res.best_epoch << ",\n  \"best_val_accuracy\": " << fmt(best_acc)
     << "\n}\n";

  std::printf("train: %zu epochs, best epoch %d, val accuracy %s\n", res.curve.size(),
              res.best_epoch, fmt(best_acc).c_str());
  std::printf("checkpoint %s/checkpoint.txt\n", out.c_str());
  return 0;
}

int cmd_eval_planner(const std::string& data_dir, const std::string& out,
                     const std::string& ckpt_full, const std::string& ckpt_novis,
                     const std::string& ckpt_gt, int max_units, std::uint64_t seed) {
  const Dataset test = load_split(data_dir, "test.jsonl");
  const std::vector<UnitRef> units = sample_units(test, max_units, mix_seed(seed, 0xE7A1));

  std::vector<std::vector<std::string>> rows;
  auto emit = [&](const std::string& method, const std::string& param, const EvalSummary& s) {
    rows.push_back({method, param, fmt(s.accuracy), fmt(s.hspl), std::to_string(s.n_pairs)});
    std::printf("%-16s %-6s accuracy %.4f hspl %.4f (%d pairs)\n", method.c_str(), param.c_str(),
                s.accuracy, s.hspl, s.n_pairs);
  };

  for (int i = 0; i <= 10; ++i) {
    const double tau = i * 0.1;
    emit("threshold", fmt(tau), evaluate_threshold(test, tau, units));
  }
  for (double lambda : {0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0}) {
    emit("custom_cost", fmt(lambda), evaluate_custom_cost(test, lambda, units));
  }
  emit("symbolic_gt", "-", evaluate_gt_oracle(test, units));

  struct NamedCkpt {
    std::string name;
    std::string path;
  };
  for (const NamedCkpt& nc : {NamedCkpt{"neural", ckpt_full}, NamedCkpt{"neural_novis", ckpt_novis},
                              NamedCkpt{"neural_gt", ckpt_gt}}) {
    if (nc.path.empty()) continue;
    io::Checkpoint ckpt = io::load_checkpoint(nc.path);
    emit(nc.name, "-", evaluate_neural(test, ckpt.params, eval_options_of(ckpt), units));
  }

  if (!out.empty()) {
    io::ensure_dir(out);
    io::write_csv(out + "/planner_metrics.csv", "method,param,accuracy,hspl,n_pairs", rows);
    std::printf("wrote %s/planner_metrics.csv\n", out.c_str());
  }
  return 0;
}

int cmd_eval_hier(const std::string& data_dir, const std::string& out, const std::string& ckpt_path,
                  int episodes, double tau, double lambda, int m, int budget,
                  std::uint64_t seed) {
  const Dataset test = load_split(data_dir, "test.jsonl");
  const std::vector<OccupancyGrid> grids = load_grids(data_dir, test);
  const std::vector<EpisodeSpec> specs = sample_episode_specs(test, grids, episodes, seed);

  LocalPolicyConfig lp;
  lp.m = m;

  std::vector<std::vector<std::string>> rows;
  auto emit = [&](const std::string& planner, const std::string& mode, const SuiteResult& s) {
    rows.push_back({planner, mode, fmt(s.success_rate), fmt(s.spl), std::to_string(s.episodes)});
    std::printf("%-14s %-13s success %.4f spl %.4f (%d episodes)\n", planner.c_str(),
                mode.c_str(), s.success_rate, s.spl, s.episodes);
  };

  {
    auto rng = std::make_shared<Rng>(mix_seed(seed, 0x7A2D));
    emit("random", "-", run_suite(test, grids, specs, [&](int gi) -> NodePlanner {
           const TopoGraph& g = *test.graphs[gi].graph;
           return [&g, rng](int cur, int) { return random_planner(g, cur, *rng); };
         }, lp, budget));
  }
  emit("threshold", fmt(tau), run_suite(test, grids, specs, [&](int gi) {
         const TopoGraph& g = *test.graphs[gi].graph;
         return table_planner([&g, tau](int target) { return threshold_table(g, tau, target); });
       }, lp, budget));
  emit("custom_cost", fmt(lambda), run_suite(test, grids, specs, [&](int gi) {
         const TopoGraph& g = *test.graphs[gi].graph;
         return table_planner(
             [&g, lambda](int target) { return custom_cost_table(g, lambda, target); });
       }, lp, budget));
  emit("gt_oracle", "-", run_suite(test, grids, specs, [&](int gi) {
         const TopoGraph& g = *test.graphs[gi].graph;
         return table_planner([&g](int target) { return gt_table(g, target); });
       }, lp, budget));

  if (!ckpt_path.empty()) {
    io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
    const NeuralEvalOptions ne = eval_options_of(ckpt);
    ForwardOptions fo;
    fo.k_steps = ne.k_steps;
    fo.mode = ne.mode;
    fo.zero_features = ne.zero_features;
    fo.aggregator = ne.aggregator;
    emit("neural", "deterministic", run_suite(test, grids, specs, [&](int gi) {
           return neural_node_planner(test.graphs[gi].graph, ckpt.params, fo, false, nullptr);
         }, lp, budget));
    auto rng = std::make_shared<Rng>(mix_seed(seed, 0x5A4E));
    emit("neural", "sampling", run_suite(test, grids, specs, [&](int gi) {
           return neural_node_planner(test.graphs[gi].graph, ckpt.params, fo, true, rng.get());
         }, lp, budget));
  }

  if (!out.empty()) {
    io::ensure_dir(out);
    io::write_csv(out + "/hier_metrics.csv", "planner,mode,success_rate,spl,episodes", rows);
    std::printf("wrote %s/hier_metrics.csv\n", out.c_str());
  }
  return 0;
}

int cmd_gradcheck(int configs, double tol, std::uint64_t seed, bool perturb) {
  ad::set_perturb_backward(perturb);
  const GradCheckReport report = run_gradcheck(configs, tol, seed);
  ad::set_perturb_backward(false);
  for (const std::string& line : report.lines) std::printf("%s\n", line.c_str());
  std::printf("gradcheck: %d/%d coordinates failed (max rel err %.3e, tol %g)\n",
              report.n_failures, report.n_coords, report.max_rel_err, tol);
  return report.n_failures == 0 ? 0 : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertain topological map planner pipeline"};
  app.require_subcommand(1);
  app.set_config("--config");
  app.allow_config_extras(false);
  app.fallthrough();  // --seed/--out may follow the subcommand

  std::uint64_t seed = 7;
  std::string out = "out";
  app.add_option("--seed", seed, "global seed")->capture_default_str();
  app.add_option("--out", out, "output directory")->capture_default_str();

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  int n_graphs = 11;
  GenParams gen;
  NoiseModel noise;
  double val_fraction = 0.1;
  gen_cmd->add_option("--n-graphs", n_graphs)->capture_default_str();
  gen_cmd->add_option("--grid-size", gen.grid_width)->capture_default_str();
  gen_cmd->add_option("--nodes", gen.n_nodes)->capture_default_str();
  gen_cmd->add_option("--walk-cells", gen.walk_cells)->capture_default_str();
  gen_cmd->add_option("--alpha", noise.sharpness)->capture_default_str();
  gen_cmd->add_option("--jitter", noise.jitter)->capture_default_str();
  gen_cmd->add_option("--flip", noise.flip)->capture_default_str();
  gen_cmd->add_option("--val-fraction", val_fraction)->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train the neural planner");
  std::string data_dir = "out";
  TrainConfig tc;
  std::string channel = "moddrop", aggregator = "gru", neighbor_order = "ascending";
  train_cmd->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tc.lr)->capture_default_str();
  train_cmd->add_option("--wd", tc.weight_decay)->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--k-steps", tc.gnn_steps)->capture_default_str();
  train_cmd->add_option("--clip", tc.clip_norm)->capture_default_str();
  train_cmd->add_option("--msg", tc.msg)->capture_default_str();
  train_cmd->add_option("--hidden", tc.hidden)->capture_default_str();
  train_cmd->add_option("--r-dim", tc.r_dim)->capture_default_str();
  train_cmd->add_option("--train-instances", tc.train_instances)->capture_default_str();
  train_cmd->add_option("--val-units", tc.val_units)->capture_default_str();
  train_cmd->add_option("--aggregator", aggregator)->check(CLI::IsMember({"gru", "mean"}));
  train_cmd->add_option("--channel", channel)
      ->check(CLI::IsMember({"moddrop", "probs", "gt", "both"}));
  train_cmd->add_option("--neighbor-order", neighbor_order)
      ->check(CLI::IsMember({"ascending", "shuffled"}));
  train_cmd->add_flag("--zero-features", tc.zero_features, "train the w/o-visual variant");

  // eval-planner
  auto* evalp_cmd = app.add_subcommand("eval-planner", "graph-space evaluation sweeps");
  std::string ckpt_full, ckpt_novis, ckpt_gt;
  int max_units = 0;
  evalp_cmd->add_option("--data", data_dir)->capture_default_str();
  evalp_cmd->add_option("--checkpoint", ckpt_full, "full neural model checkpoint");
  evalp_cmd->add_option("--checkpoint-novis", ckpt_novis, "features-zeroed checkpoint");
  evalp_cmd->add_option("--checkpoint-gt", ckpt_gt, "GT-channel checkpoint");
  evalp_cmd->add_option("--units", max_units, "subsample (graph,target) units; 0 = all")
      ->capture_default_str();

  // eval-hier
  auto* evalh_cmd = app.add_subcommand("eval-hier", "hierarchical episode suites");
  int episodes = 200, m = 10, budget = 500;
  double tau = 0.5, lambda = 1.0;
  evalh_cmd->add_option("--data", data_dir)->capture_default_str();
  evalh_cmd->add_option("--checkpoint", ckpt_full, "neural checkpoint");
  evalh_cmd->add_option("--episodes", episodes)->capture_default_str();
  evalh_cmd->add_option("--tau", tau, "threshold baseline tau")->capture_default_str();
  evalh_cmd->add_option("--lambda", lambda, "custom-cost baseline lambda")->capture_default_str();
  evalh_cmd->add_option("--m", m, "local policy step budget")->capture_default_str();
  evalh_cmd->add_option("--budget", budget, "low-level step budget")->capture_default_str();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  int gc_configs = 20;
  double gc_tol = 1e-4;
  bool perturb = false;
  grad_cmd->add_option("--configs", gc_configs)->capture_default_str();
  grad_cmd->add_option("--tol", gc_tol)->capture_default_str();
  grad_cmd->add_flag("--perturb-backward", perturb, "negative control: break one backward rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) {
      gen.grid_height = gen.grid_width;
      return cmd_gen_data(n_graphs, seed, out, gen, noise, val_fraction);
    }
    if (train_cmd->parsed()) {
      tc.seed = seed;
      return cmd_train(data_dir, out, tc, channel, aggregator, neighbor_order);
    }
    if (evalp_cmd->parsed()) {
      return cmd_eval_planner(data_dir, out, ckpt_full, ckpt_novis, ckpt_gt, max_units, seed);
    }
    if (evalh_cmd->parsed()) {
      return cmd_eval_hier(data_dir, out, ckpt_full, episodes, tau, lambda, m, budget, seed);
    }
    if (grad_cmd->parsed()) {
      return cmd_gradcheck(gc_configs, gc_tol, seed, perturb);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
