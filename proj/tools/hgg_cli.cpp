#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hgg/data_io.hpp"
#include "hgg/graph.hpp"
#include "hgg/knn.hpp"
#include "hgg/layers.hpp"
#include "hgg/rng.hpp"
#include "hgg/tensor.hpp"
#include "hgg/train.hpp"

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// HGG_SEED, when set, wins over --seed; it exists to force a seed across a
// whole pipeline of invocations without touching each command line.
std::uint64_t resolve_seed(std::uint64_t flag_seed, bool& from_env) {
  from_env = false;
  if (const char* env = std::getenv("HGG_SEED")) {
    from_env = true;
    return std::strtoull(env, nullptr, 10);
  }
  return flag_seed;
}

hgg::Variant variant_or_die(const std::string& name) {
  auto v = hgg::parse_variant(name);
  if (!v)
    throw std::runtime_error("unknown variant '" + name +
                             "' (expected hg, hg-awa, hg-crossvit or hg-transformer)");
  return *v;
}

hgg::EdgeMode edge_mode_or_die(const std::string& name) {
  if (name == "feat-knn") return hgg::EdgeMode::FeatureKnn;
  if (name == "spatial-knn") return hgg::EdgeMode::SpatialKnn;
  throw std::runtime_error("unknown edge mode '" + name + "' (expected feat-knn or spatial-knn)");
}

void echo_config(const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string line = "config: " + cmd;
  for (const auto& [k, v] : kv) line += " " + k + "=" + v;
  std::cout << line << "\n";
}

hgg::HeteroGraph random_graph(hgg::Rng& rng, std::size_t n_cells, std::size_t n_tissues,
                              std::size_t dim, std::size_t k, int label) {
  hgg::EntitySet cells{.kind = hgg::EntityKind::Cell};
  cells.n = n_cells;
  cells.dim = dim;
  cells.positions.resize(2 * n_cells);
  cells.features.resize(n_cells * dim);
  for (double& v : cells.positions) v = rng.uniform();
  for (double& v : cells.features) v = rng.uniform(-1.0, 1.0);
  hgg::EntitySet tissues{.kind = hgg::EntityKind::Tissue};
  tissues.n = n_tissues;
  tissues.dim = dim;
  tissues.positions.resize(2 * n_tissues);
  tissues.features.resize(n_tissues * dim);
  for (double& v : tissues.positions) v = rng.uniform();
  for (double& v : tissues.features) v = rng.uniform(-1.0, 1.0);
  return hgg::build_hetero_graph(std::move(cells), std::move(tissues), std::nullopt,
                                 hgg::EdgeMode::FeatureKnn, k, label);
}

std::vector<hgg::HeteroGraph> graphs_for_split(const std::vector<hgg::GraphSample>& samples,
                                               hgg::Split split) {
  std::vector<hgg::HeteroGraph> out;
  for (const auto& s : samples)
    if (s.meta.split == split) out.push_back(s.graph);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"heterogeneous cell/tissue graph networks: synthesize, build, train, evaluate"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a planted-signal entity dataset");
  std::string synth_out = "dataset";
  hgg::SynthSpec spec;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--classes", spec.n_classes, "number of classes");
  synth->add_option("--per-class", spec.graphs_per_class, "graphs per class");
  synth->add_option("--min-cells", spec.min_cells, "minimum cells per graph");
  synth->add_option("--max-cells", spec.max_cells, "maximum cells per graph");
  synth->add_option("--min-tissues", spec.min_tissues, "minimum tissues per graph");
  synth->add_option("--max-tissues", spec.max_tissues, "maximum tissues per graph");
  synth->add_option("--dim", spec.feature_dim, "feature dimension");
  synth->add_option("--sep", spec.class_separation, "class separation");
  synth->add_option("--noise", spec.noise, "feature noise scale");
  std::uint64_t synth_seed = 0;
  synth->add_option("--seed", synth_seed, "random seed");

  // build-graph
  auto* build = app.add_subcommand("build-graph", "build heterogeneous graphs from entity tables");
  std::string build_in = "dataset", build_out = "graphs", build_mode = "feat-knn";
  std::size_t build_k = 5;
  build->add_option("--in", build_in, "entity dataset directory");
  build->add_option("--out", build_out, "output graph directory");
  build->add_option("--edge-mode", build_mode, "feat-knn | spatial-knn");
  build->add_option("--k", build_k, "neighbors per node");

  // train
  auto* tr = app.add_subcommand("train", "train a model variant");
  std::string tr_data = "graphs", tr_variant = "hg-transformer";
  std::string tr_model = "model.hgc", tr_metrics = "metrics.csv", tr_wd_mode = "decoupled";
  hgg::TrainConfig tc;
  std::uint64_t tr_seed = 0;
  tr->add_option("--data", tr_data, "graph dataset directory");
  tr->add_option("--variant", tr_variant, "hg | hg-awa | hg-crossvit | hg-transformer");
  tr->add_option("--epochs", tc.epochs, "training epochs");
  tr->add_option("--lr", tc.lr, "learning rate");
  tr->add_option("--wd", tc.weight_decay, "weight decay");
  tr->add_option("--wd-mode", tr_wd_mode, "decoupled | coupled");
  tr->add_option("--batch", tc.batch_size, "batch size");
  tr->add_option("--k", tc.k, "edge-formation k recorded with the run");
  tr->add_option("--seed", tr_seed, "random seed");
  tr->add_option("--out", tr_model, "checkpoint output path");
  tr->add_option("--metrics", tr_metrics, "metrics log output path");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_data = "graphs", ev_model = "model.hgc", ev_split = "test";
  std::size_t ev_threads = 1;
  ev->add_option("--data", ev_data, "graph dataset directory");
  ev->add_option("--model", ev_model, "checkpoint path");
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--threads", ev_threads, "parallel forward passes");

  // params
  auto* pa = app.add_subcommand("params", "count trainable parameters of a variant");
  std::string pa_variant = "hg-transformer";
  std::size_t pa_classes = 6;
  pa->add_option("--variant", pa_variant, "model variant");
  pa->add_option("--classes", pa_classes, "number of classes");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "check analytic gradients against finite differences");
  std::string gc_variant = "hg-transformer";
  std::size_t gc_cells = 8, gc_tissues = 3, gc_entries = 12, gc_classes = 6;
  double gc_eps = 1e-5;
  std::uint64_t gc_seed = 0;
  gc->add_option("--variant", gc_variant, "model variant");
  gc->add_option("--cells", gc_cells, "cells in the probe graph");
  gc->add_option("--tissues", gc_tissues, "tissues in the probe graph");
  gc->add_option("--classes", gc_classes, "number of classes");
  gc->add_option("--entries", gc_entries, "probed entries per parameter tensor (0 = all)");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--seed", gc_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (synth->parsed()) {
    bool env = false;
    spec.seed = resolve_seed(synth_seed, env);
    echo_config("synth", {{"out", synth_out},
                          {"classes", std::to_string(spec.n_classes)},
                          {"per_class", std::to_string(spec.graphs_per_class)},
                          {"cells", std::to_string(spec.min_cells) + ":" + std::to_string(spec.max_cells)},
                          {"tissues", std::to_string(spec.min_tissues) + ":" + std::to_string(spec.max_tissues)},
                          {"dim", std::to_string(spec.feature_dim)},
                          {"sep", fmt6(spec.class_separation)},
                          {"noise", fmt6(spec.noise)},
                          {"seed", std::to_string(spec.seed) + (env ? " (HGG_SEED)" : "")}});
    hgg::SynthDataset ds = hgg::synth_generate(spec);
    hgg::save_dataset(synth_out, ds);
    std::size_t train = 0, val = 0, test = 0;
    for (const auto& s : ds.samples) {
      if (s.split == hgg::Split::Train) ++train;
      if (s.split == hgg::Split::Val) ++val;
      if (s.split == hgg::Split::Test) ++test;
    }
    std::cout << "wrote " << ds.samples.size() << " samples to " << synth_out << " (train "
              << train << ", val " << val << ", test " << test << ")\n";
    std::cout << "RESULT samples=" << ds.samples.size() << "\n";
    return 0;
  }

  if (build->parsed()) {
    const hgg::EdgeMode mode = edge_mode_or_die(build_mode);
    echo_config("build-graph", {{"in", build_in},
                                {"out", build_out},
                                {"edge_mode", build_mode},
                                {"k", std::to_string(build_k)}});
    auto samples = hgg::load_entity_dir(build_in);
    std::vector<hgg::GraphSample> graphs;
    graphs.reserve(samples.size());
    for (auto& s : samples) {
      hgg::GraphSample g;
      g.meta = s.meta;
      g.graph = hgg::build_hetero_graph(std::move(s.cells), std::move(s.tissues), s.assignment,
                                        mode, build_k, s.meta.label);
      graphs.push_back(std::move(g));
    }
    hgg::save_graph_dir(build_out, graphs);
    std::cout << "wrote " << graphs.size() << " graphs to " << build_out << "\n";
    std::cout << "RESULT graphs=" << graphs.size() << "\n";
    return 0;
  }

  if (tr->parsed()) {
    bool env = false;
    tc.seed = resolve_seed(tr_seed, env);
    tc.variant = variant_or_die(tr_variant);
    if (tr_wd_mode == "decoupled")
      tc.wd_mode = hgg::WeightDecayMode::Decoupled;
    else if (tr_wd_mode == "coupled")
      tc.wd_mode = hgg::WeightDecayMode::CoupledL2;
    else
      throw std::runtime_error("unknown --wd-mode '" + tr_wd_mode + "'");
    echo_config("train", {{"data", tr_data},
                          {"variant", tr_variant},
                          {"epochs", std::to_string(tc.epochs)},
                          {"lr", fmt(tc.lr)},
                          {"wd", fmt(tc.weight_decay)},
                          {"wd_mode", tr_wd_mode},
                          {"batch", std::to_string(tc.batch_size)},
                          {"k", std::to_string(tc.k)},
                          {"seed", std::to_string(tc.seed) + (env ? " (HGG_SEED)" : "")},
                          {"out", tr_model},
                          {"metrics", tr_metrics}});
    auto samples = hgg::load_graph_dir(tr_data);
    int max_label = 0;
    for (const auto& s : samples) max_label = std::max(max_label, s.meta.label);
    tc.n_classes = static_cast<std::size_t>(max_label) + 1;
    auto train_set = graphs_for_split(samples, hgg::Split::Train);
    auto val_set = graphs_for_split(samples, hgg::Split::Val);
    auto progress = [&](const hgg::EpochRecord& r) {
      std::cout << "epoch " << r.epoch << "/" << tc.epochs << ": train_loss="
                << fmt6(r.train_loss) << " val_loss=" << fmt6(r.val_loss)
                << " val_wf=" << fmt6(r.val.weighted_f) << std::endl;
    };
    hgg::TrainResult result = hgg::train(train_set, val_set, tc, progress);
    {
      std::string log = hgg::format_metrics_log(result.log, tc.n_classes);
      FILE* f = std::fopen(tr_metrics.c_str(), "wb");
      if (!f) throw std::runtime_error(tr_metrics + ": cannot open for writing");
      std::fwrite(log.data(), 1, log.size(), f);
      std::fclose(f);
    }
    hgg::save_checkpoint(tr_model, result.model);
    std::cout << "best epoch " << result.best_epoch << ", checkpoint " << tr_model
              << ", metrics " << tr_metrics << "\n";
    std::cout << "RESULT best_epoch=" << result.best_epoch
              << " val_weighted_f=" << fmt(result.best_val_weighted_f) << "\n";
    return 0;
  }

  if (ev->parsed()) {
    auto split = hgg::parse_split(ev_split);
    if (!split) throw std::runtime_error("unknown split '" + ev_split + "'");
    echo_config("eval", {{"data", ev_data},
                         {"model", ev_model},
                         {"split", ev_split},
                         {"threads", std::to_string(ev_threads)}});
    hgg::Model model = hgg::load_checkpoint(ev_model);
    auto samples = hgg::load_graph_dir(ev_data);
    auto graphs = graphs_for_split(samples, *split);
    if (graphs.empty()) throw std::runtime_error("no graphs in split '" + ev_split + "'");
    hgg::EvalResult r = hgg::evaluate(model, graphs, 32, ev_threads);
    for (std::size_t c = 0; c < r.metrics.f_score.size(); ++c)
      std::cout << "class " << c << ": f=" << fmt6(r.metrics.f_score[c])
                << " support=" << r.metrics.support[c] << "\n";
    std::cout << "RESULT split=" << ev_split << " n=" << graphs.size()
              << " weighted_f=" << fmt(r.metrics.weighted_f) << " loss=" << fmt(r.mean_loss)
              << "\n";
    return 0;
  }

  if (pa->parsed()) {
    hgg::ModelConfig mc;
    mc.variant = variant_or_die(pa_variant);
    mc.n_classes = pa_classes;
    echo_config("params", {{"variant", pa_variant}, {"classes", std::to_string(pa_classes)}});
    hgg::Model model = hgg::make_model(mc, 0);
    for (const auto& [name, t] : model.named_params())
      std::cout << name << ": " << t.numel() << "\n";
    std::cout << "RESULT params=" << hgg::count_params(model) << "\n";
    return 0;
  }

  if (gc->parsed()) {
    bool env = false;
    gc_seed = resolve_seed(gc_seed, env);
    hgg::ModelConfig mc;
    mc.variant = variant_or_die(gc_variant);
    mc.n_classes = gc_classes;
    echo_config("gradcheck", {{"variant", gc_variant},
                              {"cells", std::to_string(gc_cells)},
                              {"tissues", std::to_string(gc_tissues)},
                              {"classes", std::to_string(gc_classes)},
                              {"entries", std::to_string(gc_entries)},
                              {"eps", fmt(gc_eps)},
                              {"seed", std::to_string(gc_seed) + (env ? " (HGG_SEED)" : "")}});
    hgg::Rng rng(gc_seed);
    hgg::HeteroGraph g = random_graph(rng, gc_cells, gc_tissues, 512, 5, 0);
    hgg::Model model = hgg::make_model(mc, gc_seed + 1);
    auto loss_fn = [&](hgg::Tape& tape) {
      return hgg::cross_entropy(tape, hgg::forward_logits(tape, model, g), 0);
    };
    hgg::FdReport report = hgg::finite_diff_check(loss_fn, model.params(), gc_eps, gc_entries);
    std::cout << "checked " << report.entries_checked << " entries, max relative error "
              << fmt(report.max_rel_err) << " at " << report.worst_param << "["
              << report.worst_index << "]\n";
    std::cout << "RESULT max_rel_err=" << fmt(report.max_rel_err) << "\n";
    return report.max_rel_err < 1e-4 ? 0 : 1;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
