#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hgg/graph.hpp"
#include "hgg/layers.hpp"
#include "hgg/tensor.hpp"

namespace hgg {

/// -log softmax(logits)[label], computed through a max-shifted log-sum-exp so
/// large logits cannot overflow.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::size_t label);

enum class WeightDecayMode { Decoupled, CoupledL2 };

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  WeightDecayMode wd_mode = WeightDecayMode::Decoupled;
};

/// Adam with bias correction. Weight decay defaults to the decoupled form
/// (lr * wd * theta subtracted alongside the moment step); CoupledL2 folds
/// wd * theta into the gradient instead.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const AdamConfig& cfg);

  /// One update from a gradient table; parameters absent from the table are
  /// treated as zero-gradient. Rejects non-finite gradients by parameter name.
  void step(const GradTable& grads);

  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

struct Metrics {
  std::vector<std::vector<std::size_t>> confusion;  // [label][prediction]
  std::vector<double> f_score;                      // per class
  std::vector<std::size_t> support;                 // per class
  double weighted_f = 0.0;
};

/// Per-class F1 from the confusion matrix (F = 0 where precision + recall is
/// zero), weighted by true-label support.
Metrics weighted_f_score(const std::vector<std::size_t>& preds,
                         const std::vector<std::size_t>& labels, std::size_t n_classes);

struct TrainConfig {
  Variant variant = Variant::HG_TRANSFORMER;
  std::size_t n_classes = 2;
  double lr = 1e-4;
  double weight_decay = 5e-4;
  WeightDecayMode wd_mode = WeightDecayMode::Decoupled;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::size_t k = 5;  // edge-formation parameter, recorded with the run
  Aggregation aggregation = Aggregation::Sum;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  Metrics train;  // from the pre-update forward passes of the epoch
  double val_loss = 0.0;
  Metrics val;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
  Model model;  // best-validation checkpoint
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_weighted_f = 0.0;
};

struct EvalResult {
  double mean_loss = 0.0;
  Metrics metrics;
  std::vector<std::size_t> predictions;
};

EvalResult evaluate(const Model& m, const std::vector<HeteroGraph>& graphs,
                    std::size_t batch_size = 32, std::size_t threads = 1);

/// Mini-batch training, deterministic for a fixed seed: seeded init, seeded
/// shuffles, single-threaded updates. Keeps the checkpoint with the best
/// validation weighted F. `on_epoch`, when given, sees each record as it is
/// produced.
TrainResult train(const std::vector<HeteroGraph>& train_graphs,
                  const std::vector<HeteroGraph>& val_graphs, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = nullptr);

std::size_t count_params(const Model& m);

/// Line-delimited tabular log: epoch,split,loss,weighted_f,f_0..f_{k-1}.
std::string format_metrics_log(const std::vector<EpochRecord>& log, std::size_t n_classes);

}  // namespace hgg
