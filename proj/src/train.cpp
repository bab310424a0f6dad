#include "hgg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "hgg/rng.hpp"

namespace hgg {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void check_labeled(const std::vector<HeteroGraph>& graphs, std::size_t n_classes,
                   const char* what) {
  if (graphs.empty()) throw std::invalid_argument(std::string(what) + " set is empty");
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (!graphs[i].label)
      throw std::invalid_argument(std::string(what) + " graph " + std::to_string(i) +
                                  " has no label");
    if (*graphs[i].label < 0 || static_cast<std::size_t>(*graphs[i].label) >= n_classes)
      throw std::invalid_argument(std::string(what) + " graph " + std::to_string(i) +
                                  " has label " + std::to_string(*graphs[i].label) +
                                  " outside " + std::to_string(n_classes) + " classes");
  }
}

}  // namespace

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1)
    throw std::invalid_argument("cross_entropy: logits must be rank 1, got rank " +
                                std::to_string(logits.rank()));
  if (label >= logits.numel())
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(logits.numel()) +
                                " classes");
  double mx = logits.value()[0];
  for (double v : logits.value()) mx = std::max(mx, v);
  Tensor shifted = tape.affine(logits, 1.0, -mx);
  Tensor lse = tape.affine(tape.log(tape.sum_all(tape.exp(shifted))), 1.0, mx);
  return tape.sub(lse, tape.pick(logits, label));
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Tensor> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(const GradTable& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    std::vector<double>& theta = params_[pi].mutable_value();
    std::vector<double> g = grads.get(params_[pi]);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw std::runtime_error(
            "adam_step: non-finite gradient for " +
            (params_[pi].name().empty() ? std::string("<unnamed>") : params_[pi].name()) + "[" +
            std::to_string(i) + "]");
    std::vector<double>& m = m_[pi];
    std::vector<double>& v = v_[pi];
    for (std::size_t i = 0; i < g.size(); ++i) {
      double gi = g[i];
      if (cfg_.wd_mode == WeightDecayMode::CoupledL2) gi += cfg_.weight_decay * theta[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      double delta = cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      if (cfg_.wd_mode == WeightDecayMode::Decoupled) delta += cfg_.lr * cfg_.weight_decay * theta[i];
      theta[i] -= delta;
    }
  }
}

// ---------------------------------------------------------------------------
// metrics

Metrics weighted_f_score(const std::vector<std::size_t>& preds,
                         const std::vector<std::size_t>& labels, std::size_t n_classes) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("weighted_f_score: need equal-length non-empty inputs, got " +
                                std::to_string(preds.size()) + " predictions and " +
                                std::to_string(labels.size()) + " labels");
  Metrics m;
  m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] >= n_classes || preds[i] >= n_classes)
      throw std::invalid_argument("weighted_f_score: class index out of range at entry " +
                                  std::to_string(i));
    m.confusion[labels[i]][preds[i]] += 1;
  }
  m.f_score.assign(n_classes, 0.0);
  m.support.assign(n_classes, 0);
  std::size_t total = 0;
  double weighted_sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t tp = m.confusion[c][c];
    std::size_t fn = 0, fp = 0;
    for (std::size_t o = 0; o < n_classes; ++o) {
      if (o != c) {
        fn += m.confusion[c][o];
        fp += m.confusion[o][c];
      }
    }
    m.support[c] = tp + fn;
    const std::size_t denom = 2 * tp + fp + fn;
    m.f_score[c] = denom == 0 ? 0.0 : (2.0 * static_cast<double>(tp)) / static_cast<double>(denom);
    // explicit fma pins one rounding; plain a*b+c contracts differently
    // between translation units under -ffp-contract=fast
    weighted_sum = std::fma(static_cast<double>(m.support[c]), m.f_score[c], weighted_sum);
    total += m.support[c];
  }
  m.weighted_f = weighted_sum / static_cast<double>(total);
  return m;
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

struct EvalAccum {
  double loss_sum = 0.0;
  std::vector<std::size_t> preds;
  std::vector<std::size_t> labels;
};

void eval_range(const Model& m, const std::vector<HeteroGraph>& graphs, std::size_t begin,
                std::size_t end, std::size_t batch_size, EvalAccum& acc) {
  for (std::size_t b = begin; b < end; b += batch_size) {
    const std::size_t hi = std::min(end, b + batch_size);
    std::vector<HeteroGraph> chunk(graphs.begin() + b, graphs.begin() + hi);
    GraphBatch batch = make_batch(chunk);
    Tape tape;
    std::vector<Tensor> logits = forward_logits(tape, m, batch);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const std::size_t label = static_cast<std::size_t>(batch.labels[i]);
      acc.loss_sum += cross_entropy(tape, logits[i], label).item();
      acc.preds.push_back(argmax(logits[i].value()));
      acc.labels.push_back(label);
    }
  }
}

}  // namespace

EvalResult evaluate(const Model& m, const std::vector<HeteroGraph>& graphs,
                    std::size_t batch_size, std::size_t threads) {
  check_labeled(graphs, m.config.n_classes, "evaluation");
  if (batch_size == 0) batch_size = 1;
  EvalResult out;
  if (threads <= 1) {
    EvalAccum acc;
    eval_range(m, graphs, 0, graphs.size(), batch_size, acc);
    out.mean_loss = acc.loss_sum / static_cast<double>(graphs.size());
    out.predictions = acc.preds;
    out.metrics = weighted_f_score(acc.preds, acc.labels, m.config.n_classes);
    return out;
  }
  // forwards over disjoint ranges are independent; results are stitched back
  // in range order so threading never changes the output
  const std::size_t n_threads = std::min<std::size_t>(threads, graphs.size());
  std::vector<EvalAccum> accs(n_threads);
  std::vector<std::thread> pool;
  const std::size_t per = (graphs.size() + n_threads - 1) / n_threads;
  for (std::size_t t = 0; t < n_threads; ++t) {
    const std::size_t b = t * per, e = std::min(graphs.size(), b + per);
    if (b >= e) break;
    pool.emplace_back(
        [&m, &graphs, b, e, batch_size, &accs, t] { eval_range(m, graphs, b, e, batch_size, accs[t]); });
  }
  for (auto& th : pool) th.join();
  std::vector<std::size_t> labels;
  double loss_sum = 0.0;
  for (const EvalAccum& a : accs) {
    loss_sum += a.loss_sum;
    out.predictions.insert(out.predictions.end(), a.preds.begin(), a.preds.end());
    labels.insert(labels.end(), a.labels.begin(), a.labels.end());
  }
  out.mean_loss = loss_sum / static_cast<double>(graphs.size());
  out.metrics = weighted_f_score(out.predictions, labels, m.config.n_classes);
  return out;
}

// ---------------------------------------------------------------------------
// training

TrainResult train(const std::vector<HeteroGraph>& train_graphs,
                  const std::vector<HeteroGraph>& val_graphs, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  check_labeled(train_graphs, cfg.n_classes, "training");
  check_labeled(val_graphs, cfg.n_classes, "validation");
  ModelConfig mc;
  mc.variant = cfg.variant;
  mc.n_classes = cfg.n_classes;
  mc.in_dim = train_graphs[0].cells.dim;
  mc.aggregation = cfg.aggregation;
  Model model = make_model(mc, cfg.seed);
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  ac.wd_mode = cfg.wd_mode;
  Adam adam(model.params(), ac);
  Rng shuffle_rng(cfg.seed ^ 0x5deece66dULL);

  TrainResult result;
  result.model = clone_model(model);
  result.best_val_weighted_f = -1.0;

  std::vector<std::size_t> order(train_graphs.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<std::size_t> train_preds, train_labels;
    std::size_t step_in_epoch = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      ++step_in_epoch;
      const std::size_t hi = std::min(order.size(), b + cfg.batch_size);
      std::vector<HeteroGraph> chunk;
      chunk.reserve(hi - b);
      for (std::size_t i = b; i < hi; ++i) chunk.push_back(train_graphs[order[i]]);
      GraphBatch batch = make_batch(chunk);
      Tape tape;
      std::vector<Tensor> logits = forward_logits(tape, model, batch);
      std::vector<Tensor> losses;
      losses.reserve(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) {
        for (double v : logits[i].value())
          if (!std::isfinite(v))
            throw std::runtime_error("training diverged: non-finite logits at epoch " +
                                     std::to_string(epoch) + ", step " +
                                     std::to_string(step_in_epoch));
        losses.push_back(
            cross_entropy(tape, logits[i], static_cast<std::size_t>(batch.labels[i])));
        train_preds.push_back(argmax(logits[i].value()));
        train_labels.push_back(static_cast<std::size_t>(batch.labels[i]));
      }
      Tensor batch_loss = tape.mean_all(tape.concat(losses, 0));
      if (!std::isfinite(batch_loss.item()))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", step " +
                                 std::to_string(step_in_epoch));
      loss_sum += batch_loss.item() * static_cast<double>(hi - b);
      GradTable grads = tape.backward(batch_loss);
      adam.step(grads);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train = weighted_f_score(train_preds, train_labels, cfg.n_classes);
    EvalResult val = evaluate(model, val_graphs, cfg.batch_size);
    rec.val_loss = val.mean_loss;
    rec.val = val.metrics;
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (val.metrics.weighted_f > result.best_val_weighted_f) {
      result.best_val_weighted_f = val.metrics.weighted_f;
      result.best_epoch = epoch;
      result.model = clone_model(model);
    }
  }
  return result;
}

std::size_t count_params(const Model& m) {
  std::size_t total = 0;
  for (const Tensor& p : m.params()) total += p.numel();
  return total;
}

std::string format_metrics_log(const std::vector<EpochRecord>& log, std::size_t n_classes) {
  std::string out = "epoch,split,loss,weighted_f";
  for (std::size_t c = 0; c < n_classes; ++c) out += ",f_" + std::to_string(c);
  out += "\n";
  auto line = [&](std::size_t epoch, const char* split, double loss, const Metrics& m) {
    out += std::to_string(epoch);
    out += ",";
    out += split;
    out += "," + fmt_double(loss) + "," + fmt_double(m.weighted_f);
    for (std::size_t c = 0; c < n_classes; ++c) out += "," + fmt_double(m.f_score[c]);
    out += "\n";
  };
  for (const EpochRecord& r : log) {
    line(r.epoch, "train", r.train_loss, r.train);
    line(r.epoch, "val", r.val_loss, r.val);
  }
  return out;
}

}  // namespace hgg
