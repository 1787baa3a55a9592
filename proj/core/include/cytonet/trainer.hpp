#pragma once

#include <limits>
#include <numeric>

#include "cytonet/checkpoint.hpp"
#include "cytonet/dataset.hpp"
#include "cytonet/metrics.hpp"
#include "cytonet/models.hpp"
#include "cytonet/optimizer.hpp"

namespace cytonet {

struct TrainConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 7;
  bool early_stop = false;
  int early_stop_patience = 5;

  void validate() const {
    if (!(learning_rate >= 0)) throw ConfigError("train: learning rate must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_accuracy = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;  // -1 when no epoch ran
  double best_val_accuracy = 0;
  std::vector<std::uint8_t> best_checkpoint;
};

/// Eval-mode predictions over the given sample indices, batched.
template <typename T>
std::vector<int> predict_labels(NetworkGraph<T>& model, const Dataset& ds,
                                const std::vector<int>& indices, int batch_size = 16) {
  std::vector<int> preds;
  preds.reserve(indices.size());
  for (std::size_t off = 0; off < indices.size(); off += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), indices.size() - off);
    const Tensor<float> raw = assemble_batch(ds, indices, off, count, nullptr);
    Tensor<T> batch = raw.template cast<T>();
    Tape<T> tape(false);
    tape.set_params_require_grad(false);
    auto in = tape.leaf(std::move(batch), false);
    auto out = model.forward(tape, in, Mode::eval);
    const auto p = argmax_rows(tape.value(out));
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return preds;
}

template <typename T>
MetricsReport evaluate_model(NetworkGraph<T>& model, const Dataset& ds,
                             const std::vector<int>& indices, int batch_size = 16) {
  if (indices.empty()) throw Error("evaluate: no samples");
  const std::vector<int> preds = predict_labels(model, ds, indices, batch_size);
  std::vector<int> truth;
  truth.reserve(indices.size());
  for (int i : indices) truth.push_back(ds.samples[static_cast<std::size_t>(i)].label);
  return compute_metrics(truth, preds, model.config().num_classes);
}

/// Epochs x batches of forward/backward/adam. Batch order reshuffles per
/// epoch from (seed, epoch); the best-validation-accuracy checkpoint is
/// retained (ties keep the earlier epoch). Fully deterministic per seed.
template <typename T>
TrainResult train_model(NetworkGraph<T>& model, const Dataset& ds, const DatasetSplit& split,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (split.train.empty()) throw ConfigError("train: empty train split");
  if (cfg.epochs > 0 && split.validation.empty()) {
    throw ConfigError("train: empty validation split");
  }

  std::vector<Param<T>*> registry;
  {
    ModelVisitor<T> v;
    v.param = [&registry](const std::string&, Param<T>& p) { registry.push_back(&p); };
    v.buffer = [](const std::string&, Tensor<T>&) {};
    v.counter = [](const std::string&, std::int64_t&) {};
    model.visit(v);
  }
  Adam<T> adam(registry, AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps});

  TrainResult result;
  result.best_val_accuracy = -1;
  std::vector<int> order = split.train;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch) + 0x5157));
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count =
          std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - off);
      std::vector<int> labels;
      const Tensor<float> raw = assemble_batch(ds, order, off, count, &labels);
      Tensor<T> batch = raw.template cast<T>();

      Tape<T> tape(true);
      tape.set_params_require_grad(true);
      auto in = tape.leaf(std::move(batch), false);
      typename Tape<T>::Var loss;
      try {
        auto logits = model.forward(tape, in, Mode::train);
        loss = ops::cross_entropy_with_logits(tape, logits, labels);
      } catch (const NumericError& e) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + ": " + e.what());
      }
      const double loss_value = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      loss_sum += loss_value;
      batches += 1;
      tape.backward(loss);

      std::vector<const Tensor<T>*> grads;
      grads.reserve(registry.size());
      for (Param<T>* p : registry) {
        grads.push_back(tape.has_grad(p->bound) ? &tape.grad(p->bound) : nullptr);
      }
      adam.step(grads);
    }

    const MetricsReport val = evaluate_model(model, ds, split.validation, cfg.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.val_accuracy = val.accuracy;
    result.history.push_back(rec);

    if (val.accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = val.accuracy;
      result.best_epoch = epoch;
      result.best_checkpoint = checkpoint_save(model);
    }
    if (cfg.early_stop && epoch - result.best_epoch >= cfg.early_stop_patience) {
      break;
    }
  }

  if (result.best_checkpoint.empty()) {
    // epochs == 0: retain the initial weights
    result.best_checkpoint = checkpoint_save(model);
    result.best_val_accuracy = 0;
  }
  return result;
}

}  // namespace cytonet
