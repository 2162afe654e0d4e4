#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "fattack/anchornet/model.hpp"
#include "fattack/error.hpp"
#include "fattack/gradtape/ops.hpp"
#include "fattack/rng.hpp"
#include "fattack/synthdata/scene.hpp"

namespace fattack::anchornet {

struct TrainOptions {
  int epochs = 50;
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  DetectorModel model;
  std::vector<double> loss_trace;  // mean per-anchor cross-entropy per epoch
};

using EpochCallback = std::function<void(int epoch, double loss, const DetectorModel& model)>;

/// Mean per-anchor cross-entropy of one image and its gradient with respect
/// to every parameter (canonical order), accumulated into `grads`.
inline double accumulate_gradients(const DetectorModel& model, const synthdata::Sample& sample,
                                   std::vector<Tensor>& grads) {
  Tape tape;
  const auto g = record_forward(tape, model, tape.constant(sample.image), true);
  const auto labels = sample.label.classes();
  const Var nll = gradtape::nll_rows(tape, g.probs, labels);
  const Var loss = gradtape::scale(tape, nll, 1.0 / static_cast<double>(labels.size()));
  tape.backward(loss);
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    const Tensor gi = tape.grad(g.params[i]);
    for (std::size_t j = 0; j < gi.size(); ++j) grads[i][j] += gi[j];
  }
  return tape.value(loss).item();
}

/// Mean per-anchor cross-entropy over a dataset, without gradients.
inline double mean_loss(const DetectorModel& model, const synthdata::Dataset& data) {
  if (data.samples.empty()) throw UsageError("cannot compute the loss of an empty dataset");
  double total = 0.0;
  for (const auto& s : data.samples) {
    Tape tape;
    const auto g = record_forward(tape, model, tape.constant(s.image));
    const auto labels = s.label.classes();
    total += tape.value(gradtape::nll_rows(tape, g.probs, labels)).item() / static_cast<double>(labels.size());
  }
  return total / static_cast<double>(data.samples.size());
}

/// Minibatch gradient descent with a fixed learning rate and no optimizer
/// state. The visiting order of each epoch comes from the "order" stream of
/// the seed, so identical inputs give bit-identical weights.
inline TrainResult train(const DetectorModel& initial, const synthdata::Dataset& data, const TrainOptions& opt,
                         const EpochCallback& on_epoch = {}) {
  if (data.samples.empty()) throw UsageError("training dataset is empty");
  if (opt.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (opt.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(opt.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  const auto& cfg = initial.config();
  if (data.config.num_classes != cfg.num_classes || data.config.num_anchors() != cfg.num_anchors()) {
    throw ConfigError("dataset labels do not match detector config");
  }

  std::vector<NamedTensor> params = initial.parameters();
  TrainResult result{initial, {}};
  std::vector<std::size_t> order(data.samples.size());

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(opt.seed, "order", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)))]);
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const DetectorModel current(cfg, params);
      std::vector<Tensor> grads;
      for (const auto& p : params) grads.emplace_back(p.value->shape(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        epoch_loss += accumulate_gradients(current, data.samples[order[i]], grads);
      }
      const double step = opt.learning_rate / static_cast<double>(end - start);
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor w = *params[i].value;
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= step * grads[i][j];
        params[i].value = std::make_shared<const Tensor>(std::move(w));
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("training diverged (non-finite loss) at epoch " + std::to_string(epoch + 1), epoch + 1);
    }
    result.loss_trace.push_back(epoch_loss);
    result.model = DetectorModel(cfg, params);
    if (on_epoch) on_epoch(epoch + 1, epoch_loss, result.model);
  }
  return result;
}

}  // namespace fattack::anchornet
