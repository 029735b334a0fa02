// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "deepbound/autodiff.hpp"
#include "deepbound/classify.hpp"
#include "deepbound/dataset.hpp"
#include "deepbound/error.hpp"
#include "deepbound/model.hpp"
#include "deepbound/rng.hpp"

namespace deepbound {

struct TrainOptions {
  std::size_t epochs = 30;
  double lr = 0.02;
  double momentum = 0.9;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  double decay_at = 0.75;  // fraction of epochs after which the rate drops tenfold

};

struct TrainResult {
  Model model;
  double held_out_accuracy = 0.0;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// Minibatch SGD with momentum on cross-entropy. Single-threaded and deterministic in the seed.
/// Reports accuracy on the held-out fifth of split_80_20().
inline TrainResult train(const ModelSpec& spec, const LabeledDataset& data, const TrainOptions& opt,
                         const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.size() == 0) throw UsageError("training data is empty");
  if (opt.batch == 0) throw UsageError("batch size must be positive");
  Model model = Model::initialized(spec, derive_seed(opt.seed, 0x1417));
  const Split split = split_80_20(data);

  Parameters velocity;
  Parameters batch_grad;
  for (const auto& [name, t] : model.params) {
    velocity.emplace(name, Tensor(t.shape()));
    batch_grad.emplace(name, Tensor(t.shape()));
  }

  TrainResult result{model, 0.0, {}};
  std::vector<std::size_t> order = split.train;
  Tape tape;
  std::vector<float> seed_grad(spec.classes);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng(derive_seed(opt.seed, 0x5eed0000 + epoch));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    const double lr = epoch >= opt.decay_at * static_cast<double>(opt.epochs) ? 0.1 * opt.lr : opt.lr;
    for (std::size_t start = 0; start < order.size(); start += opt.batch) {
      const std::size_t end = std::min(order.size(), start + opt.batch);
      for (auto& [_, g] : batch_grad) g.fill(0.0f);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        try {
          forward(model.graph, model.params, data.images[i], tape);
        } catch (const NumericalError& e) {
          throw TrainingError(epoch, e.what());
        }
        const double loss = cross_entropy(tape.logits().values(), data.labels[i], seed_grad);
        if (!std::isfinite(loss)) throw TrainingError(epoch, "non-finite loss");
        loss_sum += loss;
        const Seed seed{model.graph.logits(), seed_grad};
        backward(tape, {&seed, 1}, GradientTargets::input_and_parameters);
        for (auto& [name, g] : batch_grad) {
          const Tensor& pg = tape.parameter_gradient(name);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += pg[j];
        }
      }
      const float scale = 1.0f / static_cast<float>(end - start);
      for (auto& [name, p] : model.params) {
        Tensor& v = velocity.at(name);
        const Tensor& g = batch_grad.at(name);
        for (std::size_t j = 0; j < p.size(); ++j) {
          v[j] = static_cast<float>(opt.momentum) * v[j] + g[j] * scale;
          p[j] -= static_cast<float>(lr) * v[j];
        }
        if (!p.all_finite()) throw TrainingError(epoch, "non-finite parameter " + name);
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) throw TrainingError(epoch, "non-finite loss");
    result.epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  result.held_out_accuracy = accuracy(model, subset(data, split.held_out));
  result.model = std::move(model);
  return result;
}

}  // namespace deepbound
