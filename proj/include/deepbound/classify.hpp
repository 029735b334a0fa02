// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "deepbound/autodiff.hpp"
#include "deepbound/dataset.hpp"
#include "deepbound/model.hpp"
#include "deepbound/parallel.hpp"

namespace deepbound {

inline std::vector<double> softmax(std::span<const float> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= z;
  return p;
}

/// Cross-entropy of the softmax against `label`; writes dLoss/dLogits into `grad` if given.
inline double cross_entropy(std::span<const float> logits, int label, std::span<float> grad = {}) {
  const std::vector<double> p = softmax(logits);
  const auto t = static_cast<std::size_t>(label);
  if (!grad.empty()) {
    for (std::size_t i = 0; i < p.size(); ++i) grad[i] = static_cast<float>(p[i] - (i == t ? 1.0 : 0.0));
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float v : logits) z += std::exp(v - m);
  return std::log(z) + m - logits[t];
}

/// Lowest index wins ties.
inline int argmax(std::span<const float> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline Tensor predict_logits(const Model& model, const Tensor& image) {
  return forward(model.graph, model.params, image).logits();
}

inline int predict(const Model& model, const Tensor& image) {
  return argmax(predict_logits(model, image).values());
}

inline double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  std::vector<int> hit(data.size(), 0);
  parallel_for(data.size(), [&](std::size_t i) { hit[i] = predict(model, data.images[i]) == data.labels[i]; });
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(data.size());
}

}  // namespace deepbound
