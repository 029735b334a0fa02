// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "deepbound/classify.hpp"
#include "deepbound/error.hpp"
#include "deepbound/model.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

/// round(v * (2^bits - 1)) / (2^bits - 1).
inline Tensor squeeze_bit_depth(const Tensor& image, int bits) {
  if (bits < 1 || bits > 8) throw UsageError("bit depth must be in [1, 8]");
  const double levels = std::ldexp(1.0, bits) - 1.0;
  Tensor out(image.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(std::round(static_cast<double>(image[i]) * levels) / levels);
  }
  return out;
}

/// 2x2 sliding median (mean of the two middle values) anchored at the top-left pixel, with
/// reflect padding on the right and bottom edges.
inline Tensor squeeze_median(const Tensor& image, std::size_t window = 2) {
  if (window != 2) throw UsageError("only a 2x2 median is supported");
  if (image.rank() != 3) throw UsageError("median squeeze expects a CxHxW image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  auto reflect = [](std::size_t i, std::size_t n) { return i < n ? i : (n >= 2 ? n - 2 : 0); };
  Tensor out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* p = image.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::array<float, 4> v{p[y * w + x], p[y * w + reflect(x + 1, w)], p[reflect(y + 1, h) * w + x],
                               p[reflect(y + 1, h) * w + reflect(x + 1, w)]};
        std::sort(v.begin(), v.end());
        out[(ch * h + y) * w + x] = 0.5f * (v[1] + v[2]);
      }
    }
  }
  return out;
}

struct Squeezer {
  enum class Kind { bit_depth, median } kind = Kind::bit_depth;
  int parameter = 5;  // bits, or the median window

  Tensor apply(const Tensor& image) const {
    return kind == Kind::bit_depth ? squeeze_bit_depth(image, parameter)
                                   : squeeze_median(image, static_cast<std::size_t>(parameter));
  }

  std::string name() const {
    return kind == Kind::bit_depth ? std::to_string(parameter) + "-bit"
                                   : std::to_string(parameter) + "x" + std::to_string(parameter) + "-median";
  }

  static Squeezer bit_depth(int bits) { return {Kind::bit_depth, bits}; }
  static Squeezer median(int window = 2) { return {Kind::median, window}; }
};

inline std::vector<Squeezer> default_squeezers() { return {Squeezer::bit_depth(5), Squeezer::median(2)}; }

/// Max over squeezers of the L1 distance between softmax outputs on raw and squeezed input.
inline double squeeze_score(const Model& model, const Tensor& x, std::span<const Squeezer> squeezers) {
  if (squeezers.empty()) return 0.0;
  const std::vector<double> raw = softmax(predict_logits(model, x).values());
  double worst = 0.0;
  for (const Squeezer& s : squeezers) {
    const std::vector<double> sq = softmax(predict_logits(model, s.apply(x)).values());
    double l1 = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) l1 += std::abs(raw[i] - sq[i]);
    worst = std::max(worst, l1);
  }
  return worst;
}

/// Nearest-rank 95th percentile of benign scores: at most 5% of them lie strictly above it.
inline double calibrate_threshold(std::vector<double> benign_scores, double percentile = 0.95) {
  if (benign_scores.empty()) throw UsageError("threshold calibration needs benign scores");
  std::sort(benign_scores.begin(), benign_scores.end());
  const auto n = static_cast<double>(benign_scores.size());
  const auto rank = static_cast<std::size_t>(std::ceil(percentile * n));
  return benign_scores[std::clamp<std::size_t>(rank, 1, benign_scores.size()) - 1];
}

/// Flags inputs whose squeeze score exceeds the threshold. No squeezers never flag.
inline bool detect(const Model& model, const Tensor& x, std::span<const Squeezer> squeezers, double threshold) {
  if (squeezers.empty()) return false;
  return squeeze_score(model, x, squeezers) > threshold;
}

}  // namespace deepbound
