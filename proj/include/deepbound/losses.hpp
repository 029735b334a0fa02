// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "deepbound/bounds.hpp"
#include "deepbound/distribution.hpp"
#include "deepbound/error.hpp"
#include "deepbound/graph.hpp"
#include "deepbound/planes.hpp"

namespace deepbound {

struct LossWeights {
  double barrier_k = 1e5;
  double barrier_b = 200.0;
  double linear_k = 1e6;
  double linear_b = 0.95;
  double alpha = 10.0;  // smoothing weight
};

enum class BarrierKind { polynomial, linear };

inline constexpr double max_barrier_ratio = 1.5;

/// k * r^b for one neuron, r the normalized deviation toward whichever endpoint y_adv moves to.
/// Writes dLoss/dy_adv into *grad when given. Ratios above 1.5 raise NumericalError.
inline double poly_barrier_term(double y_adv, double y_nat, double low, double high, double k,
                                double b, double* grad = nullptr) {
  double r = 0.0, dr = 0.0;
  if (y_adv > y_nat) {
    r = (y_adv - y_nat) / (high - y_nat);
    dr = 1.0 / (high - y_nat);
  } else if (y_adv < y_nat) {
    r = (y_nat - y_adv) / (y_nat - low);
    dr = -1.0 / (y_nat - low);
  }
  if (r > max_barrier_ratio) {
    throw NumericalError("barrier ratio " + std::to_string(r) + " exceeds " +
                         std::to_string(max_barrier_ratio));
  }
  if (grad) *grad = r > 0.0 ? k * b * std::pow(r, b - 1.0) * dr : 0.0;
  return r > 0.0 ? k * std::pow(r, b) : 0.0;
}

/// k * (relu(y_adv - (b*high + (1-b)*y_nat)) + relu((b*low + (1-b)*y_nat) - y_adv)).
inline double linear_barrier_term(double y_adv, double y_nat, double low, double high, double k,
                                  double b, double* grad = nullptr) {
  const double up = y_adv - (b * high + (1.0 - b) * y_nat);
  const double down = (b * low + (1.0 - b) * y_nat) - y_adv;
  if (grad) *grad = up > 0.0 ? k : down > 0.0 ? -k : 0.0;
  return k * (std::max(up, 0.0) + std::max(down, 0.0));
}

/// Barrier summed over the plane's active neurons. An inactive side contributes nothing.
inline double barrier_loss(BarrierKind kind, const BoundSpec& bound, std::span<const float> activation,
                           const LossWeights& w, std::span<float> grad = {}) {
  double total = 0.0;
  for (std::size_t i = 0; i < bound.size(); ++i) {
    double g = 0.0;
    const double y = activation[i], yn = bound.natural[i];
    const bool active = y > yn ? bound.high_active[i] : y < yn ? bound.low_active[i] : false;
    if (active) {
      total += kind == BarrierKind::polynomial
                   ? poly_barrier_term(y, yn, bound.low[i], bound.high[i], w.barrier_k, w.barrier_b, &g)
                   : linear_barrier_term(y, yn, bound.low[i], bound.high[i], w.linear_k, w.linear_b, &g);
    }
    if (!grad.empty()) grad[i] += static_cast<float>(g);
  }
  if (!std::isfinite(total)) throw NumericalError("non-finite barrier loss");
  return total;
}

namespace detail {

// 3x3 mean with edge-replicated borders and divisor 9, so a constant field maps to itself.
inline void box3(std::span<const double> in, std::size_t channels, std::size_t h, std::size_t w,
                 std::span<double> out) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const std::size_t yy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + dy, 0, h - 1);
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t xx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) + dx, 0, w - 1);
            acc += in[(c * h + yy) * w + xx];
          }
        }
        out[(c * h + y) * w + x] = acc / 9.0;
      }
    }
  }
}

// Transpose of box3.
inline void box3_transpose(std::span<const double> in, std::size_t channels, std::size_t h,
                           std::size_t w, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double share = in[(c * h + y) * w + x] / 9.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const std::size_t yy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + dy, 0, h - 1);
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t xx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) + dx, 0, w - 1);
            out[(c * h + yy) * w + xx] += share;
          }
        }
      }
    }
  }
}

}  // namespace detail

/// alpha/(D*H*W) * sum (AvgPool3x3(dq) - dq)^2 on one DxHxW field. Writes dLoss/d(dq) if asked.
inline double smoothing_field_loss(std::span<const double> dq, std::size_t d, std::size_t h,
                                   std::size_t w, double alpha, std::span<double> grad = {}) {
  if (dq.size() != d * h * w) throw UsageError("smoothing field size does not match its shape");
  if (alpha == 0.0) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 0.0;
  }
  std::vector<double> pooled(dq.size()), r(dq.size());
  detail::box3(dq, d, h, w, pooled);
  double sum = 0.0;
  for (std::size_t i = 0; i < dq.size(); ++i) {
    r[i] = pooled[i] - dq[i];
    sum += r[i] * r[i];
  }
  const double scale = alpha / static_cast<double>(dq.size());
  if (!grad.empty()) {
    detail::box3_transpose(r, d, h, w, grad);
    for (std::size_t i = 0; i < dq.size(); ++i) grad[i] = 2.0 * scale * (grad[i] - r[i]);
  }
  return scale * sum;
}

/// Smoothing loss over every CxHxW node of the plane, with dq_i = |C(y_adv) - C(y_nat)| / eps.
/// Accumulates dLoss/dy_adv into `grad` when given.
inline double smoothing_loss(const PlaneProfile& profile, const Graph& graph, const BoundSpec& bound,
                             std::span<const float> activation, double alpha, std::span<float> grad = {}) {
  if (alpha == 0.0) return 0.0;
  double total = 0.0;
  std::size_t offset = 0;
  for (NodeId id : profile.plane.nodes) {
    const Shape& s = graph.node(id).shape;
    const std::size_t n = element_count(s);
    if (s.size() == 3) {
      std::vector<double> dq(n), sign(n), slope(n), g(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& dist = profile.neurons[offset + i];
        if (dist.degenerate()) continue;
        const auto [c, density] = dist.cdf_and_density(activation[offset + i]);
        const double diff = c - bound.natural_cdf[offset + i];
        dq[i] = std::abs(diff) / bound.epsilon;
        sign[i] = diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0;
        slope[i] = density / bound.epsilon;
      }
      total += smoothing_field_loss(dq, s[0], s[1], s[2], alpha, grad.empty() ? std::span<double>{} : g);
      if (!grad.empty()) {
        for (std::size_t i = 0; i < n; ++i) grad[offset + i] += static_cast<float>(g[i] * sign[i] * slope[i]);
      }
    }
    offset += n;
  }
  return total;
}

/// L_t - max_{i != t} L_i.
inline double targeted_confidence(std::span<const float> logits, int target) {
  const auto t = static_cast<std::size_t>(target);
  if (logits.size() < 2 || t >= logits.size()) throw UsageError("bad target label");
  double best = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != t) best = std::max(best, static_cast<double>(logits[i]));
  }
  return logits[t] - best;
}

inline std::size_t default_top_k(std::size_t classes) { return std::min<std::size_t>(5, classes - 1); }

/// Indices of the k largest logits other than `exclude`; ties go to the lower index.
inline std::vector<std::size_t> top_competitors(std::span<const float> logits, std::size_t exclude, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != exclude) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

/// sum_{i=1..K} (L_true - i-th largest other logit). Positive while the true label dominates.
/// Writes its gradient w.r.t. the logits when asked.
inline double untargeted_confidence(std::span<const float> logits, int true_label, std::size_t k,
                                    std::span<float> grad = {}) {
  const auto t = static_cast<std::size_t>(true_label);
  if (logits.size() < 2 || t >= logits.size()) throw UsageError("bad true label");
  if (k == 0 || k > logits.size() - 1) throw UsageError("K must be in [1, classes - 1]");
  double total = 0.0;
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
  for (std::size_t j : top_competitors(logits, t, k)) {
    total += static_cast<double>(logits[t]) - logits[j];
    if (!grad.empty()) {
      grad[t] += 1.0f;
      grad[j] -= 1.0f;
    }
  }
  return total;
}

enum class AttackMode { targeted, untargeted };

/// What the attack optimizes: reach `label` (targeted) or push `label` out of the top K.
struct Objective {
  AttackMode mode = AttackMode::untargeted;
  int label = 0;
  std::size_t top_k = 5;
};

/// Targeted: L_t - max other. Untargeted: the negation of the top-K gap sum, so that larger
/// always means a stronger attack.
inline double attack_confidence(std::span<const float> logits, const Objective& obj) {
  return obj.mode == AttackMode::targeted ? targeted_confidence(logits, obj.label)
                                          : -untargeted_confidence(logits, obj.label, obj.top_k);
}

/// Targeted: argmax is the target. Untargeted: at least K other logits lie strictly above the
/// true one, so ties at rank K count as the true label still appearing.
inline bool attack_success(std::span<const float> logits, const Objective& obj) {
  const auto t = static_cast<std::size_t>(obj.label);
  if (obj.mode == AttackMode::targeted) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (i != t && logits[i] >= logits[t]) return false;
    }
    return true;
  }
  std::size_t above = 0;
  for (float v : logits) above += v > logits[t];
  return above >= obj.top_k;
}

/// Loss the attack minimizes: cross-entropy to the target, or the untargeted gap sum itself.
inline double prediction_loss(std::span<const float> logits, const Objective& obj, std::span<float> grad) {
  double v = 0.0;
  if (obj.mode == AttackMode::targeted) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (float l : logits) z += std::exp(l - m);
    const auto t = static_cast<std::size_t>(obj.label);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      grad[i] = static_cast<float>(std::exp(logits[i] - m) / z - (i == t ? 1.0 : 0.0));
    }
    v = std::log(z) + m - logits[t];
  } else {
    v = untargeted_confidence(logits, obj.label, obj.top_k, grad);
  }
  if (!std::isfinite(v)) throw NumericalError("non-finite prediction loss");
  return v;
}

}  // namespace deepbound
