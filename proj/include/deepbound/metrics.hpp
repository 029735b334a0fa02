// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "deepbound/classify.hpp"
#include "deepbound/error.hpp"
#include "deepbound/losses.hpp"
#include "deepbound/model.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

inline void require_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct PixelDistances {
  double l2 = 0.0;    // on the 0-255 scale
  double linf = 0.0;  // on the 0-1 scale
};

inline PixelDistances pixel_distances(const Tensor& x_nat, const Tensor& x_adv) {
  require_same_shape(x_nat, x_adv);
  PixelDistances d;
  double sq = 0.0;
  for (std::size_t i = 0; i < x_nat.size(); ++i) {
    const double diff = static_cast<double>(x_adv[i]) - x_nat[i];
    sq += (255.0 * diff) * (255.0 * diff);
    d.linf = std::max(d.linf, std::abs(diff));
  }
  d.l2 = std::sqrt(sq);
  return d;
}

namespace detail {

inline std::array<double, 11> gaussian_window() {
  std::array<double, 11> w{};
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) sum += w[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
  for (double& v : w) v /= sum;
  return w;
}

// Separable 11x11 Gaussian filter over one HxW plane, "valid" region only.
inline std::vector<double> gaussian_valid(const std::vector<double>& in, std::size_t h, std::size_t w) {
  static const std::array<double, 11> g = gaussian_window();
  const std::size_t oh = h - 10, ow = w - 10;
  std::vector<double> rows(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 11; ++k) acc += g[k] * in[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 11; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Mean SSIM over 11x11 Gaussian windows (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 on unit range,
/// averaged over channels.
inline double ssim(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y);
  if (x.rank() != 3) throw UsageError("ssim expects CxHxW images");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < 11 || w < 11) throw UsageError("image smaller than the 11x11 SSIM window");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t plane = h * w;
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] = x[ch * plane + i];
      b[i] = y[ch * plane + i];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = detail::gaussian_valid(a, h, w), mb = detail::gaussian_valid(b, h, w);
    const auto saa = detail::gaussian_valid(aa, h, w), sbb = detail::gaussian_valid(bb, h, w);
    const auto sab = detail::gaussian_valid(ab, h, w);
    double sum = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i];
      const double cov = sab[i] - ma[i] * mb[i];
      sum += ((2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += sum / static_cast<double>(ma.size());
  }
  return total / static_cast<double>(c);
}

/// Sum over channels and 2x2 windows of the squared [[1,-1],[-1,1]] filter response.
inline double checkerboard_energy(const Tensor& delta) {
  if (delta.rank() != 3) throw UsageError("checkerboard energy expects a CxHxW tensor");
  const std::size_t c = delta.dim(0), h = delta.dim(1), w = delta.dim(2);
  double e = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* p = delta.data() + ch * h * w;
    for (std::size_t y = 0; y + 1 < h; ++y) {
      for (std::size_t x = 0; x + 1 < w; ++x) {
        const double r = static_cast<double>(p[y * w + x]) - p[y * w + x + 1] - p[(y + 1) * w + x] +
                         p[(y + 1) * w + x + 1];
        e += r * r;
      }
    }
  }
  return e;
}

inline Tensor difference(const Tensor& x_nat, const Tensor& x_adv) {
  require_same_shape(x_nat, x_adv);
  Tensor d(x_nat.shape());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = x_adv[i] - x_nat[i];
  return d;
}

/// clamp(0.5 + scale * (x_adv - x_nat), 0, 1).
inline Tensor differential_map(const Tensor& x_nat, const Tensor& x_adv, double scale) {
  require_same_shape(x_nat, x_adv);
  Tensor m(x_nat.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = 0.5 + scale * (static_cast<double>(x_adv[i]) - x_nat[i]);
    m[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return m;
}

/// Success rate of adversarial inputs under another model; absent for an empty set.
inline std::optional<double> transfer_eval(std::span<const Tensor> adversarial, std::span<const Objective> objectives,
                                           const Model& model) {
  if (adversarial.size() != objectives.size()) throw UsageError("one objective per adversarial input");
  if (adversarial.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < adversarial.size(); ++i) {
    hits += attack_success(predict_logits(model, adversarial[i]).values(), objectives[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(adversarial.size());
}

}  // namespace deepbound
