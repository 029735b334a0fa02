// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepbound/distribution.hpp"
#include "deepbound/error.hpp"
#include "deepbound/planes.hpp"

namespace deepbound {

enum class BoundKind { quantile, minmax };

inline std::string bound_kind_name(BoundKind k) { return k == BoundKind::quantile ? "quantile" : "minmax"; }

inline BoundKind parse_bound_kind(const std::string& s) {
  if (s == "quantile") return BoundKind::quantile;
  if (s == "minmax") return BoundKind::minmax;
  throw UsageError("unknown bound kind \"" + s + "\"");
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
  bool degenerate = false;
};

inline void check_epsilon(double eps) {
  if (!(eps > 0.0 && eps <= 1.0)) throw UsageError("epsilon must lie in (0, 1], got " + std::to_string(eps));
}

/// [C^-1(C(y) - eps), C^-1(C(y) + eps)] with the probabilities clamped to [0, 1]. A natural value
/// outside the observed support widens the interval so it stays inside.
inline Interval quantile_bound(const NeuronDistribution& d, double y_nat, double eps) {
  check_epsilon(eps);
  if (d.degenerate()) return {y_nat, y_nat, true};
  const double c = d.cdf(y_nat);
  Interval iv{d.quantile(std::max(c - eps, 0.0)), d.quantile(std::min(c + eps, 1.0)), false};
  iv.low = std::min(iv.low, y_nat);
  iv.high = std::max(iv.high, y_nat);
  return iv;
}

/// y_nat +/- (sup - inf) * eps.
inline Interval minmax_bound(const NeuronDistribution& d, double y_nat, double eps) {
  check_epsilon(eps);
  if (d.degenerate()) return {y_nat, y_nat, true};
  const double half = (static_cast<double>(d.max()) - d.min()) * eps;
  return {y_nat - half, y_nat + half, false};
}

/// Resolved per-neuron intervals on one plane for one natural input. A side whose width is zero
/// is inactive: barrier terms and occupancy skip it.
struct BoundSpec {
  BoundKind kind = BoundKind::quantile;
  double epsilon = 0.0;
  std::size_t plane_id = 0;
  std::vector<float> natural;
  std::vector<double> natural_cdf;  // C(y_nat) per neuron under the plane's profile
  std::vector<double> low;
  std::vector<double> high;
  std::vector<std::uint8_t> low_active;
  std::vector<std::uint8_t> high_active;

  std::size_t size() const noexcept { return natural.size(); }
  bool excluded(std::size_t i) const noexcept { return !low_active[i] && !high_active[i]; }
  std::size_t active_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) n += !excluded(i);
    return n;
  }
};

inline BoundSpec resolve_bounds(const PlaneProfile& profile, std::span<const float> natural,
                                BoundKind kind, double eps) {
  if (natural.size() != profile.neurons.size()) {
    throw ConfigError("activation has " + std::to_string(natural.size()) + " values, plane " +
                      profile.plane.name + " has " + std::to_string(profile.neurons.size()));
  }
  check_epsilon(eps);
  BoundSpec b;
  b.kind = kind;
  b.epsilon = eps;
  b.plane_id = profile.plane.id;
  b.natural.assign(natural.begin(), natural.end());
  const std::size_t n = natural.size();
  b.natural_cdf.resize(n);
  b.low.resize(n);
  b.high.resize(n);
  b.low_active.resize(n);
  b.high_active.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = natural[i];
    b.natural_cdf[i] = profile.neurons[i].cdf(y);
    const Interval iv = kind == BoundKind::quantile ? quantile_bound(profile.neurons[i], y, eps)
                                                    : minmax_bound(profile.neurons[i], y, eps);
    b.low[i] = iv.low;
    b.high[i] = iv.high;
    b.low_active[i] = !iv.degenerate && iv.low < y;
    b.high_active[i] = !iv.degenerate && iv.high > y;
  }
  return b;
}

/// Largest normalized one-sided deviation over active sides; <= 1 iff every active side holds.
inline double occupancy(const BoundSpec& b, std::span<const float> activation) {
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double y = b.natural[i], d = static_cast<double>(activation[i]) - y;
    if (d > 0.0 && b.high_active[i]) worst = std::max(worst, d / (b.high[i] - y));
    if (d < 0.0 && b.low_active[i]) worst = std::max(worst, -d / (y - b.low[i]));
  }
  return worst;
}

inline bool in_bound(const BoundSpec& b, std::span<const float> activation) {
  return occupancy(b, activation) <= 1.0;
}

/// Fraction of active neurons whose activation lies inside its interval.
inline double in_bound_fraction(const BoundSpec& b, std::span<const float> activation) {
  std::size_t inside = 0, active = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.excluded(i)) continue;
    ++active;
    const double y = b.natural[i], d = static_cast<double>(activation[i]) - y;
    const bool ok = (d > 0.0 && b.high_active[i]) ? d <= b.high[i] - y
                    : (d < 0.0 && b.low_active[i]) ? -d <= y - b.low[i]
                                                   : true;
    inside += ok;
  }
  return active ? static_cast<double>(inside) / static_cast<double>(active) : 1.0;
}

/// max_i |C(y_adv) - C(y_nat)| over the plane's non-degenerate neurons.
inline double quantile_distance(const PlaneProfile& profile, std::span<const float> natural,
                                std::span<const float> adversarial) {
  double worst = 0.0;
  for (std::size_t i = 0; i < profile.neurons.size(); ++i) {
    const auto& d = profile.neurons[i];
    if (d.degenerate()) continue;
    worst = std::max(worst, std::abs(d.cdf(adversarial[i]) - d.cdf(natural[i])));
  }
  return worst;
}

}  // namespace deepbound
