// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "deepbound/error.hpp"

namespace deepbound {

inline constexpr std::size_t quantile_steps = 1024;
inline constexpr std::size_t table_size = quantile_steps + 1;

/// Hazen empirical quantile of sorted samples: order statistic s_(i) (1-based) sits at
/// probability (i - 0.5)/n, linear in between, saturating at the extremes.
inline double hazen_quantile(std::span<const float> sorted, double p) {
  const std::size_t n = sorted.size();
  const double k = p * static_cast<double>(n) + 0.5;  // 1-based fractional rank
  if (k <= 1.0) return sorted.front();
  if (k >= static_cast<double>(n)) return sorted.back();
  const auto i = static_cast<std::size_t>(std::floor(k));
  const double t = k - static_cast<double>(i);
  return sorted[i - 1] + t * (static_cast<double>(sorted[i]) - sorted[i - 1]);
}

/// One neuron's activation distribution as a monotone table q_j = C^-1(j/1024).
class NeuronDistribution {
 public:
  NeuronDistribution() : table_(table_size, 0.0f) {}

  /// Builds the table from observed samples (any order). Needs at least one sample.
  static NeuronDistribution from_samples(std::vector<float> samples) {
    if (samples.empty()) throw UsageError("a distribution needs at least one sample");
    std::sort(samples.begin(), samples.end());
    NeuronDistribution d;
    for (std::size_t j = 0; j < table_size; ++j) {
      d.table_[j] = static_cast<float>(
          hazen_quantile(samples, static_cast<double>(j) / static_cast<double>(quantile_steps)));
    }
    d.table_.front() = samples.front();
    d.table_.back() = samples.back();
    d.samples_ = samples.size();
    return d;
  }

  /// Adopts an existing table; it must have 1025 non-decreasing finite entries.
  static NeuronDistribution from_table(std::vector<float> table, std::size_t samples = 0) {
    if (table.size() != table_size) throw FormatError("quantile table must have 1025 entries");
    for (std::size_t j = 0; j < table.size(); ++j) {
      if (!std::isfinite(table[j]) || (j && table[j] < table[j - 1])) {
        throw FormatError("quantile table is not monotone");
      }
    }
    NeuronDistribution d;
    d.table_ = std::move(table);
    d.samples_ = samples;
    return d;
  }

  std::span<const float> table() const noexcept { return table_; }
  std::size_t sample_count() const noexcept { return samples_; }
  float min() const noexcept { return table_.front(); }
  float max() const noexcept { return table_.back(); }
  bool degenerate() const noexcept { return !(table_.back() > table_.front()); }

  /// C(y): 0 below the minimum, 1 above the maximum, linear between table entries. A value
  /// hit by a run of equal entries maps to the middle of that run.
  double cdf(double y) const {
    if (y < table_.front()) return 0.0;
    if (y > table_.back()) return 1.0;
    const auto lo = std::lower_bound(table_.begin(), table_.end(), y,
                                     [](float q, double v) { return q < v; });
    const auto hi = std::upper_bound(table_.begin(), table_.end(), y,
                                     [](double v, float q) { return v < q; });
    const auto a = static_cast<double>(lo - table_.begin());
    const auto b = static_cast<double>(hi - table_.begin());  // one past the last entry <= y
    if (b > a) return 0.5 * (a + b - 1.0) / quantile_steps;
    // table[a-1] < y < table[a]
    const double q0 = *(lo - 1), q1 = *lo;
    return (a - 1.0 + (y - q0) / (q1 - q0)) / quantile_steps;
  }

  /// C^-1(p), linear between table entries, saturating at the observed extremes.
  double quantile(double p) const {
    if (!(p > 0.0)) return table_.front();
    if (p >= 1.0) return table_.back();
    const double t = p * quantile_steps;
    const auto j = std::min(static_cast<std::size_t>(t), quantile_steps - 1);
    const double f = t - static_cast<double>(j);
    return table_[j] + f * (static_cast<double>(table_[j + 1]) - table_[j]);
  }

  /// dC/dy at y; zero outside the support and on jumps (zero-width table segments).
  double density(double y) const { return cdf_and_density(y).second; }

  /// {C(y), dC/dy} from a single table search.
  std::pair<double, double> cdf_and_density(double y) const {
    if (y < table_.front()) return {0.0, 0.0};
    if (y > table_.back()) return {1.0, 0.0};
    const auto hi = std::upper_bound(table_.begin(), table_.end(), y,
                                     [](double v, float q) { return v < q; });
    const auto b = hi - table_.begin();  // one past the last entry <= y
    if (hi != table_.end() && hi != table_.begin() && *(hi - 1) < y) {
      const double q0 = *(hi - 1), q1 = *hi;
      return {(static_cast<double>(b) - 1.0 + (y - q0) / (q1 - q0)) / quantile_steps,
              1.0 / (quantile_steps * (q1 - q0))};
    }
    // y equals one or more entries: the middle of that run, and a jump or flat spot for the slope.
    return {cdf(y), 0.0};
  }

 private:
  std::vector<float> table_;
  std::size_t samples_ = 0;
};

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

/// Moments of the distribution, estimated from 1024 equally spaced quantiles (m + 0.5)/1024.
inline Moments resampled_moments(const NeuronDistribution& d) {
  std::vector<double> xs(quantile_steps);
  for (std::size_t m = 0; m < quantile_steps; ++m) {
    xs[m] = d.quantile((static_cast<double>(m) + 0.5) / quantile_steps);
  }
  Moments out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  double m2 = 0, m3 = 0, m4 = 0;
  for (double x : xs) {
    const double c = x - out.mean;
    m2 += c * c;
    m3 += c * c * c;
    m4 += c * c * c * c;
  }
  const auto n = static_cast<double>(xs.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  out.variance = m2;
  if (m2 > 0.0) {
    out.skewness = m3 / std::pow(m2, 1.5);
    out.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return out;
}

/// exp(-(skewness^2 + excess_kurtosis^2) / 4); 0 for degenerate distributions.
inline double normality_score(const NeuronDistribution& d) {
  if (d.degenerate()) return 0.0;
  const Moments m = resampled_moments(d);
  if (!(m.variance > 0.0)) return 0.0;
  return std::exp(-(m.skewness * m.skewness + m.excess_kurtosis * m.excess_kurtosis) / 4.0);
}

}  // namespace deepbound
