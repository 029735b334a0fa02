// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force oracles for the quantile table: linear scans and bisection, no shared code with
// the library beyond the table itself.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "deepbound/distribution.hpp"

namespace deepbound::testing {

/// Hazen quantile by scanning the plotting positions (i - 0.5)/n.
inline double oracle_hazen_quantile(std::vector<double> s, double p) {
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  if (p <= 0.5 / n) return s.front();
  if (p >= (n - 0.5) / n) return s.back();
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const double p0 = (static_cast<double>(i) + 0.5) / n, p1 = (static_cast<double>(i) + 1.5) / n;
    if (p >= p0 && p <= p1) return s[i] + (p - p0) / (p1 - p0) * (s[i + 1] - s[i]);
  }
  return s.back();
}

/// Hazen empirical CDF: linear through (s_i, (i - 0.5)/n), flat beyond the extremes. Only
/// meaningful for tie-free samples.
inline double oracle_hazen_cdf(std::vector<double> s, double y) {
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  if (y < s.front()) return 0.0;
  if (y > s.back()) return 1.0;
  if (y <= s.front()) return 0.5 / n;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (y >= s[i] && y <= s[i + 1]) {
      const double p0 = (static_cast<double>(i) + 0.5) / n;
      return p0 + (y - s[i]) / (s[i + 1] - s[i]) / n;
    }
  }
  return (n - 0.5) / n;
}

/// Piecewise-linear C^-1 through (j/1024, table[j]).
inline double oracle_table_quantile(std::span<const float> table, double p) {
  const double steps = static_cast<double>(table.size() - 1);
  if (p <= 0.0) return table.front();
  if (p >= 1.0) return table.back();
  const std::size_t j = std::min(static_cast<std::size_t>(p * steps), table.size() - 2);
  const double t = p * steps - static_cast<double>(j);
  return table[j] + t * (static_cast<double>(table[j + 1]) - table[j]);
}

/// C(y) as the midpoint of {p : C^-1(p) = y} (a single point unless y sits on a flat run),
/// found by bisection on the table quantile function. 0 below and 1 above the table.
inline double oracle_table_cdf(std::span<const float> table, double y) {
  if (y < table.front()) return 0.0;
  if (y > table.back()) return 1.0;
  double lo = 0.0, hi = 1.0;  // a = inf{p : Q(p) >= y}
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (oracle_table_quantile(table, mid) >= y ? hi : lo) = mid;
  }
  const double a = hi;
  lo = 0.0;
  hi = 1.0;  // b = sup{p : Q(p) <= y}
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (oracle_table_quantile(table, mid) <= y ? lo : hi) = mid;
  }
  return 0.5 * (a + lo);
}

/// A random sample set of size n in [4, 64]: normal, exponential, uniform, or with ties.
inline std::vector<double> random_sample_set(std::mt19937_64& rng) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(4, 64)(rng);
  const int kind = std::uniform_int_distribution<int>(0, 3)(rng);
  std::normal_distribution<double> gauss(0.0, 2.0);
  std::exponential_distribution<double> expo(1.5);
  std::uniform_real_distribution<double> unit(-1.0, 3.0);
  std::vector<double> s(n);
  for (double& v : s) {
    switch (kind) {
      case 0: v = gauss(rng); break;
      case 1: v = expo(rng); break;
      case 2: v = unit(rng); break;
      default: v = std::round(gauss(rng) * 2.0) / 2.0; break;
    }
    v = static_cast<double>(static_cast<float>(v));
  }
  return s;
}

inline bool has_ties(std::vector<double> s) {
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) != s.end();
}

struct CdfOracleReport {
  double table_error = 0.0;     // |table entry - Hazen quantile oracle|
  double quantile_error = 0.0;  // |C^-1(p) - table quantile oracle|
  double cdf_error = 0.0;       // |C(y) - bisection oracle|
  double ecdf_error = 0.0;      // |C(y) - raw Hazen ECDF|, tie-free sets only
  double round_trip = 0.0;      // |C(C^-1(q)) - q| at interior grid points off flat runs
  bool flat_runs_ok = true;     // on a flat run, C lands inside the run's probability span
};

inline void merge(CdfOracleReport& into, const CdfOracleReport& r) {
  into.table_error = std::max(into.table_error, r.table_error);
  into.quantile_error = std::max(into.quantile_error, r.quantile_error);
  into.cdf_error = std::max(into.cdf_error, r.cdf_error);
  into.ecdf_error = std::max(into.ecdf_error, r.ecdf_error);
  into.round_trip = std::max(into.round_trip, r.round_trip);
  into.flat_runs_ok = into.flat_runs_ok && r.flat_runs_ok;
}

inline CdfOracleReport check_against_oracle(const std::vector<double>& samples, std::mt19937_64& rng) {
  CdfOracleReport r;
  const std::vector<float> fs(samples.begin(), samples.end());
  const NeuronDistribution d = NeuronDistribution::from_samples(fs);
  const auto table = d.table();
  const double steps = static_cast<double>(quantile_steps);
  for (std::size_t j = 0; j < table.size(); ++j) {
    const double want = static_cast<float>(oracle_hazen_quantile(samples, static_cast<double>(j) / steps));
    r.table_error = std::max(r.table_error, std::abs(table[j] - want));
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const double p = unit(rng);
    r.quantile_error = std::max(r.quantile_error, std::abs(d.quantile(p) - oracle_table_quantile(table, p)));
  }
  const double lo = table.front(), hi = table.back(), pad = 0.1 * (hi - lo) + 0.1;
  std::vector<double> ys;
  std::uniform_real_distribution<double> span(lo - pad, hi + pad);
  for (int k = 0; k < 200; ++k) ys.push_back(span(rng));
  ys.insert(ys.end(), samples.begin(), samples.end());
  for (std::size_t j = 0; j < table.size(); j += 7) ys.push_back(table[j]);
  const bool ties = has_ties(samples);
  for (double y : ys) {
    r.cdf_error = std::max(r.cdf_error, std::abs(d.cdf(y) - oracle_table_cdf(table, y)));
    // At the extremes the table is flat and the midpoint rule departs from the raw ECDF.
    if (!ties && y > lo && y < hi) r.ecdf_error = std::max(r.ecdf_error, std::abs(d.cdf(y) - oracle_hazen_cdf(samples, y)));
  }
  for (std::size_t j = 1; j + 1 < table.size(); ++j) {
    const double q = static_cast<double>(j) / steps;
    const double c = d.cdf(d.quantile(q));
    std::size_t first = j, last = j;
    while (first > 0 && table[first - 1] == table[j]) --first;
    while (last + 1 < table.size() && table[last + 1] == table[j]) ++last;
    if (first == last) {
      r.round_trip = std::max(r.round_trip, std::abs(c - q));
    } else if (c < static_cast<double>(first) / steps - 1e-12 || c > static_cast<double>(last) / steps + 1e-12) {
      r.flat_runs_ok = false;
    }
  }
  return r;
}

}  // namespace deepbound::testing
