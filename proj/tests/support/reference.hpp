// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

// Double-precision reference evaluator and finite-difference gradient checks. Written straight
// from the op definitions, independent of the engine's kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "deepbound/autodiff.hpp"
#include "deepbound/graph.hpp"

namespace deepbound::testing {

using Values = std::vector<std::vector<double>>;

inline double param_at(const Parameters& p, const std::string& name, std::size_t i) {
  return static_cast<double>(p.at(name)[i]);
}

/// Every node's activation in double precision.
inline Values reference_forward(const Graph& g, const Parameters& p, const std::vector<double>& x) {
  Values a(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Node& n = g.node(static_cast<NodeId>(i));
    const std::vector<double>* in = n.inputs.empty() ? nullptr : &a[index_of(n.inputs[0])];
    const Shape& in_shape = n.inputs.empty() ? n.shape : g.node(n.inputs[0]).shape;
    auto& out = a[i];
    out.assign(element_count(n.shape), 0.0);
    switch (n.kind) {
      case OpKind::input: out = x; break;
      case OpKind::logits: out = *in; break;
      case OpKind::conv2d: {
        const std::size_t ci = in_shape[0], h = in_shape[1], w = in_shape[2], k = n.kernel;
        const long r = static_cast<long>(k / 2);
        for (std::size_t o = 0; o < n.shape[0]; ++o)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
              double s = 0.0;
              for (std::size_t c = 0; c < ci; ++c)
                for (std::size_t ky = 0; ky < k; ++ky)
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const long sy = static_cast<long>(y) + static_cast<long>(ky) - r;
                    const long sx = static_cast<long>(xx) + static_cast<long>(kx) - r;
                    if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
                    s += param_at(p, n.param, ((o * ci + c) * k + ky) * k + kx) *
                         (*in)[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
                  }
              out[(o * h + y) * w + xx] = s;
            }
        break;
      }
      case OpKind::dense:
        for (std::size_t o = 0; o < n.shape[0]; ++o)
          for (std::size_t j = 0; j < in->size(); ++j) out[o] += param_at(p, n.param, o * in->size() + j) * (*in)[j];
        break;
      case OpKind::bias_add: {
        const std::size_t inner = out.size() / n.shape[0];
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = (*in)[j] + param_at(p, n.param, j / inner);
        break;
      }
      case OpKind::relu:
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max((*in)[j], 0.0);
        break;
      case OpKind::add: {
        const auto& b = a[index_of(n.inputs[1])];
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = (*in)[j] + b[j];
        break;
      }
      case OpKind::avg_pool: {
        const std::size_t win = n.window, w = in_shape[2], h = in_shape[1];
        for (std::size_t c = 0; c < in_shape[0]; ++c)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              out[(c * n.shape[1] + y / win) * n.shape[2] + xx / win] +=
                  (*in)[(c * h + y) * w + xx] / static_cast<double>(win * win);
        break;
      }
      case OpKind::global_avg_pool: {
        const std::size_t inner = in->size() / n.shape[0];
        for (std::size_t j = 0; j < in->size(); ++j) out[j / inner] += (*in)[j] / static_cast<double>(inner);
        break;
      }
    }
  }
  return a;
}

/// Pre-activation values of every relu node, concatenated.
inline std::vector<double> relu_inputs(const Graph& g, const Values& a) {
  std::vector<double> out;
  for (const Node& n : g.nodes()) {
    if (n.kind != OpKind::relu) continue;
    const auto& v = a[index_of(n.inputs[0])];
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

/// f(x) = sum_i w_i * logits_i, in double.
struct LinearReadout {
  const Graph& graph;
  const Parameters& params;
  std::vector<double> w;

  double operator()(const std::vector<double>& x, Values* acts = nullptr) const {
    Values a = reference_forward(graph, params, x);
    double f = 0.0;
    const auto& z = a.back();
    for (std::size_t i = 0; i < z.size(); ++i) f += w[i] * z[i];
    if (acts) *acts = std::move(a);
    return f;
  }
};

/// Input gradient of the readout from the engine (float32).
inline std::vector<double> engine_gradient(const Graph& g, const Parameters& p, const std::vector<double>& x,
                                           const std::vector<double>& w) {
  Tensor input(g.input_shape());
  for (std::size_t i = 0; i < x.size(); ++i) input[i] = static_cast<float>(x[i]);
  Tape tape = forward(g, p, input);
  std::vector<float> seed(w.begin(), w.end());
  const Seed s{g.logits(), seed};
  backward(tape, {&s, 1});
  const auto gi = tape.input_gradient().values();
  return {gi.begin(), gi.end()};
}

inline bool same_signs(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] > 0.0) != (b[i] > 0.0)) return false;
  }
  return true;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  return scale > 0.0 ? std::sqrt(diff) / scale : 0.0;
}

struct FdOutcome {
  double worst = 0.0;   // largest relative error over accepted points
  std::size_t points = 0;
  std::size_t rejected = 0;  // points whose stencil crossed a relu kink
};

/// Central differences (step h) of the double readout against the engine gradient at random
/// inputs in [0, 1]. With `coords` == 0 every input coordinate is checked; otherwise a random
/// direction plus `coords` random coordinates form the compared vector. Points whose stencil
/// flips any relu input sign are redrawn.
inline FdOutcome check_input_gradient(const Graph& g, const Parameters& p, std::size_t points, std::uint64_t seed,
                                      std::size_t coords = 0, double h = 1e-3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = element_count(g.input_shape());
  FdOutcome out;
  while (out.points < points) {
    if (out.rejected > 50 * points) break;
    std::vector<double> x(n), w(element_count(g.node(g.logits()).shape));
    for (double& v : x) v = unit(rng);
    // Round to float so the engine and the reference see the same point.
    for (double& v : x) v = static_cast<double>(static_cast<float>(v));
    for (double& v : w) v = gauss(rng);
    const LinearReadout f{g, p, w};

    std::vector<std::vector<double>> dirs;
    if (coords == 0) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> d(n, 0.0);
        d[i] = 1.0;
        dirs.push_back(std::move(d));
      }
    } else {
      std::vector<double> d(n);
      double norm = 0.0;
      for (double& v : d) {
        v = gauss(rng);
        norm += v * v;
      }
      for (double& v : d) v /= std::sqrt(norm);
      dirs.push_back(std::move(d));
      for (std::size_t k = 0; k < coords; ++k) {
        std::vector<double> e(n, 0.0);
        e[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
        dirs.push_back(std::move(e));
      }
    }

    Values base;
    f(x, &base);
    const std::vector<double> kinks = relu_inputs(g, base);
    const std::vector<double> grad = engine_gradient(g, p, x, w);
    std::vector<double> analytic, numeric;
    bool crossed = false;
    for (const auto& d : dirs) {
      std::vector<double> xp(n), xm(n);
      for (std::size_t i = 0; i < n; ++i) {
        xp[i] = x[i] + h * d[i];
        xm[i] = x[i] - h * d[i];
      }
      Values ap, am;
      const double fp = f(xp, &ap), fm = f(xm, &am);
      if (!same_signs(kinks, relu_inputs(g, ap)) || !same_signs(kinks, relu_inputs(g, am))) {
        crossed = true;
        break;
      }
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += grad[i] * d[i];
      analytic.push_back(dot);
      numeric.push_back((fp - fm) / (2.0 * h));
    }
    if (crossed) {
      ++out.rejected;
      continue;
    }
    out.worst = std::max(out.worst, relative_error(analytic, numeric));
    ++out.points;
  }
  return out;
}

/// Random parameters: N(0, scale^2) weights and biases.
inline Parameters random_parameters(const Graph& g, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, scale);
  Parameters p;
  for (const auto& [name, shape] : g.parameter_shapes()) {
    Tensor t(shape);
    for (float& v : t.values()) v = static_cast<float>(gauss(rng));
    p.emplace(name, std::move(t));
  }
  return p;
}

}  // namespace deepbound::testing
