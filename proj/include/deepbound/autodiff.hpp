// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "deepbound/error.hpp"
#include "deepbound/graph.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

/// Clamps a node's activation into [low, high] during forward; clipped entries pass no gradient.
struct ClampSpec {
  NodeId node;
  std::span<const float> low;
  std::span<const float> high;
};

struct ForwardOptions {
  std::span<const ClampSpec> clamps;
};

/// Gradient of the total loss with respect to one node's activation.
struct Seed {
  NodeId node;
  std::span<const float> gradient;
};

enum class GradientTargets { input_only, input_and_parameters };

/// Per-forward record of activations plus the gradients produced by backward().
/// A tape is owned by one worker; the graph and parameters it points at must outlive it.
class Tape {
 public:
  const Graph& graph() const { return *graph_; }
  const Parameters& parameters() const { return *params_; }

  const Tensor& activation(NodeId id) const { return activations_.at(index_of(id)); }
  const Tensor& logits() const { return activations_.back(); }

  const Tensor& gradient(NodeId id) const { return grads_.at(index_of(id)); }
  const Tensor& input_gradient() const { return grads_.front(); }

  const Tensor& parameter_gradient(const std::string& name) const {
    auto it = param_grads_.find(name);
    if (it == param_grads_.end()) throw UsageError("no gradient recorded for parameter " + name);
    return it->second;
  }
  const Parameters& parameter_gradients() const noexcept { return param_grads_; }

  bool recorded() const noexcept { return graph_ != nullptr; }

 private:
  friend void forward(const Graph&, const Parameters&, const Tensor&, Tape&, const ForwardOptions&);
  friend void backward(Tape&, std::span<const Seed>, GradientTargets);

  const Graph* graph_ = nullptr;
  const Parameters* params_ = nullptr;
  std::vector<Tensor> activations_;
  std::vector<Tensor> grads_;
  std::vector<std::vector<std::uint8_t>> pass_masks_;  // per node; empty unless clamped
  std::vector<std::uint8_t> reached_;
  Parameters param_grads_;
};

namespace kernels {

// All convolutions are stride 1 with "same" zero padding.
inline void conv2d_forward(const float* in, std::size_t channels, std::size_t height,
                           std::size_t width, const float* weight, std::size_t out_channels,
                           std::size_t kernel, float* out) {
  const std::size_t plane = height * width;
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  std::fill(out, out + out_channels * plane, 0.0f);
  for (std::size_t o = 0; o < out_channels; ++o) {
    float* out_plane = out + o * plane;
    for (std::size_t c = 0; c < channels; ++c) {
      const float* in_plane = in + c * plane;
      const float* wk = weight + (o * channels + c) * kernel * kernel;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
        const std::ptrdiff_t y1 = std::min(h, h - dy);
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min(w, w - dx);
          const float k = wk[ky * kernel + kx];
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            float* __restrict orow = out_plane + y * w;
            const float* __restrict irow = in_plane + (y + dy) * w + dx;
            for (std::ptrdiff_t x = x0; x < x1; ++x) orow[x] += k * irow[x];
          }
        }
      }
    }
  }
}

inline void conv2d_backward_input(const float* grad_out, std::size_t channels, std::size_t height,
                                  std::size_t width, const float* weight,
                                  std::size_t out_channels, std::size_t kernel, float* grad_in) {
  const std::size_t plane = height * width;
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    float* gin_plane = grad_in + c * plane;
    for (std::size_t o = 0; o < out_channels; ++o) {
      const float* gout_plane = grad_out + o * plane;
      const float* wk = weight + (o * channels + c) * kernel * kernel;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
        const std::ptrdiff_t y1 = std::min(h, h - dy);
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min(w, w - dx);
          const float k = wk[ky * kernel + kx];
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const float* __restrict grow = gout_plane + y * w;
            float* __restrict irow = gin_plane + (y + dy) * w + dx;
            for (std::ptrdiff_t x = x0; x < x1; ++x) irow[x] += k * grow[x];
          }
        }
      }
    }
  }
}

inline void conv2d_backward_weight(const float* grad_out, const float* in, std::size_t channels,
                                   std::size_t height, std::size_t width, std::size_t out_channels,
                                   std::size_t kernel, float* grad_weight) {
  const std::size_t plane = height * width;
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  for (std::size_t o = 0; o < out_channels; ++o) {
    const float* gout_plane = grad_out + o * plane;
    for (std::size_t c = 0; c < channels; ++c) {
      const float* in_plane = in + c * plane;
      float* gw = grad_weight + (o * channels + c) * kernel * kernel;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
        const std::ptrdiff_t y1 = std::min(h, h - dy);
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min(w, w - dx);
          float acc = 0.0f;
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const float* grow = gout_plane + y * w;
            const float* irow = in_plane + (y + dy) * w + dx;
            for (std::ptrdiff_t x = x0; x < x1; ++x) acc += grow[x] * irow[x];
          }
          gw[ky * kernel + kx] += acc;
        }
      }
    }
  }
}

}  // namespace kernels

namespace detail {

inline const Tensor& param_of(const Parameters& params, const Node& node) {
  auto it = params.find(node.param);
  if (it == params.end()) throw ConfigError("missing parameter " + node.param);
  return it->second;
}

inline std::size_t spatial(const Shape& s) { return s.size() == 3 ? s[1] * s[2] : 1; }

}  // namespace detail

/// Runs the graph on `input`, recording every activation into `tape` (buffers are reused).
/// Throws ConfigError on shape mismatch and NumericalError on a non-finite activation.
inline void forward(const Graph& graph, const Parameters& params, const Tensor& input, Tape& tape,
                    const ForwardOptions& options = {}) {
  if (input.shape() != graph.input_shape()) {
    throw ConfigError("input shape " + to_string(input.shape()) + " does not match graph input " +
                      to_string(graph.input_shape()));
  }
  const auto& nodes = graph.nodes();
  tape.graph_ = &graph;
  tape.params_ = &params;
  tape.activations_.resize(nodes.size());
  tape.pass_masks_.resize(nodes.size());
  for (auto& m : tape.pass_masks_) m.clear();

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& node = nodes[i];
    Tensor& out = tape.activations_[i];
    out.reshape_to(node.shape);
    const Tensor* x = node.inputs.empty() ? nullptr : &tape.activations_[index_of(node.inputs[0])];
    switch (node.kind) {
      case OpKind::input:
        std::copy(input.values().begin(), input.values().end(), out.data());
        break;
      case OpKind::logits:
        std::copy(x->values().begin(), x->values().end(), out.data());
        break;
      case OpKind::conv2d: {
        const Tensor& wt = detail::param_of(params, node);
        kernels::conv2d_forward(x->data(), x->dim(0), x->dim(1), x->dim(2), wt.data(),
                                node.shape[0], node.kernel, out.data());
        break;
      }
      case OpKind::dense: {
        const Tensor& wt = detail::param_of(params, node);
        const std::size_t n_in = x->size();
        for (std::size_t o = 0; o < node.shape[0]; ++o) {
          const float* row = wt.data() + o * n_in;
          float acc = 0.0f;
          for (std::size_t j = 0; j < n_in; ++j) acc += row[j] * (*x)[j];
          out[o] = acc;
        }
        break;
      }
      case OpKind::bias_add: {
        const Tensor& b = detail::param_of(params, node);
        const std::size_t inner = detail::spatial(node.shape);
        for (std::size_t c = 0; c < node.shape[0]; ++c) {
          for (std::size_t j = 0; j < inner; ++j) out[c * inner + j] = (*x)[c * inner + j] + b[c];
        }
        break;
      }
      case OpKind::relu:
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = (*x)[j] > 0.0f ? (*x)[j] : 0.0f;
        break;
      case OpKind::add: {
        const Tensor& y = tape.activations_[index_of(node.inputs[1])];
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = (*x)[j] + y[j];
        break;
      }
      case OpKind::avg_pool: {
        const std::size_t win = node.window;
        const std::size_t in_w = x->dim(2);
        const float scale = 1.0f / static_cast<float>(win * win);
        for (std::size_t c = 0; c < node.shape[0]; ++c) {
          for (std::size_t oy = 0; oy < node.shape[1]; ++oy) {
            for (std::size_t ox = 0; ox < node.shape[2]; ++ox) {
              float acc = 0.0f;
              for (std::size_t dy = 0; dy < win; ++dy) {
                const float* row = x->data() + (c * x->dim(1) + oy * win + dy) * in_w + ox * win;
                for (std::size_t dx = 0; dx < win; ++dx) acc += row[dx];
              }
              out[(c * node.shape[1] + oy) * node.shape[2] + ox] = acc * scale;
            }
          }
        }
        break;
      }
      case OpKind::global_avg_pool: {
        const std::size_t inner = detail::spatial(x->shape());
        const float scale = 1.0f / static_cast<float>(inner);
        for (std::size_t c = 0; c < node.shape[0]; ++c) {
          float acc = 0.0f;
          for (std::size_t j = 0; j < inner; ++j) acc += (*x)[c * inner + j];
          out[c] = acc * scale;
        }
        break;
      }
    }

    for (const ClampSpec& clamp : options.clamps) {
      if (index_of(clamp.node) != i) continue;
      if (clamp.low.size() != out.size() || clamp.high.size() != out.size()) {
        throw ConfigError("clamp bounds do not match node " + node.name);
      }
      auto& mask = tape.pass_masks_[i];
      mask.assign(out.size(), 1);
      for (std::size_t j = 0; j < out.size(); ++j) {
        if (out[j] < clamp.low[j]) {
          out[j] = clamp.low[j];
          mask[j] = 0;
        } else if (out[j] > clamp.high[j]) {
          out[j] = clamp.high[j];
          mask[j] = 0;
        }
      }
    }

    if (!out.all_finite()) throw NumericalError("non-finite activation at node " + node.name);
  }
}

inline Tape forward(const Graph& graph, const Parameters& params, const Tensor& input,
                    const ForwardOptions& options = {}) {
  Tape tape;
  forward(graph, params, input, tape, options);
  return tape;
}

/// Reverse pass. Seeds on the same node are summed. Nodes the seeds do not reach keep zero
/// gradient. ReLU passes no gradient at exactly zero pre-activation.
inline void backward(Tape& tape, std::span<const Seed> seeds,
                     GradientTargets targets = GradientTargets::input_only) {
  if (!tape.recorded()) throw UsageError("backward called on an empty tape");
  const Graph& graph = *tape.graph_;
  const Parameters& params = *tape.params_;
  const auto& nodes = graph.nodes();

  tape.grads_.resize(nodes.size());
  tape.reached_.assign(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    tape.grads_[i].reshape_to(nodes[i].shape);
    tape.grads_[i].fill(0.0f);
  }
  const bool want_params = targets == GradientTargets::input_and_parameters;
  if (want_params) {
    for (const auto& [name, shape] : graph.parameter_shapes()) {
      Tensor& g = tape.param_grads_[name];
      g.reshape_to(shape);
      g.fill(0.0f);
    }
  }

  for (const Seed& seed : seeds) {
    if (index_of(seed.node) >= nodes.size()) throw UsageError("seed on an unrecorded node");
    Tensor& g = tape.grads_[index_of(seed.node)];
    if (seed.gradient.size() != g.size()) {
      throw UsageError("seed for node " + nodes[index_of(seed.node)].name + " has " +
                       std::to_string(seed.gradient.size()) + " values, expected " +
                       std::to_string(g.size()));
    }
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += seed.gradient[j];
    tape.reached_[index_of(seed.node)] = 1;
  }

  for (std::size_t i = nodes.size(); i-- > 0;) {
    if (!tape.reached_[i]) continue;
    const Node& node = nodes[i];
    Tensor& g = tape.grads_[i];
    if (!tape.pass_masks_[i].empty()) {
      const auto& mask = tape.pass_masks_[i];
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (!mask[j]) g[j] = 0.0f;
      }
    }
    if (node.inputs.empty()) continue;

    const std::size_t src = index_of(node.inputs[0]);
    Tensor& gx = tape.grads_[src];
    const Tensor& x = tape.activations_[src];
    tape.reached_[src] = 1;

    switch (node.kind) {
      case OpKind::input:
        break;
      case OpKind::logits:
        for (std::size_t j = 0; j < g.size(); ++j) gx[j] += g[j];
        break;
      case OpKind::conv2d: {
        const Tensor& wt = detail::param_of(params, node);
        kernels::conv2d_backward_input(g.data(), x.dim(0), x.dim(1), x.dim(2), wt.data(),
                                       node.shape[0], node.kernel, gx.data());
        if (want_params) {
          kernels::conv2d_backward_weight(g.data(), x.data(), x.dim(0), x.dim(1), x.dim(2),
                                          node.shape[0], node.kernel,
                                          tape.param_grads_[node.param].data());
        }
        break;
      }
      case OpKind::dense: {
        const Tensor& wt = detail::param_of(params, node);
        const std::size_t n_in = x.size();
        for (std::size_t o = 0; o < node.shape[0]; ++o) {
          const float go = g[o];
          if (go == 0.0f) continue;
          const float* row = wt.data() + o * n_in;
          for (std::size_t j = 0; j < n_in; ++j) gx[j] += go * row[j];
        }
        if (want_params) {
          float* gw = tape.param_grads_[node.param].data();
          for (std::size_t o = 0; o < node.shape[0]; ++o) {
            for (std::size_t j = 0; j < n_in; ++j) gw[o * n_in + j] += g[o] * x[j];
          }
        }
        break;
      }
      case OpKind::bias_add: {
        for (std::size_t j = 0; j < g.size(); ++j) gx[j] += g[j];
        if (want_params) {
          float* gb = tape.param_grads_[node.param].data();
          const std::size_t inner = detail::spatial(node.shape);
          for (std::size_t c = 0; c < node.shape[0]; ++c) {
            float acc = 0.0f;
            for (std::size_t j = 0; j < inner; ++j) acc += g[c * inner + j];
            gb[c] += acc;
          }
        }
        break;
      }
      case OpKind::relu:
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (x[j] > 0.0f) gx[j] += g[j];
        }
        break;
      case OpKind::add: {
        const std::size_t src_b = index_of(node.inputs[1]);
        Tensor& gy = tape.grads_[src_b];
        tape.reached_[src_b] = 1;
        for (std::size_t j = 0; j < g.size(); ++j) {
          gx[j] += g[j];
          gy[j] += g[j];
        }
        break;
      }
      case OpKind::avg_pool: {
        const std::size_t win = node.window;
        const std::size_t in_w = x.dim(2);
        const float scale = 1.0f / static_cast<float>(win * win);
        for (std::size_t c = 0; c < node.shape[0]; ++c) {
          for (std::size_t oy = 0; oy < node.shape[1]; ++oy) {
            for (std::size_t ox = 0; ox < node.shape[2]; ++ox) {
              const float share = g[(c * node.shape[1] + oy) * node.shape[2] + ox] * scale;
              for (std::size_t dy = 0; dy < win; ++dy) {
                float* row = gx.data() + (c * x.dim(1) + oy * win + dy) * in_w + ox * win;
                for (std::size_t dx = 0; dx < win; ++dx) row[dx] += share;
              }
            }
          }
        }
        break;
      }
      case OpKind::global_avg_pool: {
        const std::size_t inner = detail::spatial(x.shape());
        const float scale = 1.0f / static_cast<float>(inner);
        for (std::size_t c = 0; c < node.shape[0]; ++c) {
          const float share = g[c] * scale;
          for (std::size_t j = 0; j < inner; ++j) gx[c * inner + j] += share;
        }
        break;
      }
    }
  }
}

}  // namespace deepbound
