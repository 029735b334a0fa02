// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deepbound/error.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

enum class NodeId : std::uint32_t {};

constexpr std::size_t index_of(NodeId id) noexcept { return static_cast<std::size_t>(id); }

enum class OpKind {
  input,
  conv2d,
  dense,
  bias_add,
  relu,
  add,
  avg_pool,
  global_avg_pool,
  logits,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::conv2d: return "conv2d";
    case OpKind::dense: return "dense";
    case OpKind::bias_add: return "bias_add";
    case OpKind::relu: return "relu";
    case OpKind::add: return "add";
    case OpKind::avg_pool: return "avg_pool";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::logits: return "logits";
  }
  return "unknown";
}

struct Node {
  OpKind kind = OpKind::input;
  std::string name;
  std::vector<NodeId> inputs;
  std::string param;  // weight or bias name; empty for parameter-free ops
  Shape shape;        // activation shape
  std::size_t kernel = 0;  // conv2d
  std::size_t window = 0;  // avg_pool
};

using Parameters = std::map<std::string, Tensor>;

/// Immutable DAG of primitive ops in topological (construction) order.
class Graph {
 public:
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(index_of(id)); }
  std::size_t size() const noexcept { return nodes_.size(); }

  NodeId input() const noexcept { return NodeId{0}; }
  NodeId logits() const noexcept { return static_cast<NodeId>(nodes_.size() - 1); }

  const Shape& input_shape() const { return nodes_.front().shape; }
  std::size_t class_count() const { return nodes_.back().shape.front(); }

  const std::map<std::string, Shape>& parameter_shapes() const noexcept { return param_shapes_; }

  const std::vector<NodeId>& consumers(NodeId id) const { return consumers_.at(index_of(id)); }

  std::optional<NodeId> find(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].name == name) return static_cast<NodeId>(i);
    }
    return std::nullopt;
  }

  NodeId at(std::string_view name) const {
    if (auto id = find(name)) return *id;
    throw UsageError("no node named " + std::string(name));
  }

  /// Throws ConfigError unless every parameter is present with the declared shape.
  void check_parameters(const Parameters& params) const {
    for (const auto& [name, shape] : param_shapes_) {
      auto it = params.find(name);
      if (it == params.end()) throw ConfigError("missing parameter " + name);
      if (it->second.shape() != shape) {
        throw ConfigError("parameter " + name + " has shape " + to_string(it->second.shape()) +
                          ", expected " + to_string(shape));
      }
    }
    for (const auto& [name, _] : params) {
      if (!param_shapes_.count(name)) throw ConfigError("unexpected parameter " + name);
    }
  }

 private:
  friend class GraphBuilder;

  std::vector<Node> nodes_;
  std::vector<std::vector<NodeId>> consumers_;
  std::map<std::string, Shape> param_shapes_;
};

/// Appends nodes in order; shapes are inferred and checked eagerly.
class GraphBuilder {
 public:
  NodeId input(Shape shape, std::string name = "input") {
    if (!graph_.nodes_.empty()) throw ConfigError("input must be the first node");
    if (shape.empty() || element_count(shape) == 0) throw ConfigError("bad input shape");
    return push({OpKind::input, std::move(name), {}, {}, std::move(shape)});
  }

  /// Stride 1, "same" zero padding, odd kernel size.
  NodeId conv2d(NodeId x, std::string name, std::size_t out_channels, std::size_t kernel) {
    const Shape& in = shape_of(x);
    if (in.size() != 3) throw ConfigError(name + ": conv2d expects a CxHxW input");
    if (kernel % 2 == 0) throw ConfigError(name + ": conv2d kernel must be odd");
    std::string param = name + ".w";
    declare(param, {out_channels, in[0], kernel, kernel});
    Node n{OpKind::conv2d, std::move(name), {x}, std::move(param), {out_channels, in[1], in[2]}};
    n.kernel = kernel;
    return push(std::move(n));
  }

  NodeId dense(NodeId x, std::string name, std::size_t out_features) {
    const std::size_t in = element_count(shape_of(x));
    std::string param = name + ".w";
    declare(param, {out_features, in});
    return push({OpKind::dense, std::move(name), {x}, std::move(param), {out_features}});
  }

  /// Adds a per-channel bias (leading axis). The parameter shares the node's name.
  NodeId bias_add(NodeId x, std::string name) {
    const Shape in = shape_of(x);
    std::string param = name;
    declare(param, {in.front()});
    return push({OpKind::bias_add, std::move(name), {x}, std::move(param), in});
  }

  NodeId relu(NodeId x, std::string name) {
    return push({OpKind::relu, std::move(name), {x}, {}, shape_of(x)});
  }

  NodeId add(NodeId a, NodeId b, std::string name) {
    if (shape_of(a) != shape_of(b)) {
      throw ConfigError(name + ": add operands differ in shape " + to_string(shape_of(a)) +
                        " vs " + to_string(shape_of(b)));
    }
    return push({OpKind::add, std::move(name), {a, b}, {}, shape_of(a)});
  }

  /// Non-overlapping window (stride equals window).
  NodeId avg_pool(NodeId x, std::string name, std::size_t window) {
    const Shape& in = shape_of(x);
    if (in.size() != 3 || window == 0 || in[1] % window || in[2] % window) {
      throw ConfigError(name + ": avg_pool window must divide the spatial extent");
    }
    Node n{OpKind::avg_pool, std::move(name), {x}, {}, {in[0], in[1] / window, in[2] / window}};
    n.window = window;
    return push(std::move(n));
  }

  NodeId global_avg_pool(NodeId x, std::string name) {
    const Shape& in = shape_of(x);
    if (in.size() != 3) throw ConfigError(name + ": global_avg_pool expects a CxHxW input");
    return push({OpKind::global_avg_pool, std::move(name), {x}, {}, {in[0]}});
  }

  NodeId logits(NodeId x, std::string name = "logits") {
    if (shape_of(x).size() != 1) throw ConfigError("logits must be a vector");
    return push({OpKind::logits, std::move(name), {x}, {}, shape_of(x)});
  }

  Graph finish() && {
    if (graph_.nodes_.empty() || graph_.nodes_.back().kind != OpKind::logits) {
      throw ConfigError("graph must end in a logits node");
    }
    return std::move(graph_);
  }

 private:
  const Shape& shape_of(NodeId id) const {
    if (index_of(id) >= graph_.nodes_.size()) throw ConfigError("unknown node id");
    if (graph_.nodes_.back().kind == OpKind::logits) throw ConfigError("graph already finished");
    return graph_.nodes_[index_of(id)].shape;
  }

  void declare(const std::string& param, Shape shape) {
    if (!graph_.param_shapes_.emplace(param, std::move(shape)).second) {
      throw ConfigError("duplicate parameter " + param);
    }
  }

  NodeId push(Node n) {
    if (graph_.find(n.name)) throw ConfigError("duplicate node name " + n.name);
    const auto id = static_cast<NodeId>(graph_.nodes_.size());
    for (NodeId in : n.inputs) graph_.consumers_[index_of(in)].push_back(id);
    graph_.nodes_.push_back(std::move(n));
    graph_.consumers_.emplace_back();
    return id;
  }

  Graph graph_;
};

}  // namespace deepbound
