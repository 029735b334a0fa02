// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "deepbound/error.hpp"
#include "deepbound/graph.hpp"
#include "deepbound/rng.hpp"
#include "deepbound/serialization.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

/// Architecture description. Widths are {first, second, third} feature-map channel counts:
/// plain-cnn uses them for its three conv stages; res-cnn for stem, residual block and head.
struct ModelSpec {
  std::string architecture = "plain-cnn";
  std::vector<std::size_t> widths = {12, 16, 24};
  std::size_t classes = 10;
  Shape input_shape = {3, 32, 32};

  static ModelSpec plain_cnn() { return {"plain-cnn", {12, 16, 24}}; }
  static ModelSpec res_cnn() { return {"res-cnn", {8, 12, 16}}; }

  static ModelSpec named(const std::string& architecture) {
    if (architecture == "plain-cnn") return plain_cnn();
    if (architecture == "res-cnn") return res_cnn();
    throw ConfigError("unknown architecture \"" + architecture + "\"");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Node names inside res-cnn's residual block, used by the profiler and the tests.
namespace res_block {
inline constexpr const char* main_output = "block.conv_b";
inline constexpr const char* shortcut_output = "block.shortcut";
inline constexpr const char* sum = "block.sum";
inline constexpr const char* after_relu = "block.relu";
}  // namespace res_block

inline Graph build_graph(const ModelSpec& spec) {
  if (spec.widths.size() != 3) throw ConfigError("a model needs exactly three widths");
  if (spec.input_shape.size() != 3 || spec.input_shape[1] % 4 || spec.input_shape[2] % 4) {
    throw ConfigError("input must be CxHxW with H and W divisible by 4");
  }
  const auto [w1, w2, w3] = std::tuple{spec.widths[0], spec.widths[1], spec.widths[2]};
  GraphBuilder b;
  NodeId x = b.input(spec.input_shape);
  if (spec.architecture == "plain-cnn") {
    x = b.relu(b.bias_add(b.conv2d(x, "conv1", w1, 3), "conv1.b"), "relu1");
    x = b.avg_pool(x, "pool1", 2);
    x = b.relu(b.bias_add(b.conv2d(x, "conv2", w2, 3), "conv2.b"), "relu2");
    x = b.avg_pool(x, "pool2", 2);
    x = b.relu(b.bias_add(b.conv2d(x, "conv3", w3, 3), "conv3.b"), "relu3");
  } else if (spec.architecture == "res-cnn") {
    // Bias-free convolutions in the block keep each conv a single node.
    x = b.relu(b.bias_add(b.conv2d(x, "stem", w1, 3), "stem.b"), "stem.relu");
    x = b.avg_pool(x, "stem.pool", 2);
    NodeId main = b.relu(b.conv2d(x, "block.conv_a", w2, 3), "block.relu_a");
    main = b.conv2d(main, res_block::main_output, w2, 3);
    NodeId shortcut = b.conv2d(x, res_block::shortcut_output, w2, 1);
    x = b.relu(b.add(main, shortcut, res_block::sum), res_block::after_relu);
    x = b.avg_pool(x, "block.pool", 2);
    x = b.relu(b.bias_add(b.conv2d(x, "head", w3, 3), "head.b"), "head.relu");
  } else {
    throw ConfigError("unknown architecture \"" + spec.architecture + "\"");
  }
  x = b.avg_pool(x, "head.pool", 2);
  x = b.bias_add(b.dense(x, "fc", spec.classes), "fc.b");
  b.logits(x);
  return std::move(b).finish();
}

/// He-normal weights, zero biases except the first convolution's (see below).
inline Parameters init_parameters(const Graph& graph, std::uint64_t seed) {
  Parameters params;
  for (const auto& [name, shape] : graph.parameter_shapes()) {
    Tensor t(shape);
    if (shape.size() > 1) {
      Rng rng(derive_seed(seed, fnv1a(name)));
      const double fan_in = static_cast<double>(element_count(shape) / shape[0]);
      const double sd = std::sqrt(2.0 / fan_in);
      for (float& v : t.values()) v = static_cast<float>(sd * rng.normal());
    }
    params.emplace(name, std::move(t));
  }
  // The first convolution's bias cancels its response to a uniform mid-gray input, which
  // centers the [0,1] pixel range.
  const Node& first = graph.node(graph.consumers(graph.input()).front());
  if (first.kind == OpKind::conv2d) {
    const Node& bias = graph.node(graph.consumers(graph.find(first.name).value()).front());
    if (bias.kind == OpKind::bias_add) {
      const Tensor& w = params.at(first.param);
      Tensor& b = params.at(bias.param);
      const std::size_t per_out = w.size() / w.dim(0);
      for (std::size_t o = 0; o < w.dim(0); ++o) {
        double sum = 0.0;
        for (std::size_t j = 0; j < per_out; ++j) sum += w[o * per_out + j];
        b[o] = static_cast<float>(-0.5 * sum);
      }
    }
  }
  return params;
}

struct Model {
  ModelSpec spec;
  Graph graph;
  Parameters params;

  Model(ModelSpec s, Parameters p) : spec(std::move(s)), graph(build_graph(spec)), params(std::move(p)) {
    graph.check_parameters(params);
  }

  static Model initialized(ModelSpec s, std::uint64_t seed) {
    Graph g = build_graph(s);
    Parameters p = init_parameters(g, seed);
    return Model(std::move(s), std::move(p));
  }
};

/// Recovers the architecture and widths from a parameter set.
inline ModelSpec infer_spec(const Parameters& params) {
  auto dim0 = [&](const std::string& name) -> std::size_t {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter " + name);
    return it->second.dim(0);
  };
  ModelSpec spec;
  if (params.count("block.shortcut.w")) {
    spec = {"res-cnn", {dim0("stem.w"), dim0("block.shortcut.w"), dim0("head.w")}};
  } else if (params.count("conv1.w")) {
    spec = {"plain-cnn", {dim0("conv1.w"), dim0("conv2.w"), dim0("conv3.w")}};
  } else {
    throw ConfigError("parameters match no known architecture");
  }
  spec.classes = dim0("fc.b");
  return spec;
}

// DBW1 layout: "DBW1", u32 tensor count, then per tensor u32 name length, UTF-8 name, .dbt payload.
inline std::string encode_weights(const Parameters& params) {
  std::string out = "DBW1";
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    append_dbt(out, t);
  }
  return out;
}

inline Parameters decode_weights(std::string_view bytes, const std::string& context = "weights") {
  ByteReader in(bytes, context);
  in.expect_magic("DBW1");
  const std::uint32_t count = in.u32();
  Parameters params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = in.u32();
    std::string name(in.take(len));
    if (!params.emplace(name, read_dbt(in)).second) {
      throw FormatError(context + ": duplicate tensor " + name);
    }
  }
  if (!in.at_end()) throw FormatError(context + ": trailing bytes");
  return params;
}

inline void save_model(const std::filesystem::path& path, const Parameters& params) {
  write_file(path, encode_weights(params));
}

inline Parameters load_model(const std::filesystem::path& path) {
  return decode_weights(read_file(path), path.string());
}

/// Loads weights and checks them against `spec`; a mismatch is a ConfigError.
inline Model load_model(const std::filesystem::path& path, const ModelSpec& spec) {
  return Model(spec, load_model(path));
}

inline Model load_any_model(const std::filesystem::path& path) {
  Parameters params = load_model(path);
  ModelSpec spec = infer_spec(params);
  return Model(std::move(spec), std::move(params));
}

}  // namespace deepbound
