// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deepbound/autodiff.hpp"
#include "deepbound/dataset.hpp"
#include "deepbound/distribution.hpp"
#include "deepbound/error.hpp"
#include "deepbound/graph.hpp"
#include "deepbound/model.hpp"
#include "deepbound/parallel.hpp"
#include "deepbound/serialization.hpp"

namespace deepbound {

/// A set of whole nodes whose activations together cut every input-to-logits path.
/// Neurons are the nodes' activations concatenated in node order.
struct Plane {
  std::size_t id = 0;
  std::vector<NodeId> nodes;
  std::string name;
  std::size_t neuron_count = 0;

  friend bool operator==(const Plane&, const Plane&) = default;
};

/// True if no input-to-logits path survives once `removed` nodes are deleted.
inline bool is_cut(const Graph& graph, std::span<const NodeId> removed) {
  std::vector<std::uint8_t> blocked(graph.size(), 0), seen(graph.size(), 0);
  for (NodeId id : removed) blocked.at(index_of(id)) = 1;
  if (blocked[index_of(graph.input())]) return true;
  std::vector<NodeId> stack{graph.input()};
  seen[index_of(graph.input())] = 1;
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    if (id == graph.logits()) return false;
    for (NodeId next : graph.consumers(id)) {
      const std::size_t k = index_of(next);
      if (!blocked[k] && !seen[k]) {
        seen[k] = 1;
        stack.push_back(next);
      }
    }
  }
  return true;
}

/// Every single node that is a cut on its own, in graph order, followed by the operand pair of
/// each two-input add when that pair is a cut.
inline std::vector<Plane> enumerate_planes(const Graph& graph) {
  std::vector<Plane> planes;
  auto emit = [&](std::vector<NodeId> nodes) {
    Plane p;
    p.id = planes.size();
    for (NodeId n : nodes) {
      const Node& node = graph.node(n);
      p.name += (p.name.empty() ? "" : "+") + node.name;
      p.neuron_count += element_count(node.shape);
    }
    p.nodes = std::move(nodes);
    planes.push_back(std::move(p));
  };
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const NodeId id = static_cast<NodeId>(i);
    if (is_cut(graph, {&id, 1})) emit({id});
  }
  for (const Node& node : graph.nodes()) {
    if (node.kind == OpKind::add && is_cut(graph, node.inputs)) emit(node.inputs);
  }
  return planes;
}

inline const Plane& plane_by_id(std::span<const Plane> planes, std::size_t id) {
  for (const Plane& p : planes) {
    if (p.id == id) return p;
  }
  throw UsageError("no plane with id " + std::to_string(id));
}

inline const Plane& plane_by_name(std::span<const Plane> planes, std::string_view name) {
  for (const Plane& p : planes) {
    if (p.name == name) return p;
  }
  throw UsageError("no plane named " + std::string(name));
}

/// Copies the plane's neurons out of a recorded tape.
inline void gather_plane(const Tape& tape, const Plane& plane, std::span<float> out) {
  std::size_t k = 0;
  for (NodeId n : plane.nodes) {
    for (float v : tape.activation(n).values()) out[k++] = v;
  }
}

inline std::vector<float> gather_plane(const Tape& tape, const Plane& plane) {
  std::vector<float> out(plane.neuron_count);
  gather_plane(tape, plane, out);
  return out;
}

struct PlaneProfile {
  Plane plane;
  std::vector<NeuronDistribution> neurons;
  std::vector<double> scores;
  double aggregate = 0.0;  // median score over non-degenerate neurons
};

inline constexpr std::size_t min_profile_samples = 64;

inline double aggregate_score(const std::vector<NeuronDistribution>& neurons,
                              const std::vector<double>& scores) {
  std::vector<double> live;
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    if (!neurons[i].degenerate()) live.push_back(scores[i]);
  }
  if (live.empty()) return 0.0;
  std::sort(live.begin(), live.end());
  const std::size_t m = live.size() / 2;
  return live.size() % 2 ? live[m] : 0.5 * (live[m - 1] + live[m]);
}

inline PlaneProfile make_profile(Plane plane, std::vector<NeuronDistribution> neurons) {
  PlaneProfile p{std::move(plane), std::move(neurons), {}, 0.0};
  p.scores.resize(p.neurons.size());
  // Scores are kept at file precision so a saved profile reloads identically.
  parallel_for(p.neurons.size(), [&](std::size_t i) {
    p.scores[i] = static_cast<float>(normality_score(p.neurons[i]));
  });
  p.aggregate = aggregate_score(p.neurons, p.scores);
  return p;
}

/// Profiles several planes, one forward pass per sample for each group of planes that fits a
/// fixed memory budget.
inline std::vector<PlaneProfile> profile_planes(const Model& model, const LabeledDataset& data,
                                                std::span<const Plane> planes) {
  if (data.size() < min_profile_samples) {
    throw UsageError("profiling needs at least " + std::to_string(min_profile_samples) +
                     " samples, got " + std::to_string(data.size()));
  }
  constexpr std::size_t budget = std::size_t{1} << 25;  // floats held at once
  const std::size_t n = data.size();
  std::vector<PlaneProfile> out;
  std::size_t begin = 0;
  while (begin < planes.size()) {
    std::size_t end = begin, width = 0;
    while (end < planes.size() && (end == begin || (width + planes[end].neuron_count) * n <= budget)) {
      width += planes[end++].neuron_count;
    }
    std::vector<float> samples(width * n);  // [sample][neuron]
    parallel_for(n, [&](std::size_t s) {
      Tape tape;
      forward(model.graph, model.params, data.images[s], tape);
      float* row = samples.data() + s * width;
      for (std::size_t p = begin; p < end; ++p) {
        gather_plane(tape, planes[p], {row, planes[p].neuron_count});
        row += planes[p].neuron_count;
      }
    });
    std::size_t offset = 0;
    for (std::size_t p = begin; p < end; ++p) {
      std::vector<NeuronDistribution> neurons(planes[p].neuron_count);
      parallel_for(neurons.size(), [&](std::size_t i) {
        std::vector<float> column(n);
        for (std::size_t s = 0; s < n; ++s) column[s] = samples[s * width + offset + i];
        neurons[i] = NeuronDistribution::from_samples(std::move(column));
      });
      offset += planes[p].neuron_count;
      out.push_back(make_profile(planes[p], std::move(neurons)));
    }
    begin = end;
  }
  return out;
}

inline PlaneProfile profile_plane(const Model& model, const LabeledDataset& data, const Plane& plane) {
  return std::move(profile_planes(model, data, {&plane, 1}).front());
}

/// Whether a plane is a candidate for bounding: a feature-map site past the input that is not a
/// convolution output consumed only by its own bias (that site duplicates the biased one).
inline bool is_selectable(const Graph& graph, const Plane& plane) {
  for (NodeId n : plane.nodes) {
    const Node& node = graph.node(n);
    if (n == graph.input() || node.shape.size() != 3) return false;
    if (plane.nodes.size() == 1 && (node.kind == OpKind::conv2d || node.kind == OpKind::dense)) {
      const auto& next = graph.consumers(n);
      if (next.size() == 1 && graph.node(next.front()).kind == OpKind::bias_add) return false;
    }
  }
  return true;
}

/// Top-k plane ids by aggregate score, ties broken by lower id.
inline std::vector<std::size_t> select_planes(std::span<const PlaneProfile> profiles, std::size_t k) {
  if (k > profiles.size()) throw UsageError("cannot select more planes than were profiled");
  std::vector<const PlaneProfile*> order;
  for (const auto& p : profiles) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(), [](const PlaneProfile* a, const PlaneProfile* b) {
    if (a->aggregate != b->aggregate) return a->aggregate > b->aggregate;
    return a->plane.id < b->plane.id;
  });
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < k; ++i) ids.push_back(order[i]->plane.id);
  return ids;
}

// DBP1 record: "DBP1", u32 plane id, u32 neuron count, then per neuron 1025 f32 table entries and
// an f32 normality score. A profile file is a sequence of records.
inline void append_profile(std::string& out, const PlaneProfile& p) {
  out += "DBP1";
  detail::put_u32(out, static_cast<std::uint32_t>(p.plane.id));
  detail::put_u32(out, static_cast<std::uint32_t>(p.neurons.size()));
  for (std::size_t i = 0; i < p.neurons.size(); ++i) {
    for (float q : p.neurons[i].table()) detail::put_f32(out, q);
    detail::put_f32(out, static_cast<float>(p.scores[i]));
  }
}

inline void save_profiles(const std::filesystem::path& path, std::span<const PlaneProfile> profiles) {
  std::string out;
  for (const auto& p : profiles) append_profile(out, p);
  write_file(path, out);
}

/// Reads profiles and re-attaches each to the matching plane of `graph`.
inline std::vector<PlaneProfile> load_profiles(const std::filesystem::path& path, const Graph& graph) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes, path.string());
  const std::vector<Plane> planes = enumerate_planes(graph);
  std::vector<PlaneProfile> out;
  while (!in.at_end()) {
    in.expect_magic("DBP1");
    const std::uint32_t id = in.u32();
    const std::uint32_t count = in.u32();
    if (id >= planes.size()) throw FormatError(path.string() + ": unknown plane id " + std::to_string(id));
    if (count != planes[id].neuron_count) {
      throw FormatError(path.string() + ": plane " + std::to_string(id) + " has " +
                        std::to_string(count) + " neurons, model has " +
                        std::to_string(planes[id].neuron_count));
    }
    if (in.remaining() / (4 * (table_size + 1)) < count) throw FormatError(path.string() + ": truncated");
    PlaneProfile p{planes[id], {}, {}, 0.0};
    p.neurons.reserve(count);
    p.scores.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::vector<float> table(table_size);
      for (float& q : table) q = in.f32();
      p.neurons.push_back(NeuronDistribution::from_table(std::move(table)));
      p.scores.push_back(in.f32());
    }
    p.aggregate = aggregate_score(p.neurons, p.scores);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace deepbound
