// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "deepbound/graph.hpp"

namespace deepbound::testing {

inline Graph close_graph(GraphBuilder& b, NodeId out) {
  b.logits(out);
  return std::move(b).finish();
}

struct Primitive {
  const char* name;
  std::function<Graph()> build;
};

inline std::vector<Primitive> primitives() {
  return {
      {"conv2d",
       [] {
         GraphBuilder b;
         auto x = b.input({2, 5, 5});
         auto c = b.conv2d(x, "conv", 3, 3);
         return close_graph(b, b.dense(c, "fc", 4));
       }},
      {"conv2d_5x5",
       [] {
         GraphBuilder b;
         auto x = b.input({1, 6, 6});
         auto c = b.conv2d(x, "conv", 2, 5);
         return close_graph(b, b.dense(c, "fc", 3));
       }},
      {"dense",
       [] {
         GraphBuilder b;
         auto x = b.input({7});
         return close_graph(b, b.dense(x, "fc", 4));
       }},
      {"bias_add",
       [] {
         GraphBuilder b;
         auto x = b.input({2, 3, 3});
         auto y = b.bias_add(x, "bias");
         return close_graph(b, b.dense(y, "fc", 3));
       }},
      {"relu",
       [] {
         GraphBuilder b;
         auto x = b.input({2, 4, 4});
         auto y = b.relu(b.bias_add(x, "shift"), "relu");
         return close_graph(b, b.dense(y, "fc", 3));
       }},
      {"add",
       [] {
         GraphBuilder b;
         auto x = b.input({2, 4, 4});
         auto s = b.add(b.conv2d(x, "a", 2, 3), b.conv2d(x, "b", 2, 1), "sum");
         return close_graph(b, b.dense(s, "fc", 3));
       }},
      {"avg_pool",
       [] {
         GraphBuilder b;
         auto x = b.input({2, 6, 6});
         auto y = b.avg_pool(x, "pool", 3);
         return close_graph(b, b.dense(y, "fc", 3));
       }},
      {"global_avg_pool",
       [] {
         GraphBuilder b;
         auto x = b.input({3, 4, 4});
         return close_graph(b, b.global_avg_pool(x, "gap"));
       }},
      {"logits",
       [] {
         GraphBuilder b;
         auto x = b.input({5});
         return close_graph(b, x);
       }},
  };
}

}  // namespace deepbound::testing
