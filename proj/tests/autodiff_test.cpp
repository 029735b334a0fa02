// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "deepbound/autodiff.hpp"
#include "deepbound/classify.hpp"
#include "deepbound/model.hpp"
#include "support/primitives.hpp"
#include "support/reference.hpp"

namespace deepbound {
namespace {

using testing::check_input_gradient;
using testing::Primitive;
using testing::primitives;
using testing::close_graph;
using testing::random_parameters;

TEST(Autodiff, PrimitiveInputGradientsMatchFiniteDifferences) {
  for (const Primitive& prim : primitives()) {
    const Graph g = prim.build();
    Parameters p = random_parameters(g, 17);
    if (p.count("shift")) p.at("shift").fill(-0.5f);  // put relu kinks inside the input range
    const auto r = check_input_gradient(g, p, 20, 99);
    EXPECT_EQ(r.points, 20u) << prim.name;
    EXPECT_LE(r.worst, 1e-3) << prim.name;
  }
}

TEST(Autodiff, ArchitectureInputGradientsMatchFiniteDifferences) {
  for (const ModelSpec& spec : {ModelSpec::plain_cnn(), ModelSpec::res_cnn()}) {
    const Model m = Model::initialized(spec, 4);
    const auto r = check_input_gradient(m.graph, m.params, 5, 7, 4);
    EXPECT_EQ(r.points, 5u) << spec.architecture;
    EXPECT_LE(r.worst, 1e-3) << spec.architecture;
  }
}

TEST(Autodiff, ParameterGradientsMatchFiniteDifferences) {
  const Model m = Model::initialized(ModelSpec::res_cnn(), 3);
  Tensor x(m.graph.input_shape());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>((i * 37 % 101) / 101.0);
  std::vector<float> g(10);
  Tape tape = forward(m.graph, m.params, x);
  cross_entropy(tape.logits().values(), 2, g);
  const Seed s{m.graph.logits(), g};
  backward(tape, {&s, 1}, GradientTargets::input_and_parameters);

  const std::vector<double> xd(x.values().begin(), x.values().end());
  auto loss = [&](const Parameters& p, std::vector<double>* kinks) {
    const auto acts = testing::reference_forward(m.graph, p, xd);
    if (kinks) *kinks = testing::relu_inputs(m.graph, acts);
    const auto& z = acts.back();
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    return -(z[2] - mx - std::log(sum));
  };
  std::vector<double> base_kinks;
  loss(m.params, &base_kinks);
  for (const auto& [name, grad] : tape.parameter_gradients()) {
    const std::size_t j = grad.size() / 3;
    Parameters p = m.params;
    const float orig = p.at(name)[j];
    bool checked = false;
    for (float h : {1e-3f, 1e-4f, 1e-5f}) {
      std::vector<double> kp, km;
      p.at(name)[j] = orig + h;
      const double a = loss(p, &kp);
      p.at(name)[j] = orig - h;
      const double b = loss(p, &km);
      if (!testing::same_signs(base_kinks, kp) || !testing::same_signs(base_kinks, km)) continue;
      const double fd = (a - b) / (static_cast<double>(orig + h) - static_cast<double>(orig - h));
      EXPECT_NEAR(grad[j], fd, 1e-3 * std::max(1.0, std::abs(fd))) << name;
      checked = true;
      break;
    }
    EXPECT_TRUE(checked) << name;
  }
}

TEST(Autodiff, ReluSubgradientIsZeroAtZero) {
  GraphBuilder b;
  auto x = b.input({3});
  const Graph g = close_graph(b, b.relu(x, "relu"));
  const Tensor in({3}, {-1.0f, 0.0f, 2.0f});
  Tape tape = forward(g, {}, in);
  const std::vector<float> seed{1.0f, 1.0f, 1.0f};
  const Seed s{g.logits(), seed};
  backward(tape, {&s, 1});
  EXPECT_EQ(tape.input_gradient(), Tensor({3}, {0.0f, 0.0f, 1.0f}));
}

TEST(Autodiff, SeedsOnSeveralNodesAreSummed) {
  GraphBuilder b;
  auto x = b.input({2});
  auto r = b.relu(x, "relu");
  const Graph g = close_graph(b, r);
  const Tensor in({2}, {1.0f, 2.0f});
  Tape tape = forward(g, {}, in);
  const std::vector<float> s1{1.0f, 0.0f}, s2{0.5f, 3.0f};
  const std::vector<Seed> seeds{{r, s1}, {g.logits(), s2}};
  backward(tape, seeds);
  EXPECT_EQ(tape.input_gradient(), Tensor({2}, {1.5f, 3.0f}));
}

TEST(Autodiff, ClampedEntriesBlockGradient) {
  GraphBuilder b;
  auto x = b.input({3});
  auto r = b.relu(x, "relu");
  const Graph g = close_graph(b, r);
  const std::vector<float> lo{0.0f, 0.0f, 0.0f}, hi{0.5f, 5.0f, 5.0f};
  const ClampSpec clamp{r, lo, hi};
  const ForwardOptions opt{{&clamp, 1}};
  Tape tape = forward(g, {}, Tensor({3}, {1.0f, 2.0f, 3.0f}), opt);
  EXPECT_EQ(tape.logits(), Tensor({3}, {0.5f, 2.0f, 3.0f}));
  const std::vector<float> seed{1.0f, 1.0f, 1.0f};
  const Seed s{g.logits(), seed};
  backward(tape, {&s, 1});
  EXPECT_EQ(tape.input_gradient(), Tensor({3}, {0.0f, 1.0f, 1.0f}));
}

TEST(Autodiff, RejectsWrongInputShape) {
  const Model m = Model::initialized(ModelSpec::plain_cnn(), 1);
  EXPECT_THROW(forward(m.graph, m.params, Tensor({3, 16, 16})), ConfigError);
}

TEST(Autodiff, NonFiniteActivationRaisesNumericalError) {
  const Model m = Model::initialized(ModelSpec::plain_cnn(), 1);
  Tensor x(m.graph.input_shape(), 0.5f);
  x[10] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(forward(m.graph, m.params, x), NumericalError);
}

TEST(Autodiff, BackwardValidatesSeeds) {
  GraphBuilder b;
  auto x = b.input({2});
  const Graph g = close_graph(b, x);
  Tape empty;
  const std::vector<float> ok{1.0f, 1.0f}, bad{1.0f};
  const Seed good{g.logits(), ok};
  EXPECT_THROW(backward(empty, {&good, 1}), UsageError);
  Tape tape = forward(g, {}, Tensor({2}, {1.0f, 1.0f}));
  const Seed wrong_size{g.logits(), bad};
  EXPECT_THROW(backward(tape, {&wrong_size, 1}), UsageError);
  const Seed wrong_node{static_cast<NodeId>(7), ok};
  EXPECT_THROW(backward(tape, {&wrong_node, 1}), UsageError);
}

TEST(Autodiff, TapeReuseGivesIdenticalResults) {
  const Model m = Model::initialized(ModelSpec::res_cnn(), 2);
  Tensor a(m.graph.input_shape(), 0.25f), c(m.graph.input_shape(), 0.75f);
  Tape tape;
  forward(m.graph, m.params, a, tape);
  const Tensor first = tape.logits();
  forward(m.graph, m.params, c, tape);
  forward(m.graph, m.params, a, tape);
  EXPECT_EQ(tape.logits(), first);
}

TEST(Graph, BuilderValidatesShapes) {
  GraphBuilder b;
  auto x = b.input({2, 4, 4});
  EXPECT_THROW(b.conv2d(x, "even", 3, 2), ConfigError);
  EXPECT_THROW(b.avg_pool(x, "pool", 3), ConfigError);
  auto v = b.dense(x, "fc", 3);
  EXPECT_THROW(b.add(x, v, "sum"), ConfigError);
  EXPECT_THROW(b.relu(x, "fc"), ConfigError);  // duplicate name
  EXPECT_THROW(b.logits(x), ConfigError);
}

TEST(Graph, CheckParametersReportsMissingAndMisshapen) {
  const Graph g = build_graph(ModelSpec::plain_cnn());
  Parameters p = init_parameters(g, 1);
  EXPECT_NO_THROW(g.check_parameters(p));
  Parameters missing = p;
  missing.erase("conv1.w");
  EXPECT_THROW(g.check_parameters(missing), ConfigError);
  Parameters wrong = p;
  wrong.at("fc.b") = Tensor({3});
  EXPECT_THROW(g.check_parameters(wrong), ConfigError);
}

}  // namespace
}  // namespace deepbound
