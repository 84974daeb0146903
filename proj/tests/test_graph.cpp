// Copyright 2026 The Pathpatch Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <random>

#include "pathpatch/graph.hpp"
#include "pathpatch/graph_io.hpp"
#include "support/fixtures.hpp"

namespace pathpatch {
namespace {

using testing::two_layer;

Graph two_layer_scalar() {
  return build({input_spec("x", {}), scalar_mul_spec("f0", "x", 2.0), op_spec("A", OpKind::kAdd, {"f0", "x"}),
                scalar_mul_spec("f1", "A", 3.0), op_spec("Y", OpKind::kAdd, {"f1", "A"})},
               "Y");
}

TEST(Build, TwoLayerHasFiveNodes) {
  const Graph g = two_layer_scalar();
  EXPECT_EQ(g.size(), 5u);
  EXPECT_EQ(g.output_node().name(), "Y");
  EXPECT_EQ(g.leaves().size(), 1u);
}

TEST(Build, SingleLeafIsItsOwnOutput) {
  const Graph g = build({input_spec("x", {3})}, "x");
  EXPECT_EQ(g.output(), g.id("x"));
  const Tensor v = Tensor::vector({1, 2, 3});
  EXPECT_TRUE(evaluate(g, testing::bind("x", v)).identical(v));
}

TEST(Build, ShapeMismatchNamesNode) {
  try {
    build({input_spec("a", {2, 3}), input_spec("b", {2, 3}), op_spec("m", OpKind::kMatmul, {"a", "b"})}, "m");
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'m'"), std::string::npos) << e.what();
  }
}

TEST(Build, CycleIsStructuralError) {
  EXPECT_THROW(build({input_spec("x", {}), op_spec("a", OpKind::kAdd, {"x", "b"}), op_spec("b", OpKind::kAdd, {"a"})}, "b"),
               StructuralError);
}

TEST(Build, DuplicateAndUnknownNames) {
  EXPECT_THROW(build({input_spec("x", {}), input_spec("x", {})}, "x"), StructuralError);
  EXPECT_THROW(build({input_spec("x", {}), op_spec("a", OpKind::kAdd, {"nope"})}, "a"), StructuralError);
}

TEST(Evaluate, TwoLayerClosedForm) {
  const Graph g = two_layer();
  const Tensor x = Tensor::vector({1, 0});
  const Tensor a = add(matmul(x, testing::two_layer_w0()), x);
  const Tensor want = add(matmul(a, testing::two_layer_w1()), a);
  EXPECT_LE(max_abs_diff(evaluate(g, testing::bind("x", x)), want), 1e-15);
}

TEST(Evaluate, SharedNodeComputedOnce) {
  const Graph g = two_layer();
  EvalStats stats;
  evaluate(g, testing::bind("x", Tensor::vector({0.5, -2})), &stats);
  EXPECT_EQ(stats.of(g.id("A")), 1u);
  EXPECT_EQ(stats.of(g.id("x")), 1u);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_LE(stats.of(k), 1u);
}

TEST(Evaluate, TopologicalOrder) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Graph g = testing::random_dag(rng);
    EvalStats stats;
    evaluate(g, random_binding(g, rng), &stats);
    std::vector<std::size_t> at(g.size(), SIZE_MAX);
    for (std::size_t k = 0; k < stats.order.size(); ++k) at[stats.order[k]] = k;
    for (NodeId n : stats.order)
      for (NodeId i : g.node(n).inputs) EXPECT_LT(at[i], at[n]);
  }
}

TEST(Evaluate, ReferentiallyTransparent) {
  std::mt19937_64 rng(6);
  const Graph g = testing::random_dag(rng);
  const Binding b = random_binding(g, rng);
  EXPECT_TRUE(evaluate(g, b).identical(evaluate(g, b)));
}

TEST(Evaluate, UnboundLeaf) {
  EXPECT_THROW(evaluate(two_layer(), Binding{}), BindingError);
  EXPECT_THROW(evaluate(two_layer(), testing::bind("x", Tensor::vector({1, 2, 3}))), BindingError);
}

TEST(Evaluate, DeadNodeEliminationIsExact) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = testing::random_dag(rng);
    const Graph mid = reroot(g, g.node(g.output() - 1).name());
    const Graph slim = eliminate_dead(mid);
    EXPECT_LE(slim.size(), mid.size());
    const Binding b = random_binding(g, rng);
    EXPECT_TRUE(evaluate(mid, b).identical(evaluate(slim, b)));
  }
}

TEST(GraphText, RoundTripIsExact) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = testing::random_dag(rng);
    const std::string text = graph_to_text(g);
    const Graph h = graph_from_text(text);
    EXPECT_EQ(graph_to_text(h), text);
    const Binding b = random_binding(g, rng);
    EXPECT_TRUE(evaluate(g, b).identical(evaluate(h, b)));
  }
}

TEST(GraphText, ShippedDemoParses) {
  const Graph g = load_graph(std::string(PATHPATCH_SOURCE_DIR) + "/configs/two_layer.graph");
  const Tensor x = Tensor::vector({2, -1});
  EXPECT_LE(max_abs_diff(evaluate(g, testing::bind("x", x)), evaluate(two_layer(), testing::bind("x", x))), 0.0);
}

TEST(GraphText, ErrorsCarryLineNumbers) {
  try {
    graph_from_text("pathpatch-graph 1\noutput y\nnode y bogus-kind\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(graph_from_text("pathpatch-graph 2\noutput y\n"), FormatError);
  EXPECT_THROW(load_graph("/nonexistent/graph.txt"), FileNotFoundError);
}

}  // namespace
}  // namespace pathpatch
