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
#include <set>

#include "pathpatch/models.hpp"
#include "pathpatch/rewrites.hpp"
#include "support/fixtures.hpp"

namespace pathpatch {
namespace {

using testing::two_layer;

Graph fused_layer(std::size_t heads, std::size_t n, std::size_t d, std::size_t dh, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.7);
  auto rnd = [&](Shape s) {
    std::vector<double> v(shape_size(s));
    for (double& x : v) x = normal(rng);
    return Tensor(s, v);
  };
  NodeSpec attn = op_spec("a0", OpKind::kAttention, {"x", "x", "x", "W_Q", "W_K", "W_V", "W_O"});
  attn.heads = heads;
  attn.head_dim = dh;
  return build({input_spec("x", {n, d}), constant_spec("W_Q", rnd({d, heads * dh})), constant_spec("W_K", rnd({d, heads * dh})),
                constant_spec("W_V", rnd({d, heads * dh})), constant_spec("W_O", rnd({heads * dh, d})), attn,
                op_spec("y", OpKind::kAdd, {"x", "a0"})},
               "y");
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

std::set<std::string> leaf_names(const Graph& g) {
  std::set<std::string> out;
  for (NodeId l : g.leaves()) out.insert(g.node(l).name());
  return out;
}

TEST(SplitSum, LinearSplitPreservesOutput) {
  const Graph g = two_layer();
  const Tensor w1 = Tensor::matrix({{0.2, 0.3}, {0.1, -4}});
  const Graph s = split_linear(g, "f0", {w1, subtract(testing::two_layer_w0(), w1)});
  EXPECT_LE(compare_graphs(g, s).max_error, 1e-9);
  EXPECT_TRUE(s.find("f0.a") && s.find("f0.b"));
  EXPECT_EQ(leaf_names(s), leaf_names(g));
}

TEST(SplitSum, TwoLayerRightStructure) {
  const Graph g = two_layer();
  const Tensor h = Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}});
  Graph s = split_linear(g, "f0", {h, subtract(testing::two_layer_w0(), h)});
  s = split_linear(s, "f1", {h, subtract(testing::two_layer_w1(), h)});
  for (const char* n : {"f0.a", "f0.b", "f1.a", "f1.b"}) EXPECT_TRUE(s.find(n)) << n;
  EXPECT_EQ(s.node(s.id("f0")).kind(), OpKind::kAdd);
  // A has 3 incoming paths; Y = f1.a(A) + f1.b(A) + A.
  EXPECT_EQ(count_paths(s), 9u);
}

TEST(SplitSum, BadDecompositionIsRejected) {
  const Tensor w1 = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_THROW(split_linear(two_layer(), "f0", {w1, w1}), VerificationError);
  EXPECT_THROW(split_linear(two_layer(), "A", {w1}), ArgumentError);
}

TEST(SplitHeads, EightHeadsSumToFused) {
  const Graph g = fused_layer(8, 5, 6, 3, 1);
  const Graph s = split_attention_heads(g, "a0");
  for (int h = 0; h < 8; ++h)
    for (const char* p : {".q", ".k", ".v", ".attn", ".o"}) EXPECT_TRUE(s.find("a0.h" + std::to_string(h) + p));
  EXPECT_EQ(s.node(s.id("a0")).inputs.size(), 8u);
  EXPECT_LE(compare_graphs(g, s, 100).max_error, 1e-9);
}

TEST(SplitHeads, SingleHead) {
  const Graph g = fused_layer(1, 4, 3, 3, 2);
  const Graph s = split_attention_heads(g, "a0");
  EXPECT_LE(compare_graphs(g, s, 100).max_error, 1e-12);
}

TEST(SplitHeads, RoundTrip) {
  const Graph g = fused_layer(3, 4, 5, 2, 3);
  const Graph m = merge_attention_heads(split_attention_heads(g, "a0"), "a0");
  EXPECT_EQ(m.node(m.id("a0")).kind(), OpKind::kAttention);
  EXPECT_LE(compare_graphs(g, m, 100).max_error, 1e-12);
}

TEST(SplitHeads, NonAttentionRejected) { EXPECT_THROW(split_attention_heads(two_layer(), "A"), ArgumentError); }

TEST(SlicePositions, FourLeavesConcatenate) {
  const Graph g = build({input_spec("tok", {4, 2}), scalar_mul_spec("y", "tok", 2.0)}, "y");
  const Graph s = slice_positions(g, "tok");
  EXPECT_EQ(leaf_names(s), (std::set<std::string>{"tok[0]", "tok[1]", "tok[2]", "tok[3]"}));
  EXPECT_EQ(count_paths(s), 4u);
  EXPECT_LE(compare_graphs(g, s, 100).max_error, 0.0);
}

TEST(SlicePositions, SplicedBinding) {
  const Graph g = build({input_spec("tok", {4}), scalar_mul_spec("y", "tok", 1.0)}, "y");
  const Graph s = slice_positions(g, "tok");
  // Last token from the reference, the others from the counterfactual.
  Binding b;
  b.set("tok", Tensor::vector({9, 8, 7, 6}), LeafTag::kCounterfactual);
  b.set("tok[3]", Tensor::vector({1}), LeafTag::kReference);
  EXPECT_TRUE(evaluate(s, b).identical(Tensor::vector({9, 8, 7, 1})));
}

TEST(SlicePositions, ChainPathCount) {
  const Graph g = build({input_spec("tok", {4}), scalar_mul_spec("f", "tok", 2.0), scalar_mul_spec("y", "f", 3.0)}, "y");
  EXPECT_EQ(count_paths(g), 1u);
  EXPECT_EQ(count_paths(slice_positions(g, "tok")), 4u);
}

TEST(SlicePositions, NeedsPositionAxis) {
  const Graph g = build({input_spec("x", {}), scalar_mul_spec("y", "x", 2.0)}, "y");
  EXPECT_THROW(slice_positions(g, "x"), ArgumentError);
  EXPECT_THROW(slice_positions(g, "y"), ArgumentError);
}

Graph vec_graph() {
  return build({input_spec("x", {3, 4}), constant_spec("W", Tensor::identity(4)), op_spec("h", OpKind::kMatmul, {"x", "W"}),
                op_spec("y", OpKind::kSoftmax, {"h"})},
               "y");
}

TEST(SubspaceSplit, IdentityAndZeroProjectors) {
  const Graph g = vec_graph();
  std::mt19937_64 rng(4);
  const Binding b = random_binding(g, rng);
  const Graph si = subspace_split(g, "h", Tensor::identity(4));
  EXPECT_EQ(max_abs(evaluate(reroot(si, "h.rest"), b)), 0.0);
  const Graph s0 = subspace_split(g, "h", Tensor::zeros({4, 4}));
  EXPECT_EQ(max_abs(evaluate(reroot(s0, "h.proj"), b)), 0.0);
}

TEST(SubspaceSplit, RandomOrthogonalProjector) {
  const Graph g = vec_graph();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  // Rank-2 projector U Uᵀ from Gram-Schmidt on two random vectors.
  std::vector<std::vector<double>> u(2, std::vector<double>(4));
  for (auto& v : u)
    for (double& x : v) x = n(rng);
  auto dot = [](const auto& a, const auto& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const double l0 = std::sqrt(dot(u[0], u[0]));
  for (double& x : u[0]) x /= l0;
  const double c = dot(u[0], u[1]);
  for (std::size_t i = 0; i < 4; ++i) u[1][i] -= c * u[0][i];
  const double l1 = std::sqrt(dot(u[1], u[1]));
  for (double& x : u[1]) x /= l1;
  std::vector<double> p(16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) p[i * 4 + j] = u[0][i] * u[0][j] + u[1][i] * u[1][j];
  const Graph s = subspace_split(g, "h", Tensor({4, 4}, p));
  EXPECT_LE(compare_graphs(g, s, 100).max_error, 1e-12);
  for (int t = 0; t < 20; ++t) {
    const Binding b = random_binding(g, rng);
    EXPECT_LE(max_abs_diff(evaluate(reroot(s, "h.sum"), b), evaluate(reroot(g, "h"), b)), 1e-12);
  }
}

TEST(SubspaceSplit, NonIdempotentRejected) {
  EXPECT_THROW(subspace_split(vec_graph(), "h", scale(Tensor::identity(4), 2.0)), ArgumentError);
  EXPECT_THROW(subspace_split(vec_graph(), "h", Tensor::identity(3)), ShapeError);
}

TEST(MeanSplit, ZeroMeanLeavesNode) {
  const Graph g = vec_graph();
  const Graph s = mean_split(g, "h", Tensor::zeros({3, 4}));
  std::mt19937_64 rng(6);
  const Binding b = random_binding(g, rng);
  EXPECT_TRUE(evaluate(reroot(s, "h.dev"), b).identical(evaluate(reroot(g, "h"), b)));
}

TEST(MeanSplit, ConstantNodeHasZeroRemainder) {
  const Tensor c = Tensor::matrix({{1, 2}, {3, 4}});
  const Graph g = build({input_spec("x", {2, 2}), constant_spec("c", c), op_spec("y", OpKind::kAdd, {"x", "c"})}, "y");
  const Graph s = mean_split(g, "c", c);
  EXPECT_EQ(max_abs(evaluate(reroot(s, "c.dev"), Binding{})), 0.0);
}

TEST(MeanSplit, DatasetMeanReconstructs) {
  const Graph g = vec_graph();
  std::mt19937_64 rng(7);
  std::vector<Binding> data;
  std::vector<double> acc(12, 0.0);
  const Graph h = reroot(g, "h");
  for (int k = 0; k < 100; ++k) {
    data.push_back(random_binding(g, rng));
    const Tensor v = evaluate(h, data.back());
    for (std::size_t i = 0; i < 12; ++i) acc[i] += v[i] / 100.0;
  }
  const Graph s = mean_split(g, "h", Tensor({3, 4}, acc));
  for (const Binding& b : data) EXPECT_LE(max_abs_diff(evaluate(s, b), evaluate(g, b)), 1e-12);
  EXPECT_THROW(mean_split(g, "h", Tensor::zeros({4})), ShapeError);
}

TEST(Rewrites, RandomSequencesCompose) {
  std::mt19937_64 rng(8);
  TransformerConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 4;
  c.d_head = 2;
  c.vocab = 7;
  c.context = 4;
  const WeightBundle w = random_weights(c, rng);
  BuildOptions opt;
  opt.split_heads = false;
  const Graph base = build_transformer_graph(w, opt);
  std::uniform_int_distribution<int> pick(0, 4);
  for (int trial = 0; trial < 8; ++trial) {
    Graph g = base;
    std::vector<std::string> log;
    for (int step = 0; step < 3; ++step) {
      switch (pick(rng)) {
        case 0:
          if (g.node(g.id("a0")).kind() == OpKind::kAttention) g = split_attention_heads(g, "a0");
          log.push_back("split a0");
          break;
        case 1:
          if (g.node(g.id("a1")).kind() == OpKind::kAttention) {
            g = split_attention_heads(g, "a1");
          } else {
            g = merge_attention_heads(g, "a1");
          }
          log.push_back("toggle a1");
          break;
        case 2:
          if (!g.find("tok[0]")) g = slice_positions(g, "tok");
          log.push_back("slice");
          break;
        case 3: {
          const std::string n = "resid" + std::to_string(step % 2 + 1);
          if (!g.find(n + ".sum")) g = subspace_split(g, n, Tensor({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
          log.push_back("subspace " + n);
          break;
        }
        default:
          if (!g.find("ln1.sum")) g = mean_split(g, "ln1", Tensor::full({4, 4}, 0.25));
          log.push_back("mean ln1");
          break;
      }
    }
    EXPECT_LE(compare_graphs(base, g, 100, 100 + trial).max_error, 1e-9) << log[0] << ", " << log[1] << ", " << log[2];
  }
}

}  // namespace
}  // namespace pathpatch
