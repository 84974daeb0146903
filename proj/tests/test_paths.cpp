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

#include <functional>
#include <random>

#include "pathpatch/models.hpp"
#include "pathpatch/paths.hpp"
#include "pathpatch/pattern.hpp"
#include "support/fixtures.hpp"

namespace pathpatch {
namespace {

using testing::two_layer;

// x -> [block: h = f(h) + h] * L; f is scalar-mul.
Graph residual_chain(std::size_t layers) {
  std::vector<NodeSpec> s{input_spec("x", {})};
  std::string h = "x";
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string f = "f" + std::to_string(l), r = "r" + std::to_string(l);
    s.push_back(scalar_mul_spec(f, h, 0.5 + static_cast<double>(l)));
    s.push_back(op_spec(r, OpKind::kAdd, {f, h}));
    h = r;
  }
  return build(std::move(s), h);
}

// Independent count: recursion over inputs with no memoization.
std::uint64_t brute_paths(const Graph& g, NodeId n) {
  const Node& node = g.node(n);
  if (node.is_data_leaf()) return 1;
  std::uint64_t c = 0;
  for (NodeId i : node.inputs) c += brute_paths(g, i);
  return c;
}

TEST(Enumerate, TwoLayerHasFourPaths) {
  const Graph g = two_layer();
  const PathSet p = enumerate_paths(g);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(count_paths(g), 4u);
  for (const Path& path : p) {
    EXPECT_EQ(g.node(path.nodes.front()).name(), "x");
    EXPECT_EQ(path.nodes.back(), g.output());
    EXPECT_EQ(path.slots.size() + 1, path.nodes.size());
  }
}

TEST(Enumerate, ChainHasOnePath) {
  const Graph g = build({input_spec("x", {}), scalar_mul_spec("f", "x", 2.0), scalar_mul_spec("y", "f", 3.0)}, "y");
  EXPECT_EQ(enumerate_paths(g).size(), 1u);
}

TEST(Enumerate, ResidualBlocksDoubleThePathCount) {
  for (std::size_t L = 1; L <= 10; ++L) {
    const Graph g = residual_chain(L);
    EXPECT_EQ(enumerate_paths(g).size(), brute_paths(g, g.output()));
    EXPECT_EQ(enumerate_paths(g).size(), std::uint64_t{1} << L);
  }
}

TEST(Enumerate, CapIsACapacityError) {
  const Graph g = residual_chain(21);
  try {
    enumerate_paths(g);
    FAIL();
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("pattern"), std::string::npos);
  }
  EXPECT_THROW(treeify(g), CapacityError);
  EXPECT_EQ(enumerate_paths(residual_chain(4), 16).size(), 16u);
  EXPECT_THROW(enumerate_paths(residual_chain(4), 15), CapacityError);
}

TEST(Enumerate, CanonicalOrder) {
  const Graph g = two_layer();
  const PathSet p = enumerate_paths(g);
  for (std::size_t k = 1; k < p.size(); ++k) EXPECT_TRUE(canonical_less(g, p.paths()[k - 1], p.paths()[k]));
  EXPECT_EQ(path_string(g, p.paths().front()), "x → A → Y");
}

TEST(Treeify, TwoLayerHasFourInputCopies) {
  const Graph g = two_layer();
  const Graph t = treeify(g);
  EXPECT_TRUE(is_tree(t));
  std::size_t copies = 0;
  for (NodeId l : t.leaves()) copies += t.node(l).is_data_leaf();
  EXPECT_EQ(copies, 4u);
  EXPECT_EQ(leaf_paths(t, g).size(), 4u);
}

TEST(Treeify, TreeIsUnchanged) {
  const Graph g = build({input_spec("x", {}), input_spec("z", {}), scalar_mul_spec("f", "x", 2.0),
                         op_spec("y", OpKind::kAdd, {"f", "z"})},
                        "y");
  EXPECT_TRUE(is_tree(g));
  EXPECT_EQ(canonical_form(treeify(g)), canonical_form(g));
}

TEST(Treeify, IdentityOnRandomDags) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Graph g = testing::random_dag(rng);
    const Graph t = treeify(g);
    ASSERT_TRUE(is_tree(t));
    std::size_t copies = 0;
    for (NodeId l : t.leaves()) copies += t.node(l).is_data_leaf();
    EXPECT_EQ(copies, enumerate_paths(g).size());
    const Binding b = random_binding(g, rng);
    EXPECT_LE(max_abs_diff(evaluate(t, b), evaluate(g, b)), 1e-12);
  }
}

TEST(Treeify, CopyOrderDoesNotMatter) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Graph g = testing::random_dag(rng);
    const auto base = canonical_form(treeify(g));
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(canonical_form(treeify(g, seed)), base);
  }
}

TEST(Treeify, LeafPathsMatchEnumeration) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = testing::random_dag(rng);
    std::vector<Path> from_tree;
    for (const auto& [leaf, path] : leaf_paths(treeify(g), g)) from_tree.push_back(path);
    const PathSet a(g, from_tree);
    EXPECT_EQ(a.paths(), enumerate_paths(g).paths());
  }
}

TEST(Pattern, UniversalAndExactOnTwoLayer) {
  const Graph g = two_layer();
  EXPECT_EQ(match_pattern(g, "x … Y").size(), 4u);
  EXPECT_EQ(match_pattern(g, "x ... Y").size(), 4u);
  const PathSet one = match_pattern(g, "x → f0 → A → f1 → Y");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(path_string(g, one.paths()[0]), "x → f0 → A → f1 → Y");
  EXPECT_EQ(match_pattern(g, "x -> f0 -> A -> f1 -> Y").size(), 1u);
  EXPECT_EQ(match_pattern(g, "all").size(), 4u);
  EXPECT_EQ(match_pattern(g, "none").size(), 0u);
  EXPECT_EQ(match_pattern(g, "… f1 …").size(), 2u);
  EXPECT_EQ(match_pattern(g, "x → f*  …").size(), 2u);
}

TEST(Pattern, ComplementPartitions) {
  std::mt19937_64 rng(14);
  const char* pats[] = {"… n1 …", "x0 … n2 … out", "(… n0 …) | (… n3 …)", "… n1 … - … n2 …", "x0 → * …"};
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = testing::random_dag(rng);
    const auto all = enumerate_paths(g);
    for (const char* p : pats) {
      const PathSet in = match_pattern(g, p);
      const PathSet out = match_pattern(g, std::string("not (") + p + ")");
      EXPECT_EQ(in.size() + out.size(), all.size());
      for (const Path& path : all) EXPECT_NE(in.contains(path), out.contains(path));
    }
  }
}

TEST(Pattern, SetAlgebra) {
  const Graph g = two_layer();
  EXPECT_EQ(match_pattern(g, "(… f0 …) & (… f1 …)").size(), 1u);
  EXPECT_EQ(match_pattern(g, "(… f0 …) | (… f1 …)").size(), 3u);
  EXPECT_EQ(match_pattern(g, "(… f0 …) - (… f1 …)").size(), 1u);
  // Left-associative, equal precedence.
  EXPECT_EQ(match_pattern(g, "all - … f0 … | … f1 …").size(), 3u);
}

TEST(Pattern, SyntaxErrorsCarryPosition) {
  try {
    parse_pattern("x -> -> Y");
    FAIL();
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.position(), 5u);
    EXPECT_NE(std::string(e.what()).find("position 5"), std::string::npos);
  }
  EXPECT_THROW(parse_pattern("(x … Y"), SyntaxError);
  EXPECT_THROW(parse_pattern(""), SyntaxError);
  EXPECT_THROW(match_pattern(two_layer(), "tok[$q] … Y"), ArgumentError);
}

// Name sequences of enumerated paths, for cross-checking pattern matches.
std::size_t count_where(const Graph& g, const std::function<bool(const std::vector<std::string>&)>& pred) {
  std::size_t n = 0;
  for (const Path& p : enumerate_paths(g)) {
    std::vector<std::string> names;
    for (NodeId k : p.nodes) names.push_back(g.node(k).name());
    n += pred(names);
  }
  return n;
}

bool has(const std::vector<std::string>& names, const std::string& name) {
  return std::find(names.begin(), names.end(), name) != names.end();
}

TEST(Pattern, ToyTransformerTokenPaths) {
  BuildOptions opt;
  opt.slice_tokens = true;
  const Graph g = build_transformer_graph(construct_induction_model(6, 4), opt);
  // One path per position from each token through 0.0's value into 1.5's key.
  const PathSet v = match_pattern(g, "tok[*] … a0.h0.v … a1.h5.k …");
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.size(), count_where(g, [](const auto& n) { return has(n, "a0.h0.v") && has(n, "a1.h5.k"); }));
  // Element a0.h0 covers the q, k and v ports.
  const PathSet any = match_pattern(g, "tok[*] … a0.h0 … a1.h5.k …");
  EXPECT_EQ(any.size(), 12u);
  EXPECT_EQ(any.size(), count_where(g, [](const auto& n) {
              return (has(n, "a0.h0.q") || has(n, "a0.h0.k") || has(n, "a0.h0.v")) && has(n, "a1.h5.k");
            }));
  // The strict-arrow form needs the nodes in between spelled out.
  EXPECT_EQ(match_pattern(g, "tok[*] → a0.h0 → a1.h5.k → …").size(), 0u);
}

TEST(Pattern, PositionVariables) {
  BuildOptions opt;
  opt.slice_tokens = true;
  const Graph g = build_transformer_graph(construct_induction_model(6, 4), opt);
  const PatternVars vars{{"j", 2}, {"K", 2}};
  const PathSet one = match_pattern(g, "tok[$j] … a0.h0.v … a1.h5.k …", vars);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(g.node(one.paths()[0].nodes.front()).name(), "tok[2]");
  EXPECT_EQ(match_pattern(g, "tok[$j-$K..$j-1] … a0.h0.v … a1.h5.k …", vars).size(), 2u);
  // Ranges clamp at 0.
  EXPECT_EQ(match_pattern(g, "tok[$j-5..$j] … a0.h0.v … a1.h5.k …", vars).size(), 3u);
  EXPECT_EQ(match_pattern(g, "tok[0..3] … a0.h0.v … a1.h5.k …").size(), 4u);
}

}  // namespace
}  // namespace pathpatch
