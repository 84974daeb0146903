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

#pragma once

// Shared graphs and oracles for the test suites.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pathpatch/datasets.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/intervene.hpp"
#include "pathpatch/models.hpp"
#include "pathpatch/paths.hpp"

namespace pathpatch::testing {

inline Tensor mat2(double a, double b, double c, double d) { return Tensor::matrix({{a, b}, {c, d}}); }

inline const Tensor& two_layer_w0() {
  static const Tensor w = mat2(0.5, 1.0, -1.0, 2.0);
  return w;
}
inline const Tensor& two_layer_w1() {
  static const Tensor w = mat2(1.0, 0.5, 0.0, -1.0);
  return w;
}

// A = f0(x) + x, Y = f1(A) + A with f0, f1 linear maps on R^2.
inline Graph two_layer(const Tensor& w0 = two_layer_w0(), const Tensor& w1 = two_layer_w1()) {
  return build({input_spec("x", {2}), constant_spec("W0", w0), op_spec("f0", OpKind::kMatmul, {"x", "W0"}),
                op_spec("A", OpKind::kAdd, {"f0", "x"}), constant_spec("W1", w1),
                op_spec("f1", OpKind::kMatmul, {"A", "W1"}), op_spec("Y", OpKind::kAdd, {"f1", "A"})},
               "Y");
}

// Same wiring with softmax layers, so patched outputs are not linear in x.
inline Graph two_layer_nonlinear() {
  return build({input_spec("x", {3}), constant_spec("W0", Tensor::matrix({{1, -2, 0.5}, {0.3, 1, -1}, {2, 0, 1}})),
                op_spec("f0.lin", OpKind::kMatmul, {"x", "W0"}), op_spec("f0", OpKind::kSoftmax, {"f0.lin"}),
                op_spec("A", OpKind::kAdd, {"f0", "x"}),
                constant_spec("W1", Tensor::matrix({{0.2, 1, -1}, {1.5, -0.5, 0}, {0, 1, 2}})),
                op_spec("f1.lin", OpKind::kMatmul, {"A", "W1"}), op_spec("f1", OpKind::kSoftmax, {"f1.lin"}),
                op_spec("Y", OpKind::kAdd, {"f1", "A"})},
               "Y");
}

inline Tensor nl_f0(const Tensor& x) {
  return softmax(matmul(x, Tensor::matrix({{1, -2, 0.5}, {0.3, 1, -1}, {2, 0, 1}})), 0);
}
inline Tensor nl_f1(const Tensor& a) {
  return softmax(matmul(a, Tensor::matrix({{0.2, 1, -1}, {1.5, -0.5, 0}, {0, 1, 2}})), 0);
}

// Three identical branches f(x) = softmax(xW) averaged by V.
inline Graph ensemble() {
  const Tensor w = Tensor::matrix({{2, -1, 0}, {0.5, 1, 1}, {-1, 0, 3}});
  std::vector<NodeSpec> s{input_spec("x", {3}), constant_spec("W", w)};
  for (const char* f : {"f0", "f1", "f2"}) {
    s.push_back(op_spec(std::string(f) + ".lin", OpKind::kMatmul, {"x", "W"}));
    s.push_back(op_spec(f, OpKind::kSoftmax, {std::string(f) + ".lin"}));
  }
  s.push_back(op_spec("S", OpKind::kAdd, {"f0", "f1", "f2"}));
  s.push_back(scalar_mul_spec("V", "S", 1.0 / 3.0));
  return build(std::move(s), "V");
}

inline Tensor ensemble_f(const Tensor& x) {
  return softmax(matmul(x, Tensor::matrix({{2, -1, 0}, {0.5, 1, 1}, {-1, 0, 3}})), 0);
}

// Y = x + f0(x) with f0 = -identity.
inline Graph cancellation() {
  return build({input_spec("x", {}), scalar_mul_spec("f0", "x", -1.0), op_spec("Y", OpKind::kAdd, {"x", "f0"})}, "Y");
}

// Y = x + n(x) where n(x) = xW + x(-W) is identically zero.
inline Graph null_node() {
  const Tensor w = Tensor::matrix({{1, 2}, {-3, 0.5}});
  return build({input_spec("x", {2}), constant_spec("Z", Tensor::zeros({2, 2})), op_spec("n", OpKind::kMatmul, {"x", "Z"}),
                op_spec("Y", OpKind::kAdd, {"x", "n"})},
               "Y");
}

inline Tensor null_node_w() { return Tensor::matrix({{1, 2}, {-3, 0.5}}); }

inline Binding bind(const std::string& name, Tensor t) {
  Binding b;
  b.set(name, std::move(t));
  return b;
}

// Random DAG on vectors of width 3: 1-2 data leaves and up to `max_nodes`
// total, built from add, scalar-mul, matmul, softmax and layer-norm. Every
// operation draws its inputs from earlier nodes, favoring recent ones, and
// the last node is the output.
template <typename Rng>
Graph random_dag(Rng& rng, std::size_t max_nodes = 12) {
  std::uniform_int_distribution<int> leaves_d(1, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int leaves = leaves_d(rng);
  std::vector<NodeSpec> s;
  std::vector<std::string> values;
  for (int i = 0; i < leaves; ++i) {
    s.push_back(input_spec("x" + std::to_string(i), {3}));
    values.push_back(s.back().name);
  }
  auto pick = [&]() {
    std::uniform_int_distribution<std::size_t> d(0, values.size() - 1);
    const std::size_t a = d(rng), b = d(rng);
    return values[std::max(a, b)];
  };
  // Adds come up twice as often and always read the newest value, which gives
  // residual-style fan-in and path counts in the hundreds.
  std::uniform_int_distribution<int> kind_d(-1, 4);
  std::size_t consts = 0;
  std::uniform_int_distribution<std::size_t> ops_d(3, max_nodes - static_cast<std::size_t>(leaves));
  const std::size_t ops = ops_d(rng);
  for (std::size_t k = 0; k < ops; ++k) {
    const std::string name = "n" + std::to_string(k);
    switch (kind_d(rng)) {
      case -1:
      case 0: {
        std::uniform_int_distribution<int> ar(1, 2);
        std::vector<std::string> ins{values.back()};
        for (int a = ar(rng); a > 0; --a) ins.push_back(pick());
        s.push_back(op_spec(name, OpKind::kAdd, ins));
        break;
      }
      case 1:
        s.push_back(scalar_mul_spec(name, pick(), normal(rng)));
        break;
      case 2: {
        std::vector<double> w(9);
        for (double& v : w) v = 0.7 * normal(rng);
        const std::string c = "W" + std::to_string(consts++);
        s.push_back(constant_spec(c, Tensor({3, 3}, std::move(w))));
        s.push_back(op_spec(name, OpKind::kMatmul, {pick(), c}));
        break;
      }
      case 3:
        s.push_back(op_spec(name, OpKind::kSoftmax, {pick()}));
        break;
      default: {
        const std::string c = "g" + std::to_string(consts++);
        s.push_back(constant_spec(c + ".w", Tensor::vector({1.0 + 0.1 * normal(rng), 1.0, 0.9})));
        s.push_back(constant_spec(c + ".b", Tensor::vector({0.1 * normal(rng), 0.0, -0.2})));
        s.push_back(op_spec(name, OpKind::kLayerNorm, {pick(), c + ".w", c + ".b"}));
        break;
      }
    }
    values.push_back(name);
  }
  // Fold every leaf into the output so no leaf is dead.
  std::vector<std::string> tail{values.back()};
  for (int i = 0; i < leaves; ++i) tail.push_back("x" + std::to_string(i));
  s.push_back(op_spec("out", OpKind::kAdd, tail));
  return build(std::move(s), "out");
}

template <typename Rng>
Binding random_vectors(const Graph& g, Rng& rng) {
  return random_binding(g, rng);
}

// Straight-line forward pass of build_transformer_graph's architecture for
// token inputs, written without the graph machinery. Returns logits [n, V].
inline std::vector<std::vector<double>> reference_forward(const WeightBundle& w, const std::vector<std::size_t>& tokens) {
  const TransformerConfig& c = w.config;
  const std::size_t n = tokens.size(), d = c.d_model, dh = c.d_head, H = c.heads;
  using Mat = std::vector<std::vector<double>>;
  auto get = [&](const std::string& name, std::size_t r, std::size_t col) {
    const Tensor& t = w.at(name);
    return t.data()[r * t.shape().back() + col];
  };
  Mat x(n, std::vector<double>(d));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < d; ++k) x[p][k] = get("W_E", tokens[p], k);
  auto norm = [&](const Mat& v, std::size_t l) {
    if (c.layer_norm == Norm::kIdentity) return v;
    Mat out = v;
    const std::string name = "ln" + std::to_string(l);
    for (std::size_t p = 0; p < n; ++p) {
      double mean = 0.0, var = 0.0;
      for (double e : v[p]) mean += e;
      mean /= static_cast<double>(d);
      for (double e : v[p]) var += (e - mean) * (e - mean);
      var /= static_cast<double>(d);
      for (std::size_t k = 0; k < d; ++k)
        out[p][k] = (v[p][k] - mean) / std::sqrt(var + 1e-5) * w.at(name + ".w").data()[k] + w.at(name + ".b").data()[k];
    }
    return out;
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string a = "a" + std::to_string(l);
    const Mat ln = norm(x, l);
    Mat qk = ln;
    if (c.positional == Positional::kShortformer)
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < d; ++k) qk[p][k] += get("W_pos", p, k);
    Mat delta(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      auto proj = [&](const Mat& in, const std::string& wn, std::size_t p, std::size_t e) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += in[p][k] * get(a + wn, k, h * dh + e);
        return s;
      };
      for (std::size_t p = 0; p < n; ++p) {
        std::vector<double> score(p + 1);
        double top = -1e300;
        for (std::size_t r = 0; r <= p; ++r) {
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += proj(qk, ".W_Q", p, e) * proj(qk, ".W_K", r, e);
          score[r] = s / std::sqrt(static_cast<double>(dh));
          top = std::max(top, score[r]);
        }
        double z = 0.0;
        for (double& s : score) z += (s = std::exp(s - top));
        std::vector<double> mix(dh, 0.0);
        for (std::size_t r = 0; r <= p; ++r)
          for (std::size_t e = 0; e < dh; ++e) mix[e] += score[r] / z * proj(ln, ".W_V", r, e);
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t e = 0; e < dh; ++e) delta[p][k] += mix[e] * get(a + ".W_O", h * dh + e, k);
      }
    }
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < d; ++k) x[p][k] += delta[p][k];
  }
  const Mat f = norm(x, c.layers);
  Mat logits(n, std::vector<double>(c.vocab, 0.0));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t t = 0; t < c.vocab; ++t)
      for (std::size_t k = 0; k < d; ++k)
        logits[p][t] += f[p][k] * (c.unembedding == Unembedding::kSeparate ? get("W_U", k, t) : get("W_E", t, k));
  return logits;
}

// The hand-built two-layer induction model with a reference set, as the
// shipped configs use it (vocab 24, context 12, per-position token leaves).
struct InductionRig {
  WeightBundle weights;
  std::shared_ptr<const Graph> graph;
  std::vector<InductionExample> raw;
  std::shared_ptr<const std::vector<Example>> refs;
};

inline InductionRig induction_rig(std::size_t count, std::uint64_t seed, bool distinct = false,
                                  std::size_t vocab = 24, std::size_t context = 12) {
  InductionRig r;
  r.weights = construct_induction_model(vocab, context);
  BuildOptions opt;
  opt.slice_tokens = true;
  r.graph = std::make_shared<const Graph>(build_transformer_graph(r.weights, opt));
  r.raw = distinct ? gen_distinct_sequences(count, context, vocab, seed)
                   : gen_induction_sequences(count, context, vocab, seed);
  std::vector<Example> refs;
  for (const auto& ex : r.raw) refs.push_back(induction_example(ex));
  r.refs = std::make_shared<const std::vector<Example>>(std::move(refs));
  return r;
}

inline Hypothesis loss_hypothesis(const InductionRig& r, const std::string& important, RowMode rows = RowMode::kFinal) {
  Hypothesis h;
  h.graph = r.graph;
  h.important = Selection::of_pattern(important);
  h.dissimilarity = Dissimilarity::kLossAbsoluteDifference;
  h.rows = rows;
  return h;
}

// Test-only broken mode: every unimportant path gets its own counterfactual,
// `cfs[k]` for the k-th unimportant leaf copy in canonical path order.
inline Tensor patch_per_path_counterfactual(const Graph& g, const PathSet& important, const Binding& reference,
                                            const std::vector<Binding>& cfs) {
  const Graph tree = treeify(g);
  std::vector<std::pair<Path, NodeId>> copies;
  for (const auto& [leaf, path] : leaf_paths(tree, g)) copies.emplace_back(path, leaf);
  std::sort(copies.begin(), copies.end(),
            [&](const auto& a, const auto& b) { return canonical_less(g, a.first, b.first); });
  Binding b = reference;
  std::size_t k = 0;
  for (const auto& [path, leaf] : copies) {
    if (important.contains(path)) continue;
    const Node& n = tree.node(leaf);
    b.set(n.name(), cfs.at(k++).at(n.spec.origin), LeafTag::kCounterfactual);
  }
  return evaluate(tree, b);
}

}  // namespace pathpatch::testing
