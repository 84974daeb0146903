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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/tensor.hpp"

// Behavior-preserving graph rewrites. Each returns a new graph; split_sum is
// checked numerically on probe bindings, the structural rewrites are exact by
// construction and tested the same way.

namespace pathpatch {

inline constexpr std::size_t kRewriteProbes = 100;
inline constexpr double kRewriteTolerance = 1e-9;

struct RewriteCheck {
  std::size_t probes = 0;
  double max_error = 0.0;
};

// Largest output difference between two graphs over random bindings drawn for
// `before` (derived leaves in `after` resolve through their origin).
inline RewriteCheck compare_graphs(const Graph& before, const Graph& after, std::size_t probes = kRewriteProbes,
                                   std::uint64_t seed = 0x5eed) {
  std::mt19937_64 rng(seed);
  RewriteCheck c;
  for (std::size_t i = 0; i < probes; ++i) {
    Binding b = random_binding(before, rng);
    const Binding extra = random_binding(after, rng);
    for (const auto& [name, t] : extra.values())
      if (!b.find(name)) b.set(name, t);
    const Tensor x = evaluate(before, b), y = evaluate(after, b);
    if (x.shape() != y.shape()) throw VerificationError("rewrite changed the output shape");
    c.max_error = std::max(c.max_error, max_abs_diff(x, y));
    ++c.probes;
  }
  return c;
}

inline RewriteCheck verify_rewrite(const Graph& before, const Graph& after, double tol = kRewriteTolerance,
                                   std::size_t probes = kRewriteProbes, std::uint64_t seed = 0x5eed) {
  const RewriteCheck c = compare_graphs(before, after, probes, seed);
  if (!(c.max_error <= tol)) {
    throw VerificationError("rewrite changes outputs by " + std::to_string(c.max_error) + " (tolerance " +
                            std::to_string(tol) + ")");
  }
  return c;
}

namespace detail {

inline std::size_t spec_index(const std::vector<NodeSpec>& specs, const std::string& name) {
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].name == name) return i;
  throw ArgumentError("unknown node '" + name + "'");
}

// Points every consumer of `from` (other than `except`) at `to`.
inline void rewire(std::vector<NodeSpec>& specs, const std::string& from, const std::string& to,
                   const std::string& except) {
  for (NodeSpec& s : specs) {
    if (s.name == except) continue;
    for (std::string& in : s.inputs)
      if (in == from) in = to;
  }
}

inline void require_fresh(const Graph& g, const std::string& name) {
  if (g.find(name)) throw StructuralError("rewrite would reuse the name '" + name + "'");
}

}  // namespace detail

// Replaces `node` by the sum of `parts`. `extra` declares the part nodes and
// any constants they need; the node keeps its name and becomes add(parts).
// Throws VerificationError unless outputs (and the node's value) agree on
// probe bindings.
inline Graph split_sum(const Graph& g, const std::string& node, const std::vector<NodeSpec>& extra,
                       const std::vector<std::string>& parts, double tol = kRewriteTolerance,
                       std::size_t probes = kRewriteProbes) {
  if (parts.empty()) throw ArgumentError("split_sum needs at least one part");
  std::vector<NodeSpec> specs = g.specs();
  const std::size_t at = detail::spec_index(specs, node);
  if (specs[at].kind == OpKind::kInput) throw ArgumentError("cannot split leaf '" + node + "'");
  for (const NodeSpec& s : extra) detail::require_fresh(g, s.name);
  specs.insert(specs.end(), extra.begin(), extra.end());
  specs[at] = op_spec(node, OpKind::kAdd, parts);
  Graph out = build(std::move(specs), g.output_node().name());
  if (out.node(out.id(node)).shape != g.node(g.id(node)).shape)
    throw VerificationError("parts of '" + node + "' do not sum to its shape");
  verify_rewrite(reroot(g, node), reroot(out, node), tol, probes);
  verify_rewrite(g, out, tol, probes);
  return out;
}

// Splits node = matmul(x, W) into sum_k matmul(x, W_k), parts named `node.a`,
// `node.b`, ... with weight constants `node.a.W`, ...
inline Graph split_linear(const Graph& g, const std::string& node, const std::vector<Tensor>& weights,
                          double tol = kRewriteTolerance) {
  const Node& n = g.node(g.id(node));
  if (n.kind() != OpKind::kMatmul) throw ArgumentError("'" + node + "' is not a matmul");
  if (weights.size() > 26) throw ArgumentError("too many parts");
  std::vector<NodeSpec> extra;
  std::vector<std::string> parts;
  const std::string x = g.node(n.inputs[0]).name();
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const std::string part = node + "." + std::string(1, static_cast<char>('a' + k));
    extra.push_back(constant_spec(part + ".W", weights[k]));
    extra.push_back(op_spec(part, OpKind::kMatmul, {x, part + ".W"}));
    parts.push_back(part);
  }
  return split_sum(g, node, extra, parts, tol);
}

// Fused attention `aL` -> per-head subgraphs `aL.hH.{q,k,kt,qk,scores,attn,v,z,o}`
// with weight constants `aL.hH.{W_Q,W_K,W_V,W_O}`; `aL` becomes the sum of
// the head outputs.
inline Graph split_attention_heads(const Graph& g, const std::string& layer) {
  const Node& n = g.node(g.id(layer));
  if (n.kind() != OpKind::kAttention) throw ArgumentError("'" + layer + "' is not a fused attention layer");
  const NodeSpec& s = n.spec;
  const std::size_t dh = s.head_dim;
  const Tensor* w[4];
  for (std::size_t i = 0; i < 4; ++i) {
    const Node& wn = g.node(n.inputs[3 + i]);
    if (wn.kind() != OpKind::kConstant) throw ArgumentError("attention weight '" + wn.name() + "' is not a constant");
    w[i] = &wn.spec.value;
  }
  std::vector<NodeSpec> specs = g.specs();
  const std::size_t at = detail::spec_index(specs, layer);
  const std::string q_in = s.inputs[0], k_in = s.inputs[1], v_in = s.inputs[2];
  std::vector<std::string> outs;
  for (std::size_t h = 0; h < s.heads; ++h) {
    const std::string p = layer + ".h" + std::to_string(h);
    for (const char* sfx : {".W_Q", ".W_K", ".W_V", ".W_O", ".q", ".k", ".kt", ".qk", ".scores", ".attn", ".v", ".z", ".o"})
      detail::require_fresh(g, p + sfx);
    specs.push_back(constant_spec(p + ".W_Q", slice(*w[0], 1, h * dh, (h + 1) * dh)));
    specs.push_back(constant_spec(p + ".W_K", slice(*w[1], 1, h * dh, (h + 1) * dh)));
    specs.push_back(constant_spec(p + ".W_V", slice(*w[2], 1, h * dh, (h + 1) * dh)));
    specs.push_back(constant_spec(p + ".W_O", slice(*w[3], 0, h * dh, (h + 1) * dh)));
    specs.push_back(op_spec(p + ".q", OpKind::kMatmul, {q_in, p + ".W_Q"}));
    specs.push_back(op_spec(p + ".k", OpKind::kMatmul, {k_in, p + ".W_K"}));
    specs.push_back(op_spec(p + ".kt", OpKind::kTranspose, {p + ".k"}));
    specs.push_back(op_spec(p + ".qk", OpKind::kMatmul, {p + ".q", p + ".kt"}));
    specs.push_back(scalar_mul_spec(p + ".scores", p + ".qk", 1.0 / std::sqrt(static_cast<double>(dh))));
    specs.push_back(op_spec(p + ".attn", OpKind::kCausalSoftmax, {p + ".scores"}));
    specs.push_back(op_spec(p + ".v", OpKind::kMatmul, {v_in, p + ".W_V"}));
    specs.push_back(op_spec(p + ".z", OpKind::kMatmul, {p + ".attn", p + ".v"}));
    specs.push_back(op_spec(p + ".o", OpKind::kMatmul, {p + ".z", p + ".W_O"}));
    outs.push_back(p + ".o");
  }
  specs[at] = op_spec(layer, OpKind::kAdd, outs);
  // The fused weights are now unused; drop them if nothing else reads them.
  Graph out = build(std::move(specs), g.output_node().name());
  return eliminate_dead(out);
}

// Inverse of split_attention_heads.
inline Graph merge_attention_heads(const Graph& g, const std::string& layer) {
  const Node& n = g.node(g.id(layer));
  if (n.kind() != OpKind::kAdd) throw ArgumentError("'" + layer + "' is not a split attention layer");
  const std::size_t heads = n.inputs.size();
  auto weight = [&](std::size_t h, const char* sfx) -> const Tensor& {
    const std::string name = layer + ".h" + std::to_string(h) + sfx;
    const auto id = g.find(name);
    if (!id || g.node(*id).kind() != OpKind::kConstant) throw ArgumentError("missing head weight '" + name + "'");
    return g.node(*id).spec.value;
  };
  auto input_of = [&](const char* port) {
    const std::string name = layer + ".h0" + port;
    return g.node(g.node(g.id(name)).inputs[0]).name();
  };
  std::vector<Tensor> wq, wk, wv, wo;
  for (std::size_t h = 0; h < heads; ++h) {
    wq.push_back(weight(h, ".W_Q"));
    wk.push_back(weight(h, ".W_K"));
    wv.push_back(weight(h, ".W_V"));
    wo.push_back(weight(h, ".W_O"));
  }
  std::vector<NodeSpec> specs;
  const std::string prefix = layer + ".h";
  for (NodeSpec s : g.specs())
    if (s.name.rfind(prefix, 0) != 0) specs.push_back(std::move(s));
  for (const char* w : {".W_Q", ".W_K", ".W_V", ".W_O"}) detail::require_fresh(g, layer + w);
  specs.push_back(constant_spec(layer + ".W_Q", concat(wq, 1)));
  specs.push_back(constant_spec(layer + ".W_K", concat(wk, 1)));
  specs.push_back(constant_spec(layer + ".W_V", concat(wv, 1)));
  specs.push_back(constant_spec(layer + ".W_O", concat(wo, 0)));
  NodeSpec fused = op_spec(layer, OpKind::kAttention,
                           {input_of(".q"), input_of(".k"), input_of(".v"), layer + ".W_Q", layer + ".W_K",
                            layer + ".W_V", layer + ".W_O"});
  fused.heads = heads;
  fused.head_dim = wq.front().dim(1);
  specs[detail::spec_index(specs, layer)] = fused;
  return eliminate_dead(build(std::move(specs), g.output_node().name()));
}

// Leaf `leaf` [n, ...] -> leaves `leaf[p]` [1, ...] bound through the
// original name, concatenated back into a node called `leaf`.
inline Graph slice_positions(const Graph& g, const std::string& leaf) {
  const Node& n = g.node(g.id(leaf));
  if (!n.is_leaf()) throw ArgumentError("'" + leaf + "' is not an input leaf");
  if (n.is_labels_leaf()) throw ArgumentError("labels leaf '" + leaf + "' cannot be sliced");
  if (n.shape.empty()) throw ArgumentError("leaf '" + leaf + "' has no position axis");
  if (n.spec.origin_index) throw ArgumentError("leaf '" + leaf + "' is already a position slice");
  std::vector<NodeSpec> specs = g.specs();
  const std::size_t at = detail::spec_index(specs, leaf);
  const std::size_t count = n.shape[0];
  std::vector<std::string> parts;
  for (std::size_t p = 0; p < count; ++p) {
    const std::string name = leaf + "[" + std::to_string(p) + "]";
    detail::require_fresh(g, name);
    NodeSpec s = n.spec;
    s.name = name;
    s.shape[0] = 1;
    s.origin = n.spec.origin.empty() ? leaf : n.spec.origin;
    s.origin_index = p;
    specs.push_back(std::move(s));
    parts.push_back(name);
  }
  NodeSpec cat = op_spec(leaf, OpKind::kConcat, parts);
  cat.axis = 0;
  specs[at] = cat;
  return build(std::move(specs), g.output_node().name());
}

// node v -> v·Pᵀ + v·(I−P)ᵀ along the last axis, as `node.proj` and
// `node.rest`, summed in `node.sum` which takes over all consumers.
inline Graph subspace_split(const Graph& g, const std::string& node, const Tensor& projection,
                            double idempotence_tol = 1e-9) {
  const Node& n = g.node(g.id(node));
  if (projection.rank() != 2 || projection.dim(0) != projection.dim(1))
    throw ArgumentError("projection must be a square matrix");
  if (n.shape.empty() || n.shape.back() != projection.dim(0))
    throw ShapeError("projection of size " + std::to_string(projection.dim(0)) + " does not fit '" + node + "' " +
                     shape_string(n.shape));
  if (max_abs_diff(matmul(projection, projection), projection) > idempotence_tol)
    throw ArgumentError("projection is not idempotent");
  const std::size_t d = projection.dim(0);
  for (const char* sfx : {".P", ".Q", ".proj", ".rest", ".sum"}) detail::require_fresh(g, node + sfx);
  std::vector<NodeSpec> specs = g.specs();
  detail::rewire(specs, node, node + ".sum", "");
  specs.push_back(constant_spec(node + ".P", transpose(projection)));
  specs.push_back(constant_spec(node + ".Q", transpose(subtract(Tensor::identity(d), projection))));
  specs.push_back(op_spec(node + ".proj", OpKind::kMatmul, {node, node + ".P"}));
  specs.push_back(op_spec(node + ".rest", OpKind::kMatmul, {node, node + ".Q"}));
  specs.push_back(op_spec(node + ".sum", OpKind::kAdd, {node + ".proj", node + ".rest"}));
  const std::string out = g.output() == g.id(node) ? node + ".sum" : g.output_node().name();
  return build(std::move(specs), out);
}

// node -> constant(mean) + (node − mean), as `node.mean` and `node.dev`
// summed in `node.sum`. The constant branch carries no path.
inline Graph mean_split(const Graph& g, const std::string& node, const Tensor& mean) {
  const Node& n = g.node(g.id(node));
  if (mean.shape() != n.shape)
    throw ShapeError("mean " + shape_string(mean.shape()) + " does not match '" + node + "' " + shape_string(n.shape));
  for (const char* sfx : {".mean", ".negmean", ".dev", ".sum"}) detail::require_fresh(g, node + sfx);
  std::vector<NodeSpec> specs = g.specs();
  detail::rewire(specs, node, node + ".sum", "");
  specs.push_back(constant_spec(node + ".mean", mean));
  specs.push_back(constant_spec(node + ".negmean", scale(mean, -1.0)));
  specs.push_back(op_spec(node + ".dev", OpKind::kAdd, {node, node + ".negmean"}));
  specs.push_back(op_spec(node + ".sum", OpKind::kAdd, {node + ".mean", node + ".dev"}));
  const std::string out = g.output() == g.id(node) ? node + ".sum" : g.output_node().name();
  return build(std::move(specs), out);
}

}  // namespace pathpatch
