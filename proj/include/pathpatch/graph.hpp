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
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/tensor.hpp"

namespace pathpatch {

using NodeId = std::size_t;

enum class OpKind {
  kInput,          // named leaf bound at evaluation time
  kConstant,       // fixed tensor
  kAdd,            // sum of >= 1 same-shaped inputs
  kScalarMul,      // input * scalar
  kMatmul,         // [m x k].[k x n] or [k].[k x n]
  kTranspose,      // matrix transpose
  kSoftmax,        // softmax along `axis`
  kCausalSoftmax,  // row softmax with entries above the diagonal masked out
  kLayerNorm,      // (x, gain, bias), normalizes the last axis
  kEmbedLookup,    // (ids, table)
  kSlice,          // [start, stop) along `axis`
  kConcat,         // along `axis`
  kCrossEntropy,   // (logits, labels leaf) -> per-position loss
  kAlias,          // identity
  kAttention,      // fused multi-head causal attention layer
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kInput: return "input";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kScalarMul: return "scalar-mul";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kCausalSoftmax: return "causal-softmax";
    case OpKind::kLayerNorm: return "layer-norm";
    case OpKind::kEmbedLookup: return "embed-lookup";
    case OpKind::kSlice: return "slice";
    case OpKind::kConcat: return "concat";
    case OpKind::kCrossEntropy: return "cross-entropy";
    case OpKind::kAlias: return "alias";
    case OpKind::kAttention: return "attention";
  }
  return "?";
}

inline std::optional<OpKind> op_from_name(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(OpKind::kAttention); ++k) {
    if (op_name(static_cast<OpKind>(k)) == s) return static_cast<OpKind>(k);
  }
  return std::nullopt;
}

enum class LeafRole { kData, kLabels };

// Declarative description of one node. Only the parameters relevant to `kind`
// are read.
struct NodeSpec {
  std::string name;
  OpKind kind = OpKind::kAlias;
  std::vector<std::string> inputs;

  // kInput
  Shape shape;
  LeafRole role = LeafRole::kData;
  std::size_t vocab = 0;  // > 0 when the leaf holds token ids
  std::string origin;     // leaf this one was derived from (slicing, treeify copies)
  std::optional<std::size_t> origin_index;  // row of `origin` along axis 0

  // Set on treeify copies: the name of the node this one duplicates.
  std::string copy_of;

  // kConstant
  Tensor value;

  // kScalarMul factor, kLayerNorm epsilon
  double scalar = 1.0;
  // kSoftmax, kSlice, kConcat
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t stop = 0;
  // kAttention
  std::size_t heads = 1;
  std::size_t head_dim = 0;
};

inline NodeSpec input_spec(std::string name, Shape shape, std::size_t vocab = 0) {
  NodeSpec s;
  s.name = std::move(name);
  s.kind = OpKind::kInput;
  s.shape = std::move(shape);
  s.vocab = vocab;
  return s;
}

inline NodeSpec labels_spec(std::string name, Shape shape, std::size_t vocab) {
  NodeSpec s = input_spec(std::move(name), std::move(shape), vocab);
  s.role = LeafRole::kLabels;
  return s;
}

inline NodeSpec constant_spec(std::string name, Tensor value) {
  NodeSpec s;
  s.name = std::move(name);
  s.kind = OpKind::kConstant;
  s.value = std::move(value);
  return s;
}

inline NodeSpec op_spec(std::string name, OpKind kind, std::vector<std::string> inputs) {
  NodeSpec s;
  s.name = std::move(name);
  s.kind = kind;
  s.inputs = std::move(inputs);
  if (kind == OpKind::kLayerNorm) s.scalar = kDefaultLayerNormEpsilon;
  return s;
}

inline NodeSpec scalar_mul_spec(std::string name, std::string input, double factor) {
  NodeSpec s = op_spec(std::move(name), OpKind::kScalarMul, {std::move(input)});
  s.scalar = factor;
  return s;
}

struct Node {
  NodeSpec spec;
  std::vector<NodeId> inputs;
  Shape shape;  // inferred output shape
  bool live = true;  // reachable from the output

  const std::string& name() const { return spec.name; }
  OpKind kind() const { return spec.kind; }
  bool is_leaf() const { return spec.kind == OpKind::kInput; }
  bool is_data_leaf() const { return is_leaf() && spec.role == LeafRole::kData; }
  bool is_labels_leaf() const { return is_leaf() && spec.role == LeafRole::kLabels; }
};

namespace detail {

inline Shape infer_shape(const NodeSpec& s, const std::vector<const Node*>& in) {
  auto fail = [&](const std::string& why) -> Shape {
    throw ShapeError("node '" + s.name + "' (" + std::string(op_name(s.kind)) + "): " + why);
  };
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      fail("expects " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (s.kind) {
    case OpKind::kInput:
      arity(0);
      for (std::size_t d : s.shape)
        if (d == 0) fail("zero-sized dimension");
      if (s.role == LeafRole::kLabels && (s.vocab == 0 || s.shape.size() != 1)) {
        fail("labels leaf needs a vocab and a 1-d shape");
      }
      return s.shape;
    case OpKind::kConstant:
      arity(0);
      return s.value.shape();
    case OpKind::kAdd:
      if (in.empty()) fail("expects at least one input");
      for (const Node* n : in)
        if (n->shape != in[0]->shape)
          fail("cannot add " + shape_string(in[0]->shape) + " and " + shape_string(n->shape) +
               " from '" + n->name() + "'");
      return in[0]->shape;
    case OpKind::kScalarMul:
    case OpKind::kAlias:
      arity(1);
      return in[0]->shape;
    case OpKind::kMatmul: {
      arity(2);
      const Shape& a = in[0]->shape;
      const Shape& b = in[1]->shape;
      if (b.size() != 2 || (a.size() != 1 && a.size() != 2) || a.back() != b[0]) {
        fail("incompatible operands " + shape_string(a) + " and " + shape_string(b));
      }
      return a.size() == 2 ? Shape{a[0], b[1]} : Shape{b[1]};
    }
    case OpKind::kTranspose:
      arity(1);
      if (in[0]->shape.size() != 2) fail("needs a matrix, got " + shape_string(in[0]->shape));
      return {in[0]->shape[1], in[0]->shape[0]};
    case OpKind::kSoftmax:
      arity(1);
      if (s.axis >= in[0]->shape.size()) fail("axis out of range");
      return in[0]->shape;
    case OpKind::kCausalSoftmax:
      arity(1);
      if (in[0]->shape.size() != 2) fail("needs a matrix, got " + shape_string(in[0]->shape));
      return in[0]->shape;
    case OpKind::kLayerNorm: {
      arity(3);
      const Shape& x = in[0]->shape;
      if (x.empty()) fail("cannot normalize a scalar");
      Shape last{x.back()};
      if (in[1]->shape != last || in[2]->shape != last) {
        fail("gain/bias must be " + shape_string(last) + ", got " + shape_string(in[1]->shape) +
             " and " + shape_string(in[2]->shape));
      }
      if (!(s.scalar >= 0.0)) fail("negative epsilon");
      return x;
    }
    case OpKind::kEmbedLookup:
      arity(2);
      if (in[0]->shape.size() != 1 || in[1]->shape.size() != 2) {
        fail("needs [n] ids and a [V x d] table, got " + shape_string(in[0]->shape) + " and " +
             shape_string(in[1]->shape));
      }
      return {in[0]->shape[0], in[1]->shape[1]};
    case OpKind::kSlice: {
      arity(1);
      const Shape& x = in[0]->shape;
      if (s.axis >= x.size()) fail("axis out of range");
      if (s.start >= s.stop || s.stop > x[s.axis]) fail("empty or out-of-range slice");
      Shape out = x;
      out[s.axis] = s.stop - s.start;
      return out;
    }
    case OpKind::kConcat: {
      if (in.empty()) fail("expects at least one input");
      Shape out = in[0]->shape;
      if (s.axis >= out.size()) fail("axis out of range");
      out[s.axis] = 0;
      for (const Node* n : in) {
        Shape a = n->shape, b = in[0]->shape;
        if (a.size() != b.size()) fail("rank mismatch");
        a[s.axis] = b[s.axis] = 0;
        if (a != b) fail("cannot concat " + shape_string(in[0]->shape) + " and " + shape_string(n->shape));
        out[s.axis] += n->shape[s.axis];
      }
      return out;
    }
    case OpKind::kCrossEntropy:
      arity(2);
      if (in[0]->shape.size() != 2 || in[1]->shape.size() != 1 || in[0]->shape[0] != in[1]->shape[0]) {
        fail("needs [n x V] logits and [n] labels, got " + shape_string(in[0]->shape) + " and " +
             shape_string(in[1]->shape));
      }
      if (!in[1]->is_labels_leaf()) {
        throw StructuralError("node '" + s.name + "': second input '" + in[1]->name() +
                              "' must be a labels leaf");
      }
      return {in[0]->shape[0]};
    case OpKind::kAttention: {
      arity(7);
      if (s.heads == 0 || s.head_dim == 0) fail("heads and head_dim must be positive");
      const Shape& q = in[0]->shape;
      if (q.size() != 2 || in[1]->shape != q || in[2]->shape != q) {
        fail("q/k/v inputs must share a [n x d] shape");
      }
      const std::size_t d = q[1], hd = s.heads * s.head_dim;
      for (int i = 3; i < 6; ++i)
        if (in[i]->shape != Shape{d, hd})
          fail("port weight '" + in[i]->name() + "' must be " + shape_string({d, hd}) + ", got " +
               shape_string(in[i]->shape));
      if (in[6]->shape != Shape{hd, d}) {
        fail("output weight '" + in[6]->name() + "' must be " + shape_string({hd, d}) + ", got " +
             shape_string(in[6]->shape));
      }
      return q;
    }
  }
  fail("unknown kind");
  return {};
}

// Fused multi-head causal attention; heads are summed in index order.
inline Tensor fused_attention(const NodeSpec& s, const Tensor& q_in, const Tensor& k_in,
                              const Tensor& v_in, const Tensor& wq, const Tensor& wk,
                              const Tensor& wv, const Tensor& wo) {
  const std::size_t dh = s.head_dim;
  const std::size_t hd = s.heads * dh;
  const Tensor q = matmul(q_in, wq), k = matmul(k_in, wk), v = matmul(v_in, wv);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < s.heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    const Tensor attn = causal_softmax(scale(matmul(qh, transpose(kh)), inv));
    const Tensor woh = slice(wo, 0, h * dh, (h + 1) * dh);
    outs.push_back(matmul(matmul(attn, vh), woh));
  }
  (void)hd;
  return sum(outs);
}

}  // namespace detail

// Applies a non-leaf node's operation to already-computed input values.
inline Tensor apply_op(const Node& node, std::span<const Tensor* const> in) {
  const NodeSpec& s = node.spec;
  switch (s.kind) {
    case OpKind::kInput:
      throw BindingError("leaf '" + s.name + "' must be bound, not computed");
    case OpKind::kConstant: return s.value;
    case OpKind::kAdd: {
      if (in.size() == 1) return *in[0];
      std::vector<Tensor> terms;
      terms.reserve(in.size());
      for (const Tensor* t : in) terms.push_back(*t);
      return sum(terms);
    }
    case OpKind::kScalarMul: return scale(*in[0], s.scalar);
    case OpKind::kMatmul: return matmul(*in[0], *in[1]);
    case OpKind::kTranspose: return transpose(*in[0]);
    case OpKind::kSoftmax: return softmax(*in[0], s.axis);
    case OpKind::kCausalSoftmax: return causal_softmax(*in[0]);
    case OpKind::kLayerNorm: return layer_norm(*in[0], *in[1], *in[2], s.scalar);
    case OpKind::kEmbedLookup: return embed_lookup(*in[0], *in[1]);
    case OpKind::kSlice: return slice(*in[0], s.axis, s.start, s.stop);
    case OpKind::kConcat: {
      std::vector<Tensor> parts;
      for (const Tensor* t : in) parts.push_back(*t);
      return concat(parts, s.axis);
    }
    case OpKind::kCrossEntropy: return cross_entropy_per_token(*in[0], *in[1]);
    case OpKind::kAlias: return *in[0];
    case OpKind::kAttention:
      return detail::fused_attention(s, *in[0], *in[1], *in[2], *in[3], *in[4], *in[5], *in[6]);
  }
  throw ArgumentError("unknown op");
}

// A validated, immutable DAG. Node ids are a topological order: every node's
// inputs have smaller ids.
class Graph {
 public:
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  NodeId output() const noexcept { return output_; }
  const Node& output_node() const { return nodes_[output_]; }

  std::optional<NodeId> find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  NodeId id(std::string_view name) const {
    auto found = find(name);
    if (!found) throw ArgumentError("unknown node '" + std::string(name) + "'");
    return *found;
  }

  // Consumers of `id` as (consumer, input slot) pairs, live consumers only.
  const std::vector<std::pair<NodeId, std::size_t>>& consumers(NodeId id) const {
    return consumers_.at(id);
  }

  // Live input leaves in id order.
  std::vector<NodeId> leaves() const {
    std::vector<NodeId> out;
    for (const Node& n : nodes_)
      if (n.live && n.is_leaf()) out.push_back(&n - nodes_.data());
    return out;
  }

  std::vector<NodeSpec> specs() const {
    std::vector<NodeSpec> out;
    out.reserve(nodes_.size());
    for (const Node& n : nodes_) out.push_back(n.spec);
    return out;
  }

 private:
  friend Graph build(std::vector<NodeSpec> specs, const std::string& output);

  std::vector<Node> nodes_;
  NodeId output_ = 0;
  std::unordered_map<std::string, NodeId> by_name_;
  std::vector<std::vector<std::pair<NodeId, std::size_t>>> consumers_;
};

// Validates specs (unique names, known inputs, no cycles, consistent shapes)
// and returns a graph in deterministic topological order. Specs may reference
// nodes declared later in the list.
inline Graph build(std::vector<NodeSpec> specs, const std::string& output) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name.empty()) throw StructuralError("node " + std::to_string(i) + " has no name");
    if (!index.emplace(specs[i].name, i).second) {
      throw StructuralError("duplicate node name '" + specs[i].name + "'");
    }
  }
  std::vector<std::vector<std::size_t>> deps(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (const std::string& in : specs[i].inputs) {
      auto it = index.find(in);
      if (it == index.end()) {
        throw StructuralError("node '" + specs[i].name + "' references unknown input '" + in + "'");
      }
      deps[i].push_back(it->second);
    }
  }
  // Depth-first topological sort; ties resolved by declaration order.
  std::vector<int> state(specs.size(), 0);
  std::vector<std::size_t> order;
  order.reserve(specs.size());
  for (std::size_t root = 0; root < specs.size(); ++root) {
    if (state[root]) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
    state[root] = 1;
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < deps[n].size()) {
        const std::size_t d = deps[n][next++];
        if (state[d] == 1) {
          throw StructuralError("cycle through node '" + specs[d].name + "'");
        }
        if (state[d] == 0) {
          state[d] = 1;
          stack.emplace_back(d, 0);
        }
      } else {
        state[n] = 2;
        order.push_back(n);
        stack.pop_back();
      }
    }
  }
  auto out_it = index.find(output);
  if (out_it == index.end()) throw StructuralError("unknown output node '" + output + "'");

  std::vector<NodeId> new_id(specs.size());
  for (std::size_t k = 0; k < order.size(); ++k) new_id[order[k]] = k;

  Graph g;
  g.nodes_.resize(specs.size());
  g.consumers_.resize(specs.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t old = order[k];
    Node& n = g.nodes_[k];
    n.spec = std::move(specs[old]);
    for (std::size_t d : deps[old]) n.inputs.push_back(new_id[d]);
    std::vector<const Node*> in;
    for (NodeId i : n.inputs) in.push_back(&g.nodes_[i]);
    n.shape = detail::infer_shape(n.spec, in);
    g.by_name_.emplace(n.spec.name, k);
  }
  g.output_ = new_id[out_it->second];

  for (Node& n : g.nodes_) n.live = false;
  g.nodes_[g.output_].live = true;
  for (std::size_t k = g.nodes_.size(); k-- > 0;) {
    if (!g.nodes_[k].live) continue;
    for (NodeId i : g.nodes_[k].inputs) g.nodes_[i].live = true;
  }
  for (std::size_t k = 0; k < g.nodes_.size(); ++k) {
    const Node& n = g.nodes_[k];
    if (!n.live) continue;
    for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
      g.consumers_[n.inputs[slot]].emplace_back(k, slot);
    }
  }
  for (std::size_t k = 0; k < g.nodes_.size(); ++k) {
    const Node& n = g.nodes_[k];
    if (!n.live || !n.is_labels_leaf()) continue;
    for (auto [c, slot] : g.consumers_[k]) {
      if (g.nodes_[c].kind() != OpKind::kCrossEntropy || slot != 1) {
        throw StructuralError("labels leaf '" + n.name() + "' may only feed cross-entropy");
      }
    }
  }
  return g;
}

// Same graph with a different output node; nodes not reachable from it become dead.
inline Graph reroot(const Graph& g, std::string_view output) {
  g.id(output);
  return build(g.specs(), std::string(output));
}

// Drops every node not reachable from the output.
inline Graph eliminate_dead(const Graph& g) {
  std::vector<NodeSpec> live;
  for (const Node& n : g.nodes())
    if (n.live) live.push_back(n.spec);
  return build(std::move(live), g.output_node().name());
}

// Which input a leaf value came from during an intervention.
enum class LeafTag { kReference, kCounterfactual, kSpliced };

// Leaf name -> value, with a bookkeeping tag per leaf.
class Binding {
 public:
  void set(const std::string& name, Tensor value, LeafTag tag = LeafTag::kReference) {
    values_.insert_or_assign(name, std::move(value));
    tags_.insert_or_assign(name, tag);
  }
  const Tensor* find(const std::string& name) const {
    auto it = values_.find(name);
    return it == values_.end() ? nullptr : &it->second;
  }
  const Tensor& at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw BindingError("leaf '" + name + "' is not bound");
    return *t;
  }
  LeafTag tag(const std::string& name) const {
    auto it = tags_.find(name);
    return it == tags_.end() ? LeafTag::kReference : it->second;
  }
  const std::map<std::string, Tensor>& values() const noexcept { return values_; }
  bool empty() const noexcept { return values_.empty(); }

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, LeafTag> tags_;
};

// Value of a leaf under a binding. Leaves derived from another leaf (position
// slices, treeify copies) fall back to their origin when not bound directly.
inline Tensor resolve_leaf(const Node& leaf, const Binding& b) {
  const NodeSpec& s = leaf.spec;
  const Tensor* v = b.find(s.name);
  Tensor value;
  if (v) {
    value = *v;
  } else if (!s.origin.empty() && b.find(s.origin)) {
    value = *b.find(s.origin);
    if (s.origin_index) {
      if (value.rank() == 0 || *s.origin_index >= value.dim(0)) {
        throw BindingError("leaf '" + s.name + "': origin '" + s.origin + "' has no row " +
                           std::to_string(*s.origin_index));
      }
      value = slice(value, 0, *s.origin_index, *s.origin_index + 1);
    }
  } else {
    throw BindingError("leaf '" + s.name + "' is not bound");
  }
  if (value.shape() != leaf.shape) {
    throw BindingError("leaf '" + s.name + "' declared " + shape_string(leaf.shape) + " but bound to " +
                       shape_string(value.shape()));
  }
  if (s.vocab > 0) token_ids(value, s.vocab);
  return value;
}

// Per-node evaluation counters plus the order in which nodes were computed.
struct EvalStats {
  std::vector<std::size_t> count;
  std::vector<NodeId> order;

  void record(NodeId id) {
    if (count.size() <= id) count.resize(id + 1, 0);
    ++count[id];
    order.push_back(id);
  }
  std::size_t of(NodeId id) const { return id < count.size() ? count[id] : 0; }
  std::size_t total() const { return order.size(); }
};

// Evaluates every node needed for the output exactly once, in topological
// order. `overrides` replaces the value of a node (its inputs are then not
// needed on its account).
inline std::vector<std::optional<Tensor>> evaluate_all(const Graph& g, const Binding& b,
                                                       const std::map<NodeId, Tensor>& overrides = {},
                                                       EvalStats* stats = nullptr) {
  std::vector<char> needed(g.size(), 0);
  needed[g.output()] = 1;
  for (std::size_t k = g.size(); k-- > 0;) {
    if (!needed[k] || overrides.count(k)) continue;
    for (NodeId i : g.node(k).inputs) needed[i] = 1;
  }
  std::vector<std::optional<Tensor>> values(g.size());
  std::vector<const Tensor*> in;
  for (NodeId k = 0; k < g.size(); ++k) {
    if (!needed[k]) continue;
    const Node& n = g.node(k);
    if (auto it = overrides.find(k); it != overrides.end()) {
      if (it->second.shape() != n.shape) {
        throw ShapeError("override for '" + n.name() + "' has shape " +
                         shape_string(it->second.shape()) + ", expected " + shape_string(n.shape));
      }
      values[k] = it->second;
      continue;
    }
    if (n.is_leaf()) {
      values[k] = resolve_leaf(n, b);
    } else {
      in.clear();
      for (NodeId i : n.inputs) in.push_back(&*values[i]);
      values[k] = apply_op(n, in);
    }
    if (stats) stats->record(k);
  }
  return values;
}

inline Tensor evaluate(const Graph& g, const Binding& b, EvalStats* stats = nullptr) {
  return *evaluate_all(g, b, {}, stats)[g.output()];
}

inline Tensor evaluate_with_overrides(const Graph& g, const Binding& b,
                                      const std::map<NodeId, Tensor>& overrides,
                                      EvalStats* stats = nullptr) {
  return *evaluate_all(g, b, overrides, stats)[g.output()];
}

// Random binding for every live leaf: token leaves draw uniform ids, real
// leaves draw standard normals. Leaves derived from an origin are bound
// through the origin so the binding also fits the pre-rewrite graph.
template <typename Rng>
Binding random_binding(const Graph& g, Rng& rng) {
  struct Draw {
    Shape shape;
    std::size_t vocab = 0;
  };
  std::map<std::string, Draw> draws;
  for (NodeId id : g.leaves()) {
    const Node& n = g.node(id);
    if (n.spec.origin.empty()) {
      draws[n.name()] = {n.shape, n.spec.vocab};
      continue;
    }
    Draw& d = draws[n.spec.origin];
    d.vocab = n.spec.vocab;
    if (n.spec.origin_index) {
      Shape s = n.shape;
      const std::size_t rows = *n.spec.origin_index + 1;
      s[0] = d.shape.empty() ? rows : std::max(d.shape[0], rows);
      d.shape = s;
    } else {
      d.shape = n.shape;
    }
  }
  Binding b;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [name, d] : draws) {
    std::vector<double> data(shape_size(d.shape));
    if (d.vocab > 0) {
      std::uniform_int_distribution<std::size_t> tok(0, d.vocab - 1);
      for (double& v : data) v = static_cast<double>(tok(rng));
    } else {
      for (double& v : data) v = normal(rng);
    }
    b.set(name, Tensor(d.shape, std::move(data)));
  }
  return b;
}

}  // namespace pathpatch
