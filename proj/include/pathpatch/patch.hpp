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

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/paths.hpp"
#include "pathpatch/pattern.hpp"

// Patched evaluation without materializing the tree.
//
// Every node reached from the output along some path prefix gets a signature:
// all paths below it are important (reference values), all are unimportant
// (counterfactual values), or a mix. Mixed signatures are hash-consed on the
// node and its children's signatures, so two prefixes that route the same
// tags below a node share one computed value.

namespace pathpatch {

using Signature = std::uint32_t;
inline constexpr Signature kNoPath = 0;       // no data leaf below
inline constexpr Signature kAllReference = 1;
inline constexpr Signature kAllCounterfactual = 2;
inline constexpr Signature kFirstMixed = 3;

// Decides importance of paths incrementally, walking from the output toward
// the leaves. States are small integers owned by the selector.
class PathSelector {
 public:
  virtual ~PathSelector() = default;
  // State after consuming the output node.
  virtual std::uint32_t root() = 0;
  // State after stepping from `node` to its input `child` through `slot`.
  virtual std::uint32_t child(std::uint32_t state, NodeId node, std::size_t slot, NodeId child) = 0;
  // 1 if every path continuing below `node` is important, 0 if none is,
  // -1 if undecided. Must be decisive at data leaves.
  virtual int verdict(std::uint32_t state, NodeId node) = 0;
};

// Explicit path set, via a trie of reversed paths.
class PathSetSelector final : public PathSelector {
 public:
  PathSetSelector(const Graph& g, const PathSet& important) : into_(paths_into(g)) {
    trie_.push_back({});  // dead state
    trie_.push_back({g.output(), 0, {}});
    for (const Path& p : important) {
      if (p.nodes.empty() || p.nodes.back() != g.output()) throw ArgumentError("path does not end at the output");
      std::uint32_t at = 1;
      ++trie_[at].count;
      for (std::size_t i = p.nodes.size() - 1; i-- > 0;) {
        const auto key = std::make_pair(p.slots[i], p.nodes[i]);
        auto it = trie_[at].next.find(key);
        std::uint32_t nxt;
        if (it == trie_[at].next.end()) {
          nxt = static_cast<std::uint32_t>(trie_.size());
          trie_[at].next.emplace(key, nxt);
          trie_.push_back({p.nodes[i], 0, {}});
        } else {
          nxt = it->second;
        }
        at = nxt;
        ++trie_[at].count;
      }
    }
  }

  std::uint32_t root() override { return 1; }

  std::uint32_t child(std::uint32_t state, NodeId, std::size_t slot, NodeId child) override {
    if (state == 0) return 0;
    auto it = trie_[state].next.find({slot, child});
    return it == trie_[state].next.end() ? 0 : it->second;
  }

  int verdict(std::uint32_t state, NodeId node) override {
    if (state == 0 || trie_[state].count == 0) return 0;
    if (trie_[state].count == into_[node]) return 1;
    return -1;
  }

 private:
  struct TrieNode {
    NodeId node = 0;
    std::uint64_t count = 0;
    std::map<std::pair<std::size_t, NodeId>, std::uint32_t> next;
  };
  std::vector<std::uint64_t> into_;
  std::vector<TrieNode> trie_;
};

// Paths avoiding every listed node are important (node-mediator mode).
class AvoidNodesSelector final : public PathSelector {
 public:
  AvoidNodesSelector(const Graph& g, const std::set<NodeId>& unimportant)
      : hit_(g.size(), 0), below_(g.size(), 0) {
    for (NodeId n : unimportant) {
      if (n >= g.size()) throw ArgumentError("unknown node id " + std::to_string(n));
      hit_[n] = 1;
    }
    // below_[n]: some data path into n passes an unimportant node.
    const auto into = paths_into(g);
    for (NodeId k = 0; k < g.size(); ++k) {
      if (into[k] == 0) continue;
      below_[k] = hit_[k];
      for (NodeId in : g.node(k).inputs) below_[k] = below_[k] || (below_[in] && into[in] > 0);
    }
  }
  std::uint32_t root() override { return 0; }
  std::uint32_t child(std::uint32_t state, NodeId, std::size_t, NodeId) override { return state; }
  int verdict(std::uint32_t, NodeId node) override {
    if (hit_[node]) return 0;
    return below_[node] ? -1 : 1;
  }

 private:
  std::vector<char> hit_;
  std::vector<char> below_;
};

// Pattern expression, stepped lazily through its NFA.
class PatternSelector final : public PathSelector {
 public:
  PatternSelector(const Graph& g, const PatternExpr& expr, const PatternVars& vars)
      : graph_(&g), compiled_(g, expr, vars) {}

  std::uint32_t root() override {
    auto sets = compiled_.initial();
    for (std::size_t k = 0; k < sets.size(); ++k) sets[k] = compiled_.step(k, sets[k], graph_->output());
    return intern(std::move(sets));
  }

  std::uint32_t child(std::uint32_t state, NodeId, std::size_t, NodeId child) override {
    auto sets = states_[state];
    for (std::size_t k = 0; k < sets.size(); ++k) sets[k] = compiled_.step(k, sets[k], child);
    return intern(std::move(sets));
  }

  int verdict(std::uint32_t state, NodeId node) override {
    if (graph_->node(node).is_data_leaf()) return compiled_.evaluate(states_[state]) ? 1 : 0;
    return compiled_.verdict(states_[state]);
  }

 private:
  std::uint32_t intern(std::vector<CompiledPattern::StateSet> sets) {
    auto [it, fresh] = ids_.emplace(sets, static_cast<std::uint32_t>(states_.size()));
    if (fresh) states_.push_back(std::move(sets));
    return it->second;
  }

  const Graph* graph_;
  CompiledPattern compiled_;
  std::map<std::vector<CompiledPattern::StateSet>, std::uint32_t> ids_;
  std::vector<std::vector<CompiledPattern::StateSet>> states_;
};

// Routed leaf tags for one graph and one important-path selection. Immutable
// once built, so one mask can serve every sample pair, on any thread.
class TagMask {
 public:
  struct Mixed {
    NodeId node;
    std::vector<Signature> children;
  };

  TagMask(const Graph& g, PathSelector& sel) : graph_(&g), id_(next_id()) {
    const auto into = paths_into(g);
    std::unordered_map<std::uint64_t, Signature> memo;
    std::map<std::vector<std::uint32_t>, Signature> interned;
    auto route = [&](auto&& self, NodeId node, std::uint32_t state) -> Signature {
      if (into[node] == 0) return kNoPath;
      const std::uint64_t key = (static_cast<std::uint64_t>(state) << 32) | node;
      if (auto it = memo.find(key); it != memo.end()) return it->second;
      Signature sig;
      const int v = sel.verdict(state, node);
      const Node& n = g.node(node);
      if (v == 1) {
        sig = kAllReference;
      } else if (v == 0) {
        sig = kAllCounterfactual;
      } else {
        if (n.is_leaf()) throw StructuralError("selector undecided at leaf '" + n.name() + "'");
        std::vector<Signature> kids(n.inputs.size());
        bool all_r = true, all_c = true;
        for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
          const NodeId in = n.inputs[slot];
          kids[slot] = into[in] == 0 ? kNoPath : self(self, in, sel.child(state, node, slot, in));
          all_r = all_r && (kids[slot] == kNoPath || kids[slot] == kAllReference);
          all_c = all_c && (kids[slot] == kNoPath || kids[slot] == kAllCounterfactual);
        }
        if (all_r) {
          sig = kAllReference;
        } else if (all_c) {
          sig = kAllCounterfactual;
        } else {
          std::vector<std::uint32_t> k{static_cast<std::uint32_t>(node)};
          k.insert(k.end(), kids.begin(), kids.end());
          auto [it, fresh] = interned.emplace(std::move(k), static_cast<Signature>(kFirstMixed + mixed_.size()));
          if (fresh) mixed_.push_back({node, std::move(kids)});
          sig = it->second;
        }
      }
      memo.emplace(key, sig);
      return sig;
    };
    root_ = route(route, g.output(), sel.root());
  }

  const Graph& graph() const noexcept { return *graph_; }
  std::uint64_t id() const noexcept { return id_; }
  Signature root() const noexcept { return root_; }
  const Mixed& mixed(Signature s) const { return mixed_.at(s - kFirstMixed); }
  std::size_t mixed_count() const noexcept { return mixed_.size(); }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  const Graph* graph_;
  std::uint64_t id_;
  Signature root_ = kNoPath;
  std::vector<Mixed> mixed_;
};

inline std::shared_ptr<const TagMask> mask_from_paths(const Graph& g, const PathSet& important) {
  PathSetSelector sel(g, important);
  return std::make_shared<const TagMask>(g, sel);
}

inline std::shared_ptr<const TagMask> mask_avoiding(const Graph& g, const std::set<NodeId>& unimportant) {
  AvoidNodesSelector sel(g, unimportant);
  return std::make_shared<const TagMask>(g, sel);
}

inline std::shared_ptr<const TagMask> mask_from_pattern(const Graph& g, const PatternExpr& expr,
                                                        const PatternVars& vars = {}) {
  PatternSelector sel(g, expr, vars);
  return std::make_shared<const TagMask>(g, sel);
}

// Counterfactual binding as the patched graph sees it: labels leaves always
// come from the reference example.
inline Binding counterfactual_view(const Graph& g, const Binding& reference, const Binding& counterfactual) {
  Binding out = counterfactual;
  for (const Node& n : g.nodes()) {
    if (!n.live || !n.is_labels_leaf()) continue;
    for (const std::string& name : {n.name(), n.spec.origin}) {
      if (name.empty()) continue;
      if (const Tensor* t = reference.find(name)) out.set(name, *t, reference.tag(name));
    }
  }
  return out;
}

// Patched evaluation for one (x_r, x_c) pair. Caches reference,
// counterfactual and mixed values, so several masks evaluated on the same pair
// share work. Not thread-safe; use one per pair.
class PatchedEvaluator {
 public:
  PatchedEvaluator(const Graph& g, Binding reference, const Binding& counterfactual, EvalStats* stats = nullptr)
      : graph_(&g),
        ref_binding_(std::move(reference)),
        cf_binding_(counterfactual_view(g, ref_binding_, counterfactual)),
        ref_(g.size()),
        cf_(g.size()),
        stats_(stats) {}

  const Tensor& reference(NodeId n) { return plain(n, ref_, ref_binding_); }
  const Tensor& counterfactual(NodeId n) { return plain(n, cf_, cf_binding_); }
  const Tensor& reference_output() { return reference(graph_->output()); }
  const Tensor& counterfactual_output() { return counterfactual(graph_->output()); }

  const Tensor& patched(const TagMask& mask) {
    if (&mask.graph() != graph_) throw ArgumentError("mask was built for a different graph");
    return value(mask, mask.root(), graph_->output());
  }

 private:
  const Tensor& plain(NodeId n, std::vector<std::optional<Tensor>>& memo, const Binding& b) {
    if (memo[n]) return *memo[n];
    const Node& node = graph_->node(n);
    if (node.is_leaf()) {
      memo[n] = resolve_leaf(node, b);
    } else {
      std::vector<const Tensor*> in;
      in.reserve(node.inputs.size());
      for (NodeId i : node.inputs) in.push_back(&plain(i, memo, b));
      memo[n] = apply_op(node, in);
    }
    if (stats_) stats_->record(n);
    return *memo[n];
  }

  const Tensor& value(const TagMask& mask, Signature sig, NodeId n) {
    if (sig == kNoPath || sig == kAllReference) return reference(n);
    if (sig == kAllCounterfactual) return counterfactual(n);
    const auto key = std::make_pair(mask.id(), sig);
    if (auto it = mixed_.find(key); it != mixed_.end()) return it->second;
    const TagMask::Mixed& m = mask.mixed(sig);
    const Node& node = graph_->node(m.node);
    std::vector<const Tensor*> in;
    in.reserve(node.inputs.size());
    for (std::size_t slot = 0; slot < node.inputs.size(); ++slot)
      in.push_back(&value(mask, m.children[slot], node.inputs[slot]));
    Tensor out = apply_op(node, in);
    if (stats_) stats_->record(m.node);
    return mixed_.emplace(key, std::move(out)).first->second;
  }

  const Graph* graph_;
  Binding ref_binding_;
  Binding cf_binding_;
  std::vector<std::optional<Tensor>> ref_;
  std::vector<std::optional<Tensor>> cf_;
  std::map<std::pair<std::uint64_t, Signature>, Tensor> mixed_;
  EvalStats* stats_;
};

// Reference route: materialize the tree and bind each leaf copy by whether
// its path is important. Small graphs only.
inline Tensor patch_by_treeify(const Graph& g, const PathSet& important, const Binding& reference,
                               const Binding& counterfactual, std::uint64_t cap = kDefaultPathCap) {
  const Graph tree = treeify(g, std::nullopt, cap);
  const Binding cf = counterfactual_view(g, reference, counterfactual);
  Binding b;
  for (const auto& [leaf, path] : leaf_paths(tree, g)) {
    const Node& orig = g.node(path.nodes.front());
    const bool keep = important.contains(path);
    b.set(tree.node(leaf).name(), resolve_leaf(orig, keep ? reference : cf),
          keep ? LeafTag::kReference : LeafTag::kCounterfactual);
  }
  for (NodeId leaf : tree.leaves()) {
    const Node& n = tree.node(leaf);
    if (n.is_labels_leaf()) b.set(n.name(), resolve_leaf(g.node(g.id(n.spec.copy_of)), reference));
  }
  return evaluate(tree, b);
}

}  // namespace pathpatch
