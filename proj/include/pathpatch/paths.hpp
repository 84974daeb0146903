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

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"

namespace pathpatch {

inline constexpr std::uint64_t kDefaultPathCap = 1'000'000;

// An input-to-output path. `slots[k]` is the input slot through which
// `nodes[k]` feeds `nodes[k + 1]`, so parallel edges give distinct paths.
struct Path {
  std::vector<NodeId> nodes;
  std::vector<std::size_t> slots;

  auto operator<=>(const Path&) const = default;
  bool operator==(const Path&) const = default;
};

inline std::string path_string(const Graph& g, const Path& p) {
  std::string s;
  for (std::size_t k = 0; k < p.nodes.size(); ++k) {
    if (k) s += " → ";
    s += g.node(p.nodes[k]).name();
  }
  return s;
}

// Lexicographic on node-name sequences, then on slots.
inline bool canonical_less(const Graph& g, const Path& a, const Path& b) {
  const std::size_t n = std::min(a.nodes.size(), b.nodes.size());
  for (std::size_t k = 0; k < n; ++k) {
    const std::string& x = g.node(a.nodes[k]).name();
    const std::string& y = g.node(b.nodes[k]).name();
    if (x != y) return x < y;
  }
  if (a.nodes.size() != b.nodes.size()) return a.nodes.size() < b.nodes.size();
  return a.slots < b.slots;
}

// Deduplicated set of paths kept in canonical order.
class PathSet {
 public:
  PathSet() = default;
  PathSet(const Graph& g, std::vector<Path> paths) : paths_(std::move(paths)) {
    std::sort(paths_.begin(), paths_.end(),
              [&](const Path& a, const Path& b) { return canonical_less(g, a, b); });
    paths_.erase(std::unique(paths_.begin(), paths_.end()), paths_.end());
    keys_.insert(paths_.begin(), paths_.end());
  }

  const std::vector<Path>& paths() const noexcept { return paths_; }
  std::size_t size() const noexcept { return paths_.size(); }
  bool empty() const noexcept { return paths_.empty(); }
  bool contains(const Path& p) const { return keys_.count(p) > 0; }
  auto begin() const { return paths_.begin(); }
  auto end() const { return paths_.end(); }

 private:
  std::vector<Path> paths_;
  std::set<Path> keys_;
};

inline std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
  return a > std::numeric_limits<std::uint64_t>::max() - b ? std::numeric_limits<std::uint64_t>::max()
                                                           : a + b;
}

// Number of distinct paths from data leaves into each node (saturating).
// Constants and labels leaves start no paths.
inline std::vector<std::uint64_t> paths_into(const Graph& g) {
  std::vector<std::uint64_t> count(g.size(), 0);
  for (NodeId k = 0; k < g.size(); ++k) {
    const Node& n = g.node(k);
    if (n.is_data_leaf()) {
      count[k] = 1;
      continue;
    }
    for (NodeId i : n.inputs) count[k] = saturating_add(count[k], count[i]);
  }
  return count;
}

inline std::uint64_t count_paths(const Graph& g) { return paths_into(g)[g.output()]; }

inline void check_path_cap(const Graph& g, std::uint64_t cap) {
  const std::uint64_t n = count_paths(g);
  if (n > cap) {
    throw CapacityError("graph has " + std::to_string(n) + " paths, above the cap of " +
                        std::to_string(cap) +
                        "; select paths lazily with a pattern instead of enumerating them");
  }
}

inline PathSet enumerate_paths(const Graph& g, std::uint64_t cap = kDefaultPathCap) {
  check_path_cap(g, cap);
  const auto into = paths_into(g);
  std::vector<Path> out;
  out.reserve(static_cast<std::size_t>(into[g.output()]));
  // Reversed partial path: output first.
  std::vector<NodeId> rev_nodes{g.output()};
  std::vector<std::size_t> rev_slots;
  auto rec = [&](auto&& self, NodeId n) -> void {
    const Node& node = g.node(n);
    if (node.is_data_leaf()) {
      Path p;
      p.nodes.assign(rev_nodes.rbegin(), rev_nodes.rend());
      p.slots.assign(rev_slots.rbegin(), rev_slots.rend());
      out.push_back(std::move(p));
      return;
    }
    for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) {
      const NodeId in = node.inputs[slot];
      if (into[in] == 0) continue;
      rev_nodes.push_back(in);
      rev_slots.push_back(slot);
      self(self, in);
      rev_nodes.pop_back();
      rev_slots.pop_back();
    }
  };
  if (into[g.output()] > 0) rec(rec, g.output());
  return PathSet(g, std::move(out));
}

// Paths that avoid every node in `avoid`.
inline PathSet paths_avoiding(const Graph& g, const std::set<NodeId>& avoid,
                              std::uint64_t cap = kDefaultPathCap) {
  std::vector<Path> keep;
  for (const Path& p : enumerate_paths(g, cap)) {
    bool hit = false;
    for (NodeId n : p.nodes) hit = hit || avoid.count(n);
    if (!hit) keep.push_back(p);
  }
  return PathSet(g, std::move(keep));
}

namespace detail {

inline std::string original_name(const NodeSpec& s) { return s.copy_of.empty() ? s.name : s.copy_of; }

inline std::string lineage_name(const std::string& original, std::size_t slot, const std::string& consumer) {
  return original + "#" + std::to_string(slot) + "@" + consumer;
}

}  // namespace detail

// Duplicates every multi-consumer node until each node (leaves included) has a
// single consumer, so every path owns a private copy of its input leaf. Copies
// are named by lineage, `orig#slot@consumer`, which makes the result
// independent of duplication order. With a seed, nodes are duplicated in a
// random order; without one, from the output down.
inline Graph treeify(const Graph& g, std::optional<std::uint64_t> seed = std::nullopt,
                     std::uint64_t cap = kDefaultPathCap) {
  check_path_cap(g, cap);
  struct Work {
    NodeId orig;
    std::vector<std::size_t> inputs;
    std::vector<std::pair<std::size_t, std::size_t>> consumers;
  };
  std::vector<Work> w;
  std::vector<std::size_t> index(g.size(), std::numeric_limits<std::size_t>::max());
  for (NodeId k = 0; k < g.size(); ++k) {
    if (!g.node(k).live) continue;
    index[k] = w.size();
    w.push_back({k, {}, {}});
  }
  for (auto& item : w) {
    for (NodeId in : g.node(item.orig).inputs) item.inputs.push_back(index[in]);
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t slot = 0; slot < w[i].inputs.size(); ++slot) {
      w[w[i].inputs[slot]].consumers.emplace_back(i, slot);
    }
  }

  auto duplicate = [&](std::size_t n, auto&& on_new_multi) {
    while (w[n].consumers.size() > 1) {
      auto [c, slot] = w[n].consumers.back();
      w[n].consumers.pop_back();
      const std::size_t m = w.size();
      w.push_back({w[n].orig, w[n].inputs, {{c, slot}}});
      for (std::size_t s = 0; s < w[m].inputs.size(); ++s) {
        auto& cons = w[w[m].inputs[s]].consumers;
        cons.emplace_back(m, s);
        if (cons.size() == 2) on_new_multi(w[m].inputs[s]);
      }
      w[c].inputs[slot] = m;
    }
  };

  if (seed) {
    std::mt19937_64 rng(*seed);
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (w[i].consumers.size() > 1) pending.push_back(i);
    while (!pending.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, pending.size() - 1);
      const std::size_t at = pick(rng);
      const std::size_t n = pending[at];
      pending[at] = pending.back();
      pending.pop_back();
      duplicate(n, [&](std::size_t multi) { pending.push_back(multi); });
    }
  } else {
    // Original ids are topological, so walking them backwards settles every
    // consumer before its inputs are split.
    for (std::size_t i = w.size(); i-- > 0;) duplicate(i, [](std::size_t) {});
    for (std::size_t i = 0; i < w.size(); ++i) duplicate(i, [](std::size_t) {});
  }

  const std::size_t root = index[g.output()];
  std::vector<std::string> names(w.size());
  std::vector<NodeSpec> specs;
  specs.reserve(w.size());
  std::vector<std::size_t> stack{root};
  names[root] = g.output_node().name();
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    const Node& orig = g.node(w[n].orig);
    NodeSpec s = orig.spec;
    s.copy_of = detail::original_name(orig.spec);
    s.name = names[n];
    s.inputs.clear();
    for (std::size_t slot = 0; slot < w[n].inputs.size(); ++slot) {
      const std::size_t c = w[n].inputs[slot];
      names[c] = detail::lineage_name(detail::original_name(g.node(w[c].orig).spec), slot, names[n]);
      s.inputs.push_back(names[c]);
      stack.push_back(c);
    }
    if (orig.is_leaf() && s.origin.empty()) s.origin = orig.name();
    specs.push_back(std::move(s));
  }
  return build(std::move(specs), names[root]);
}

// Sorted `lineage kind` lines identifying a tree up to node numbering. Throws
// if some live node has more than one consumer.
inline std::vector<std::string> canonical_form(const Graph& tree) {
  std::vector<std::string> names(tree.size());
  std::vector<std::string> lines;
  for (NodeId k = 0; k < tree.size(); ++k) {
    if (tree.node(k).live && k != tree.output() && tree.consumers(k).size() != 1) {
      throw StructuralError("node '" + tree.node(k).name() + "' has " +
                            std::to_string(tree.consumers(k).size()) + " consumers; not a tree");
    }
  }
  for (NodeId k = tree.size(); k-- > 0;) {
    const Node& n = tree.node(k);
    if (!n.live) continue;
    if (k == tree.output()) {
      names[k] = detail::original_name(n.spec);
    } else {
      auto [c, slot] = tree.consumers(k).front();
      names[k] = detail::lineage_name(detail::original_name(n.spec), slot, names[c]);
    }
    lines.push_back(names[k] + " " + std::string(op_name(n.kind())));
  }
  std::sort(lines.begin(), lines.end());
  return lines;
}

inline bool is_tree(const Graph& g) {
  for (NodeId k = 0; k < g.size(); ++k)
    if (g.node(k).live && k != g.output() && g.consumers(k).size() != 1) return false;
  return true;
}

// For each data-leaf copy of a treeified graph, the path in the original graph
// it stands for.
inline std::map<NodeId, Path> leaf_paths(const Graph& tree, const Graph& original) {
  std::map<NodeId, Path> out;
  for (NodeId leaf : tree.leaves()) {
    if (!tree.node(leaf).is_data_leaf()) continue;
    Path p;
    NodeId at = leaf;
    while (true) {
      p.nodes.push_back(original.id(detail::original_name(tree.node(at).spec)));
      if (at == tree.output()) break;
      auto [c, slot] = tree.consumers(at).front();
      p.slots.push_back(slot);
      at = c;
    }
    out.emplace(leaf, std::move(p));
  }
  return out;
}

}  // namespace pathpatch
