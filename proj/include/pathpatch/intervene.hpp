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
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/patch.hpp"
#include "pathpatch/paths.hpp"
#include "pathpatch/pattern.hpp"

namespace pathpatch {

// One element of the reference set: a binding plus per-example metadata
// (pattern variables such as match positions, and which output rows count).
struct Example {
  Binding binding;
  PatternVars vars;
  std::vector<char> rows;  // empty: every row is scored
};

struct SamplePair {
  std::size_t id = 0;
  std::size_t reference = 0;
  std::optional<std::size_t> counterfactual;  // index when resampled
  Binding x_r;
  Binding x_c;
  PatternVars vars;
  std::vector<char> rows;
};

// Name -> role and vocabulary for every bindable name of a graph, counting the
// origins of derived leaves.
struct LeafInfo {
  LeafRole role = LeafRole::kData;
  std::size_t vocab = 0;
};

inline std::map<std::string, LeafInfo> leaf_info(const Graph& g) {
  std::map<std::string, LeafInfo> out;
  for (NodeId id : g.leaves()) {
    const NodeSpec& s = g.node(id).spec;
    out[s.name] = {s.role, s.vocab};
    if (!s.origin.empty()) out[s.origin] = {s.role, s.vocab};
  }
  return out;
}

// Rows `rows` of entry `name` taken from the reference, the rest from the
// counterfactual. Negative rows count from the end.
inline Binding splice(const Binding& reference, const Binding& counterfactual, const std::string& name,
                      const std::vector<long>& rows) {
  const Tensor& r = reference.at(name);
  const Tensor& c = counterfactual.at(name);
  if (r.shape() != c.shape() || r.rank() == 0) throw ShapeError("cannot splice '" + name + "'");
  const std::size_t n = r.dim(0), width = r.size() / n;
  std::vector<double> data(c.data().begin(), c.data().end());
  for (long row : rows) {
    const long at = row < 0 ? static_cast<long>(n) + row : row;
    if (at < 0 || at >= static_cast<long>(n)) throw ArgumentError("splice row out of range");
    const auto off = static_cast<std::size_t>(at) * width;
    std::copy_n(r.data().begin() + static_cast<std::ptrdiff_t>(off), width, data.begin() + static_cast<std::ptrdiff_t>(off));
  }
  Binding out = counterfactual;
  out.set(name, Tensor(r.shape(), std::move(data)), LeafTag::kSpliced);
  return out;
}

using Transform = std::function<Binding(const Graph&, const Binding&, std::mt19937_64&)>;

// Named input transformations for the transform strategy. "shuffle" permutes
// the rows of every data entry (one permutation per pair, row 0 kept in place
// so a leading BEGIN token stays first). Register more with add().
class TransformRegistry {
 public:
  TransformRegistry() {
    add("shuffle", [](const Graph& g, const Binding& x, std::mt19937_64& rng) {
      const auto info = leaf_info(g);
      Binding out = x;
      std::vector<std::size_t> perm;
      for (const auto& [name, t] : x.values()) {
        auto it = info.find(name);
        if (it == info.end() || it->second.role != LeafRole::kData || t.rank() == 0) continue;
        const std::size_t n = t.dim(0), width = t.size() / n;
        if (perm.size() != n) {
          perm.resize(n);
          for (std::size_t i = 0; i < n; ++i) perm[i] = i;
          if (n > 2) std::shuffle(perm.begin() + 1, perm.end(), rng);
        }
        std::vector<double> data(t.size());
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t w = 0; w < width; ++w) data[i * width + w] = t.data()[perm[i] * width + w];
        out.set(name, Tensor(t.shape(), std::move(data)), LeafTag::kCounterfactual);
      }
      return out;
    });
  }
  void add(const std::string& name, Transform f) { table_.insert_or_assign(name, std::move(f)); }
  const Transform& at(const std::string& name) const {
    auto it = table_.find(name);
    if (it == table_.end()) throw ArgumentError("unknown transform '" + name + "'");
    return it->second;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : table_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, Transform> table_;
};

struct CounterfactualStrategy {
  enum class Kind { kResample, kTransform, kMean, kZero, kGaussian };
  Kind kind = Kind::kResample;
  std::string transform;       // kTransform
  double sigma = 0.0;          // kGaussian
  std::uint64_t noise_seed = 0;
  // Rows kept from the reference in every data entry after drawing x_c
  // (negative counts from the end); the spliced-input construction.
  std::vector<long> reference_rows;

  static CounterfactualStrategy resample() { return {}; }
  static CounterfactualStrategy zero() { return {Kind::kZero, {}, 0.0, 0, {}}; }
  static CounterfactualStrategy mean() { return {Kind::kMean, {}, 0.0, 0, {}}; }
  static CounterfactualStrategy gaussian(double sigma, std::uint64_t seed) {
    if (!(sigma > 0.0)) throw ArgumentError("gaussian noise needs sigma > 0");
    return {Kind::kGaussian, {}, sigma, seed, {}};
  }
  static CounterfactualStrategy transformed(std::string name) { return {Kind::kTransform, std::move(name), 0.0, 0, {}}; }
};

inline std::string_view strategy_name(CounterfactualStrategy::Kind k) {
  switch (k) {
    case CounterfactualStrategy::Kind::kResample: return "resample";
    case CounterfactualStrategy::Kind::kTransform: return "transform";
    case CounterfactualStrategy::Kind::kMean: return "mean";
    case CounterfactualStrategy::Kind::kZero: return "zero";
    case CounterfactualStrategy::Kind::kGaussian: return "gaussian";
  }
  return "?";
}

inline constexpr int kMaxResampleDraws = 100;

// Generator for pair k under a run seed; pairs are independent of each other
// and of how many are drawn.
inline std::mt19937_64 pair_rng(std::uint64_t seed, std::uint64_t k, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

// Draws (x_r, x_c) pairs from a reference set under one strategy.
class Sampler {
 public:
  Sampler(std::shared_ptr<const Graph> g, std::shared_ptr<const std::vector<Example>> refs,
          CounterfactualStrategy strategy, std::shared_ptr<const TransformRegistry> transforms = nullptr)
      : graph_(std::move(g)),
        refs_(std::move(refs)),
        strategy_(std::move(strategy)),
        transforms_(transforms ? std::move(transforms) : std::make_shared<const TransformRegistry>()),
        info_(leaf_info(*graph_)) {
    if (!refs_ || refs_->empty()) throw ArgumentError("reference set is empty");
    using K = CounterfactualStrategy::Kind;
    if (strategy_.kind == K::kGaussian && !(strategy_.sigma > 0.0))
      throw ArgumentError("gaussian noise needs sigma > 0");
    if (strategy_.kind == K::kTransform) transforms_->at(strategy_.transform);
    if (strategy_.kind == K::kMean) mean_ = compute_mean();
  }

  const CounterfactualStrategy& strategy() const noexcept { return strategy_; }
  const std::vector<Example>& references() const noexcept { return *refs_; }
  const Binding& mean_binding() const { return mean_; }

  SamplePair draw(std::uint64_t seed, std::size_t k) const {
    auto rng = pair_rng(seed, k);
    std::uniform_int_distribution<std::size_t> pick(0, refs_->size() - 1);
    const std::size_t r = pick(rng);
    return complete(r, seed, k, rng);
  }

  // Pair k with a fixed reference example (attribution).
  SamplePair draw_for(std::size_t reference, std::uint64_t seed, std::size_t k) const {
    if (reference >= refs_->size()) throw ArgumentError("reference index out of range");
    auto rng = pair_rng(seed, k, 4);
    return complete(reference, seed, k, rng);
  }

  std::vector<SamplePair> draw_many(std::uint64_t seed, std::size_t count) const {
    std::vector<SamplePair> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(draw(seed, k));
    return out;
  }

 private:
  SamplePair complete(std::size_t reference, std::uint64_t seed, std::size_t k, std::mt19937_64& rng) const {
    const std::size_t n = refs_->size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    SamplePair p;
    p.id = k;
    p.reference = reference;
    const Example& ex = (*refs_)[p.reference];
    p.x_r = ex.binding;
    p.vars = ex.vars;
    p.rows = ex.rows;
    using K = CounterfactualStrategy::Kind;
    switch (strategy_.kind) {
      case K::kResample: {
        int draws = 0;
        while (true) {
          const std::size_t c = pick(rng);
          if (!same_data((*refs_)[c].binding, p.x_r)) {
            p.counterfactual = c;
            p.x_c = data_over(p.x_r, (*refs_)[c].binding);
            break;
          }
          if (++draws >= kMaxResampleDraws) {
            throw ArgumentError("resampling drew x_c = x_r " + std::to_string(kMaxResampleDraws) +
                                " times; the reference set is degenerate");
          }
        }
        break;
      }
      case K::kTransform: {
        auto trng = pair_rng(seed, k, 1);
        p.x_c = retag(transforms_->at(strategy_.transform)(*graph_, p.x_r, trng));
        break;
      }
      case K::kMean:
        p.x_c = with_labels(mean_, p.x_r);
        break;
      case K::kZero: {
        Binding z = p.x_r;
        for (const auto& [name, t] : p.x_r.values())
          if (is_data(name)) z.set(name, Tensor::zeros(t.shape()), LeafTag::kCounterfactual);
        p.x_c = z;
        break;
      }
      case K::kGaussian: {
        auto nrng = pair_rng(strategy_.noise_seed, k, 2);
        std::normal_distribution<double> noise(0.0, strategy_.sigma);
        Binding x = p.x_r;
        for (const auto& [name, t] : p.x_r.values()) {
          if (!is_data(name)) continue;
          if (vocab(name) > 0) throw ArgumentError("gaussian noise on token leaf '" + name + "'; bind embeddings instead");
          std::vector<double> data(t.data().begin(), t.data().end());
          for (double& v : data) v += noise(nrng);
          x.set(name, Tensor(t.shape(), std::move(data)), LeafTag::kCounterfactual);
        }
        p.x_c = x;
        break;
      }
    }
    for (const auto& [name, t] : p.x_r.values())
      if (is_data(name) && !strategy_.reference_rows.empty())
        p.x_c = splice(p.x_r, p.x_c, name, strategy_.reference_rows);
    return p;
  }

  bool is_data(const std::string& name) const {
    auto it = info_.find(name);
    return it != info_.end() && it->second.role == LeafRole::kData;
  }
  std::size_t vocab(const std::string& name) const {
    auto it = info_.find(name);
    return it == info_.end() ? 0 : it->second.vocab;
  }
  bool same_data(const Binding& a, const Binding& b) const {
    for (const auto& [name, t] : a.values()) {
      if (!is_data(name)) continue;
      const Tensor* o = b.find(name);
      if (!o || !t.identical(*o)) return false;
    }
    return true;
  }
  Binding retag(const Binding& b) const {
    Binding out;
    for (const auto& [name, t] : b.values()) out.set(name, t, is_data(name) ? LeafTag::kCounterfactual : b.tag(name));
    return out;
  }
  // Data leaves from `src`, everything else (labels) from the reference.
  Binding data_over(const Binding& ref, const Binding& src) const {
    Binding out = ref;
    for (const auto& [name, t] : src.values())
      if (is_data(name)) out.set(name, t, LeafTag::kCounterfactual);
    return out;
  }
  static Binding with_labels(const Binding& data, const Binding& ref) {
    Binding out = ref;
    for (const auto& [name, t] : data.values()) out.set(name, t, LeafTag::kCounterfactual);
    return out;
  }
  Binding compute_mean() const {
    Binding out;
    for (const auto& [name, t] : refs_->front().binding.values()) {
      if (!is_data(name)) continue;
      if (vocab(name) > 0) throw ArgumentError("mean of token leaf '" + name + "'; bind embeddings instead");
      std::vector<double> acc(t.size(), 0.0);
      for (const Example& ex : *refs_) {
        const Tensor& v = ex.binding.at(name);
        if (v.shape() != t.shape()) throw ShapeError("reference entries of '" + name + "' differ in shape");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v.data()[i];
      }
      for (double& a : acc) a /= static_cast<double>(refs_->size());
      out.set(name, Tensor(t.shape(), std::move(acc)), LeafTag::kCounterfactual);
    }
    return out;
  }

  std::shared_ptr<const Graph> graph_;
  std::shared_ptr<const std::vector<Example>> refs_;
  CounterfactualStrategy strategy_;
  std::shared_ptr<const TransformRegistry> transforms_;
  std::map<std::string, LeafInfo> info_;
  Binding mean_;
};

// Which paths a hypothesis calls important.
struct Selection {
  enum class Kind { kPaths, kPattern, kAvoidNodes };
  Kind kind = Kind::kPaths;
  PathSet paths;
  PatternExpr pattern;
  std::string text;
  std::set<NodeId> unimportant;

  static Selection of_paths(PathSet p) {
    Selection s;
    s.paths = std::move(p);
    return s;
  }
  static Selection of_pattern(const std::string& text) {
    Selection s;
    s.kind = Kind::kPattern;
    s.pattern = parse_pattern(text);
    s.text = text;
    return s;
  }
  static Selection avoiding(std::set<NodeId> nodes) {
    Selection s;
    s.kind = Kind::kAvoidNodes;
    s.unimportant = std::move(nodes);
    return s;
  }
};

enum class Dissimilarity { kAbsoluteDifference, kKl, kLossAbsoluteDifference };

inline std::string_view dissimilarity_name(Dissimilarity d) {
  switch (d) {
    case Dissimilarity::kAbsoluteDifference: return "absolute-difference";
    case Dissimilarity::kKl: return "kl";
    case Dissimilarity::kLossAbsoluteDifference: return "loss-absolute-difference";
  }
  return "?";
}

// Output rows that enter the dissimilarity: all, the last one, or the
// example's own row mask.
enum class RowMode { kAll, kFinal, kExample };

struct Hypothesis {
  std::shared_ptr<const Graph> graph;
  Selection important;
  Dissimilarity dissimilarity = Dissimilarity::kAbsoluteDifference;
  RowMode rows = RowMode::kAll;
  CounterfactualStrategy strategy;

  void validate() const {
    if (!graph) throw ArgumentError("hypothesis has no graph");
    const Node& out = graph->output_node();
    switch (dissimilarity) {
      case Dissimilarity::kKl:
        if (out.shape.empty()) throw ArgumentError("kl needs logits output, got a scalar");
        break;
      case Dissimilarity::kLossAbsoluteDifference:
        if (out.kind() != OpKind::kCrossEntropy) throw ArgumentError("loss-absolute-difference needs a loss output");
        break;
      case Dissimilarity::kAbsoluteDifference:
        break;
    }
    if (important.kind == Selection::Kind::kPaths) {
      for (const Path& p : important.paths) {
        if (p.nodes.empty() || p.nodes.back() != graph->output() || !graph->node(p.nodes.front()).is_data_leaf())
          throw ArgumentError("important path is not a leaf-to-output path of the graph");
        for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
          const auto& ins = graph->node(p.nodes[i + 1]).inputs;
          if (p.slots[i] >= ins.size() || ins[p.slots[i]] != p.nodes[i])
            throw ArgumentError("important path uses a missing edge");
        }
      }
    }
  }
};

namespace detail {
inline void pattern_var_names(const PatternExpr& e, std::set<std::string>& out) {
  for (const PatternItem& it : e.items) {
    for (std::size_t i = 0; i < it.element.size(); ++i) {
      if (it.element[i] != '$') continue;
      std::size_t j = i + 1;
      while (j < it.element.size() && (std::isalnum(static_cast<unsigned char>(it.element[j])) || it.element[j] == '_')) ++j;
      out.insert(it.element.substr(i + 1, j - i - 1));
    }
  }
  for (const PatternExpr& a : e.args) pattern_var_names(a, out);
}
}  // namespace detail

// Tag masks of one hypothesis, one per distinct assignment of the variables
// its pattern mentions. Safe to share between worker threads.
class MaskCache {
 public:
  explicit MaskCache(const Hypothesis& h) : h_(h) {
    if (h.important.kind == Selection::Kind::kPattern) detail::pattern_var_names(h.important.pattern, names_);
  }

  std::shared_ptr<const TagMask> get(const PatternVars& vars) {
    PatternVars key;
    for (const std::string& n : names_) {
      auto it = vars.find(n);
      if (it == vars.end()) throw ArgumentError("pattern variable $" + n + " is not bound");
      key.emplace(n, it->second);
    }
    std::lock_guard lock(mu_);
    auto it = masks_.find(key);
    if (it != masks_.end()) return it->second;
    std::shared_ptr<const TagMask> m;
    const Graph& g = *h_.graph;
    switch (h_.important.kind) {
      case Selection::Kind::kPaths: m = mask_from_paths(g, h_.important.paths); break;
      case Selection::Kind::kPattern: m = mask_from_pattern(g, h_.important.pattern, key); break;
      case Selection::Kind::kAvoidNodes: m = mask_avoiding(g, h_.important.unimportant); break;
    }
    masks_.emplace(key, m);
    return m;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return masks_.size();
  }

 private:
  const Hypothesis& h_;
  std::set<std::string> names_;
  mutable std::mutex mu_;
  std::map<PatternVars, std::shared_ptr<const TagMask>> masks_;
};

// G_H(x_r, x_c).
inline Tensor run_patched(const Hypothesis& h, const SamplePair& pair, EvalStats* stats = nullptr) {
  MaskCache cache(h);
  PatchedEvaluator ev(*h.graph, pair.x_r, pair.x_c, stats);
  return ev.patched(*cache.get(pair.vars));
}

// Important set of the node-mediator form: every path avoiding the nodes.
inline PathSet nodes_to_paths(const Graph& g, const std::set<std::string>& unimportant,
                              std::uint64_t cap = kDefaultPathCap) {
  std::set<NodeId> ids;
  for (const std::string& n : unimportant) ids.insert(g.id(n));
  return paths_avoiding(g, ids, cap);
}

inline Tensor zero_ablate_nodes(const Graph& g, const std::set<std::string>& nodes, const Binding& b,
                                EvalStats* stats = nullptr) {
  std::map<NodeId, Tensor> over;
  for (const std::string& n : nodes) {
    const NodeId id = g.id(n);
    over.emplace(id, Tensor::zeros(g.node(id).shape));
  }
  return evaluate_with_overrides(g, b, over, stats);
}

// Direct node replacement: each listed node takes its value on x_c.
inline Tensor replace_nodes(const Graph& g, const std::set<std::string>& nodes, const Binding& reference,
                            const Binding& counterfactual) {
  const auto cf = evaluate_all(g, counterfactual_view(g, reference, counterfactual));
  std::map<NodeId, Tensor> over;
  for (const std::string& n : nodes) {
    const NodeId id = g.id(n);
    if (!cf[id]) throw ArgumentError("node '" + n + "' does not reach the output");
    over.emplace(id, *cf[id]);
  }
  return evaluate_with_overrides(g, reference, over);
}

}  // namespace pathpatch
