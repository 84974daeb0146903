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
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pathpatch/intervene.hpp"
#include "pathpatch/metrics.hpp"
#include "pathpatch/patch.hpp"

namespace pathpatch {

struct HeadRef {
  std::size_t layer = 0;
  std::size_t head = 0;
  NodeId output = 0;  // aL.hH.o
  std::string label() const { return std::to_string(layer) + "." + std::to_string(head); }
};

// Heads of a split transformer graph in (layer, head) order.
inline std::vector<HeadRef> find_heads(const Graph& g) {
  std::vector<HeadRef> out;
  for (std::size_t l = 0;; ++l) {
    std::size_t h = 0;
    for (;; ++h) {
      const auto id = g.find("a" + std::to_string(l) + ".h" + std::to_string(h) + ".o");
      if (!id) break;
      out.push_back({l, h, *id});
    }
    if (h == 0) break;
  }
  if (out.empty()) throw ArgumentError("graph has no attention heads named aL.hH");
  return out;
}

struct HeadScore {
  HeadRef head;
  double score = 0.0;  // AUE with only this head's paths unimportant
};

struct CurvePoint {
  std::size_t k = 0;
  double aue = 0.0;
  double proportion = 0.0;
};

struct GreedyResult {
  std::vector<HeadScore> ranking;
  std::vector<CurvePoint> curve;
  double ate = 0.0;
};

// Scores each head once by its single-head unimportance AUE, ranks them
// (score descending, then layer and head ascending), and reports the
// proportion explained with the top-k heads important and every other head
// unimportant, for k = 0..all.
inline GreedyResult greedy_head_ranking(const Hypothesis& base, const std::vector<SamplePair>& pairs,
                                        std::size_t jobs = 1) {
  if (pairs.empty()) throw ArgumentError("greedy search needs at least one pair");
  const Graph& g = *base.graph;
  const auto heads = find_heads(g);
  const std::size_t H = heads.size();

  std::vector<std::shared_ptr<const TagMask>> single(H);
  for (std::size_t h = 0; h < H; ++h) single[h] = mask_avoiding(g, {heads[h].output});

  // Per pair: single-head deltas and the total effect.
  std::vector<std::vector<double>> deltas(pairs.size(), std::vector<double>(H));
  std::vector<double> totals(pairs.size());
  auto score_range = [&](std::size_t w, std::size_t stride) {
    for (std::size_t i = w; i < pairs.size(); i += stride) {
      PatchedEvaluator ev(g, pairs[i].x_r, pairs[i].x_c);
      const Tensor& ref = ev.reference_output();
      totals[i] = dissimilarity(base, ref, ev.counterfactual_output(), pairs[i]);
      for (std::size_t h = 0; h < H; ++h) deltas[i][h] = dissimilarity(base, ref, ev.patched(*single[h]), pairs[i]);
    }
  };
  auto parallel = [&](auto&& body) {
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, pairs.size()));
    if (n == 1) return body(0, 1);
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> ts;
    for (std::size_t w = 0; w < n; ++w)
      ts.emplace_back([&, w] {
        try {
          body(w, n);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : ts) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  };
  parallel(score_range);

  GreedyResult r;
  double total = 0.0;
  for (double t : totals) total += t;
  r.ate = total / static_cast<double>(pairs.size());
  for (std::size_t h = 0; h < H; ++h) {
    double s = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) s += deltas[i][h];
    r.ranking.push_back({heads[h], s / static_cast<double>(pairs.size())});
  }
  std::stable_sort(r.ranking.begin(), r.ranking.end(),
                   [](const HeadScore& a, const HeadScore& b) { return a.score > b.score; });

  std::vector<std::shared_ptr<const TagMask>> step(H + 1);
  for (std::size_t k = 0; k <= H; ++k) {
    std::set<NodeId> rest;
    for (std::size_t m = k; m < H; ++m) rest.insert(r.ranking[m].head.output);
    step[k] = mask_avoiding(g, rest);
  }
  std::vector<std::vector<double>> curve(pairs.size(), std::vector<double>(H + 1));
  parallel([&](std::size_t w, std::size_t stride) {
    for (std::size_t i = w; i < pairs.size(); i += stride) {
      PatchedEvaluator ev(g, pairs[i].x_r, pairs[i].x_c);
      const Tensor& ref = ev.reference_output();
      for (std::size_t k = 0; k <= H; ++k) curve[i][k] = dissimilarity(base, ref, ev.patched(*step[k]), pairs[i]);
    }
  });
  for (std::size_t k = 0; k <= H; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) s += curve[i][k];
    const double a = s / static_cast<double>(pairs.size());
    r.curve.push_back({k, a, proportion_explained(a, r.ate)});
  }
  return r;
}

}  // namespace pathpatch
