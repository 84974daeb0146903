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
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/intervene.hpp"
#include "pathpatch/patch.hpp"
#include "pathpatch/tensor.hpp"

namespace pathpatch {

// Rows of an output that a pair is scored on. Rank-0 and rank-1 non-loss
// outputs have a single row.
inline std::vector<std::size_t> scored_rows(const Hypothesis& h, const Tensor& out, const SamplePair& pair) {
  const bool per_row = out.rank() == 2 || (out.rank() == 1 && h.graph->output_node().kind() == OpKind::kCrossEntropy);
  const std::size_t n = per_row ? out.dim(0) : 1;
  std::vector<std::size_t> rows;
  switch (h.rows) {
    case RowMode::kAll:
      for (std::size_t t = 0; t < n; ++t) rows.push_back(t);
      break;
    case RowMode::kFinal:
      rows.push_back(n - 1);
      break;
    case RowMode::kExample:
      if (pair.rows.empty()) {
        for (std::size_t t = 0; t < n; ++t) rows.push_back(t);
      } else {
        if (pair.rows.size() != n) throw ShapeError("example row mask does not match output rows");
        for (std::size_t t = 0; t < n; ++t)
          if (pair.rows[t]) rows.push_back(t);
      }
      break;
  }
  return rows;
}

namespace detail {
inline Tensor row_of(const Tensor& t, std::size_t r) {
  if (t.rank() < 2) return t;
  return slice(t, 0, r, r + 1).reshaped({t.dim(1)});
}
}  // namespace detail

// δ between a reference output and another output of the same graph. KL is
// KL(reference ‖ other) over softmax of logits rows. Rows with an empty
// selection score 0.
inline double dissimilarity(const Hypothesis& h, const Tensor& ref, const Tensor& other, const SamplePair& pair) {
  if (ref.shape() != other.shape()) throw ShapeError("dissimilarity of differently shaped outputs");
  const auto rows = scored_rows(h, ref, pair);
  if (rows.empty()) return 0.0;
  switch (h.dissimilarity) {
    case Dissimilarity::kAbsoluteDifference: {
      if (ref.rank() < 2 && h.rows == RowMode::kAll) {
        double s = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) s += std::abs(ref.data()[i] - other.data()[i]);
        return s / static_cast<double>(ref.size());
      }
      double s = 0.0;
      std::size_t count = 0;
      for (std::size_t r : rows) {
        const Tensor a = detail::row_of(ref, r), b = detail::row_of(other, r);
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
        count += a.size();
      }
      return s / static_cast<double>(count);
    }
    case Dissimilarity::kLossAbsoluteDifference: {
      double s = 0.0;
      for (std::size_t r : rows) s += std::abs(ref.data()[r] - other.data()[r]);
      return s / static_cast<double>(rows.size());
    }
    case Dissimilarity::kKl: {
      double s = 0.0;
      for (std::size_t r : rows)
        s += kl_divergence(softmax(detail::row_of(ref, r), 0), softmax(detail::row_of(other, r), 0));
      return s / static_cast<double>(rows.size());
    }
  }
  return 0.0;
}

// Per-row losses of an output: the output itself for a loss graph, else
// cross-entropy of logits against the labels bound in `reference`.
inline std::optional<Tensor> row_losses(const Graph& g, const Tensor& out, const Binding& reference) {
  if (g.output_node().kind() == OpKind::kCrossEntropy) return out;
  if (out.rank() != 2) return std::nullopt;
  for (const Node& n : g.nodes()) {
    if (!n.is_labels_leaf()) continue;
    const Tensor* y = reference.find(n.name());
    if (!y && !n.spec.origin.empty()) y = reference.find(n.spec.origin);
    if (y && y->rank() == 1 && y->dim(0) == out.dim(0)) return cross_entropy_per_token(out, *y);
  }
  return std::nullopt;
}

struct PairRecord {
  std::size_t id = 0;
  std::size_t reference = 0;
  std::optional<std::size_t> counterfactual;
  double delta = 0.0;  // δ(G(x_r), G_H(x_r, x_c))
  double total = 0.0;  // δ(G(x_r), G(x_c))
  std::optional<double> patched_loss;
  std::optional<double> reference_loss;
  std::optional<double> counterfactual_loss;
  std::optional<double> uniform_gap;    // δ against a uniform prediction
  std::optional<double> frequency_gap;  // δ against class frequencies
};

struct ScoringOptions {
  std::size_t jobs = 1;
  std::vector<double> class_frequency;  // empty: no frequency column
};

namespace detail {

inline double mean_rows(const Tensor& losses, const std::vector<std::size_t>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t r : rows) s += losses.data()[r];
  return s / static_cast<double>(rows.size());
}

// δ between the reference output and a fixed prediction `q` (a distribution
// over the vocabulary) on every scored row.
inline std::optional<double> gap_to(const Hypothesis& h, const Tensor& ref_out, const std::optional<Tensor>& ref_loss,
                                    const Binding& reference, const SamplePair& pair, const std::vector<double>& q) {
  const auto rows = scored_rows(h, ref_out, pair);
  if (rows.empty()) return 0.0;
  if (h.dissimilarity == Dissimilarity::kKl && ref_out.rank() >= 1) {
    const Tensor qt = Tensor::vector(q);
    double s = 0.0;
    for (std::size_t r : rows) s += kl_divergence(softmax(row_of(ref_out, r), 0), qt);
    return s / static_cast<double>(rows.size());
  }
  if (h.dissimilarity == Dissimilarity::kLossAbsoluteDifference && ref_loss) {
    // Loss of predicting q is -log q[y].
    const Graph& g = *h.graph;
    const Tensor* y = nullptr;
    for (const Node& n : g.nodes()) {
      if (!n.is_labels_leaf()) continue;
      y = reference.find(n.name());
      if (!y && !n.spec.origin.empty()) y = reference.find(n.spec.origin);
      if (y) break;
    }
    if (!y) return std::nullopt;
    double s = 0.0;
    for (std::size_t r : rows) {
      const auto label = static_cast<std::size_t>(y->data()[r]);
      s += std::abs(-std::log(std::max(q.at(label), kProbabilityFloor)) - ref_loss->data()[r]);
    }
    return s / static_cast<double>(rows.size());
  }
  return std::nullopt;
}

inline std::size_t vocab_of(const Graph& g) {
  for (const Node& n : g.nodes())
    if (n.is_labels_leaf() && n.spec.vocab > 0) return n.spec.vocab;
  const Shape& s = g.output_node().shape;
  return s.empty() ? 0 : s.back();
}

}  // namespace detail

inline PairRecord score_pair(const Hypothesis& h, MaskCache& masks, const SamplePair& pair,
                             const ScoringOptions& opt = {}, EvalStats* stats = nullptr) {
  PatchedEvaluator ev(*h.graph, pair.x_r, pair.x_c, stats);
  const Tensor ref = ev.reference_output();
  const Tensor cf = ev.counterfactual_output();
  const Tensor patched = ev.patched(*masks.get(pair.vars));
  PairRecord r;
  r.id = pair.id;
  r.reference = pair.reference;
  r.counterfactual = pair.counterfactual;
  r.delta = dissimilarity(h, ref, patched, pair);
  r.total = dissimilarity(h, ref, cf, pair);
  const auto lr = row_losses(*h.graph, ref, pair.x_r);
  if (lr) {
    const auto rows = scored_rows(h, ref, pair);
    r.reference_loss = detail::mean_rows(*lr, rows);
    r.patched_loss = detail::mean_rows(*row_losses(*h.graph, patched, pair.x_r), rows);
    r.counterfactual_loss = detail::mean_rows(*row_losses(*h.graph, cf, pair.x_r), rows);
  }
  const std::size_t vocab = detail::vocab_of(*h.graph);
  if (vocab > 0 && h.dissimilarity != Dissimilarity::kAbsoluteDifference) {
    r.uniform_gap = detail::gap_to(h, ref, lr, pair.x_r, pair, std::vector<double>(vocab, 1.0 / static_cast<double>(vocab)));
    if (opt.class_frequency.size() == vocab)
      r.frequency_gap = detail::gap_to(h, ref, lr, pair.x_r, pair, opt.class_frequency);
  }
  return r;
}

// Scores every pair; records come back in pair order whatever the job count.
inline std::vector<PairRecord> score_pairs(const Hypothesis& h, const std::vector<SamplePair>& pairs,
                                           const ScoringOptions& opt = {}) {
  h.validate();
  MaskCache masks(h);
  std::vector<PairRecord> out(pairs.size());
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, pairs.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) out[i] = score_pair(h, masks, pairs[i], opt);
    return out;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < pairs.size(); i += jobs) out[i] = score_pair(h, masks, pairs[i], opt);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw ArgumentError("mean of no values");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double aue(const std::vector<PairRecord>& recs) {
  std::vector<double> v;
  for (const auto& r : recs) v.push_back(r.delta);
  return mean_of(v);
}

inline double ate(const std::vector<PairRecord>& recs) {
  std::vector<double> v;
  for (const auto& r : recs) v.push_back(r.total);
  return mean_of(v);
}

// (1 - aue/ate) x 100; negative when the hypothesis does worse than no
// hypothesis at all.
inline double proportion_explained(double aue_value, double ate_value) {
  if (ate_value == 0.0) throw UndefinedMetricError("proportion explained with a total effect of 0");
  return (1.0 - aue_value / ate_value) * 100.0;
}

struct LossDifference {
  double value = 0.0;
  double baseline = 0.0;
};

// |E[L(G_H)] - E[L(G(x_r))]| with the same for G(x_c) as baseline. Signed
// per-pair differences may cancel inside the expectation.
inline LossDifference diff_expected_loss(const std::vector<PairRecord>& recs) {
  double p = 0.0, r = 0.0, c = 0.0;
  for (const auto& rec : recs) {
    if (!rec.patched_loss) throw ArgumentError("difference in expected loss needs a loss in the graph");
    p += *rec.patched_loss;
    r += *rec.reference_loss;
    c += *rec.counterfactual_loss;
  }
  const double n = static_cast<double>(recs.size());
  return {std::abs(p / n - r / n), std::abs(c / n - r / n)};
}

inline double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

inline double bootstrap_standard_error(const std::vector<double>& v, std::uint64_t seed, std::size_t resamples = 200) {
  if (v.size() < 2) return 0.0;
  auto rng = pair_rng(seed, 0, 3);
  std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
  std::vector<double> means;
  means.reserve(resamples);
  for (std::size_t b = 0; b < resamples; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[pick(rng)];
    means.push_back(s / static_cast<double>(v.size()));
  }
  const double m = mean_of(means);
  double ss = 0.0;
  for (double x : means) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(resamples - 1));
}

struct Summary {
  std::size_t pairs = 0;
  double aue = 0.0;
  double ate = 0.0;
  std::optional<double> proportion;  // empty when ate = 0
  double aue_standard_error = 0.0;
  double aue_bootstrap_error = 0.0;
  double max_unexplained = 0.0;
  std::optional<LossDifference> loss_difference;
  std::optional<double> proportion_uniform;
  std::optional<double> proportion_frequency;
};

inline Summary summarize(const std::vector<PairRecord>& recs, std::uint64_t seed) {
  Summary s;
  s.pairs = recs.size();
  std::vector<double> deltas;
  for (const auto& r : recs) deltas.push_back(r.delta);
  s.aue = aue(recs);
  s.ate = ate(recs);
  if (s.ate != 0.0) s.proportion = proportion_explained(s.aue, s.ate);
  s.aue_standard_error = standard_error(deltas);
  s.aue_bootstrap_error = bootstrap_standard_error(deltas, seed);
  s.max_unexplained = *std::max_element(deltas.begin(), deltas.end());
  bool have_loss = true, have_uniform = true, have_freq = true;
  double uniform = 0.0, freq = 0.0;
  for (const auto& r : recs) {
    have_loss = have_loss && r.patched_loss.has_value();
    have_uniform = have_uniform && r.uniform_gap.has_value();
    have_freq = have_freq && r.frequency_gap.has_value();
    if (r.uniform_gap) uniform += *r.uniform_gap;
    if (r.frequency_gap) freq += *r.frequency_gap;
  }
  const double n = static_cast<double>(recs.size());
  if (have_loss) s.loss_difference = diff_expected_loss(recs);
  if (have_uniform && uniform > 0.0) s.proportion_uniform = (1.0 - s.aue / (uniform / n)) * 100.0;
  if (have_freq && freq > 0.0) s.proportion_frequency = (1.0 - s.aue / (freq / n)) * 100.0;
  return s;
}

// Signed per-row E[L(G_H(x_r, x_c)) - L(G(x_r))] for one reference over a
// set of counterfactuals.
inline std::vector<double> attribution(const Hypothesis& h, const Binding& reference, const PatternVars& vars,
                                       const std::vector<Binding>& counterfactuals) {
  if (counterfactuals.empty()) throw ArgumentError("attribution needs at least one counterfactual");
  MaskCache masks(h);
  const auto mask = masks.get(vars);
  std::vector<double> acc;
  for (const Binding& c : counterfactuals) {
    PatchedEvaluator ev(*h.graph, reference, c);
    const auto lr = row_losses(*h.graph, ev.reference_output(), reference);
    if (!lr) throw ArgumentError("attribution needs a loss in the graph");
    const auto lp = *row_losses(*h.graph, ev.patched(*mask), reference);
    if (acc.empty()) acc.assign(lr->size(), 0.0);
    for (std::size_t t = 0; t < acc.size(); ++t) acc[t] += lp.data()[t] - lr->data()[t];
  }
  for (double& a : acc) a /= static_cast<double>(counterfactuals.size());
  return acc;
}

}  // namespace pathpatch
