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
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathpatch/datasets.hpp"
#include "pathpatch/graph_io.hpp"
#include "pathpatch/intervene.hpp"
#include "pathpatch/metrics.hpp"
#include "pathpatch/models.hpp"
#include "pathpatch/rewrites.hpp"
#include "pathpatch/search.hpp"
#include "pathpatch/weights_io.hpp"

// Config-driven experiments behind the CLI. A config is JSON (comments
// allowed) with sections model, rewrites, dataset, hypothesis, sampler,
// metric, output and a mandatory top-level seed; see docs/config.md.

namespace pathpatch {

using json = nlohmann::json;

inline constexpr const char* kReportSchema = "pathpatch-report/1";

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::size_t> jobs;
  std::ostream* log = &std::cout;
};

inline json parse_config_text(const std::string& text) {
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
}

inline json load_config(const std::filesystem::path& path) { return parse_config_text(read_file(path)); }

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

inline const json& section(const json& cfg, const char* name) {
  static const json empty = json::object();
  if (!cfg.contains(name)) return empty;
  if (!cfg.at(name).is_object() && !cfg.at(name).is_array()) throw ConfigError(std::string("section '") + name + "' must be an object");
  return cfg.at(name);
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

inline Tensor tensor_from_json(const json& j) {
  // Nested arrays of numbers, rectangular.
  Shape shape;
  const json* at = &j;
  while (at->is_array()) {
    if (at->empty()) throw ConfigError("empty array in tensor");
    shape.push_back(at->size());
    at = &(*at)[0];
  }
  std::vector<double> data;
  auto walk = [&](auto&& self, const json& x, std::size_t depth) -> void {
    if (depth == shape.size()) {
      if (!x.is_number()) throw ConfigError("tensor entries must be numbers");
      data.push_back(x.get<double>());
      return;
    }
    if (!x.is_array() || x.size() != shape[depth]) throw ConfigError("tensor array is not rectangular");
    for (const json& e : x) self(self, e, depth + 1);
  };
  walk(walk, j, 0);
  return Tensor(shape, std::move(data));
}

}  // namespace detail

// Everything an experiment needs once the config has been resolved.
struct Setup {
  json config;
  std::filesystem::path base;  // directory relative paths resolve against
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::filesystem::path out_dir;
  std::optional<WeightBundle> weights;
  std::shared_ptr<const Graph> graph;
  std::shared_ptr<std::vector<Example>> references;
  std::vector<std::size_t> class_counts;  // empty when not a token dataset
  std::size_t vocab = 0;
};

inline std::filesystem::path resolve_path(const Setup& s, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (s.base / path).lexically_normal();
}

inline Dissimilarity parse_dissimilarity(const std::string& s) {
  if (s == "absolute-difference") return Dissimilarity::kAbsoluteDifference;
  if (s == "kl" || s == "kl-of-output-distributions") return Dissimilarity::kKl;
  if (s == "loss-absolute-difference") return Dissimilarity::kLossAbsoluteDifference;
  throw ConfigError("unknown dissimilarity '" + s + "'");
}

inline RowMode parse_rows(const std::string& s) {
  if (s == "all") return RowMode::kAll;
  if (s == "final") return RowMode::kFinal;
  if (s == "subset" || s == "example") return RowMode::kExample;
  throw ConfigError("unknown rows '" + s + "' (all, final, subset)");
}

inline CounterfactualStrategy parse_strategy(const json& j) {
  const std::string kind = detail::get_or<std::string>(j, "strategy", "resample");
  CounterfactualStrategy s;
  if (kind == "resample") {
    s = CounterfactualStrategy::resample();
  } else if (kind == "zero") {
    s = CounterfactualStrategy::zero();
  } else if (kind == "mean") {
    s = CounterfactualStrategy::mean();
  } else if (kind == "gaussian") {
    const double sigma = detail::get_or<double>(j, "sigma", 0.0);
    if (!(sigma > 0.0)) throw ConfigError("gaussian sampler needs sigma > 0");
    if (!j.contains("noise_seed")) throw ConfigError("gaussian sampler needs noise_seed");
    s = CounterfactualStrategy::gaussian(sigma, j.at("noise_seed").get<std::uint64_t>());
  } else if (kind == "transform") {
    s = CounterfactualStrategy::transformed(detail::get_or<std::string>(j, "transform", "shuffle"));
  } else {
    throw ConfigError("unknown sampler strategy '" + kind + "'");
  }
  if (j.contains("reference_rows")) s.reference_rows = j.at("reference_rows").get<std::vector<long>>();
  return s;
}

inline Graph apply_rewrite(const Setup& s, const Graph& g, const json& r) {
  const std::string op = detail::get_or<std::string>(r, "op", "");
  if (op == "split_attention_heads") return split_attention_heads(g, r.at("node").get<std::string>());
  if (op == "merge_attention_heads") return merge_attention_heads(g, r.at("node").get<std::string>());
  if (op == "slice_positions") return slice_positions(g, detail::get_or<std::string>(r, "leaf", "tok"));
  if (op == "split_linear") {
    std::vector<Tensor> ws;
    for (const json& w : r.at("weights")) ws.push_back(detail::tensor_from_json(w));
    return split_linear(g, r.at("node").get<std::string>(), ws);
  }
  if (op == "subspace_split") {
    const std::string node = r.at("node").get<std::string>();
    Tensor p;
    if (r.contains("projection")) {
      p = detail::tensor_from_json(r.at("projection"));
    } else if (r.contains("basis")) {
      // Coordinate projector onto the listed dimensions.
      const std::size_t d = g.node(g.id(node)).shape.back();
      std::vector<double> m(d * d, 0.0);
      for (std::size_t k : r.at("basis").get<std::vector<std::size_t>>()) {
        if (k >= d) throw ConfigError("basis index out of range");
        m[k * d + k] = 1.0;
      }
      p = Tensor({d, d}, std::move(m));
    } else {
      throw ConfigError("subspace_split needs projection or basis");
    }
    return subspace_split(g, node, p);
  }
  if (op == "mean_split") {
    const std::string node = r.at("node").get<std::string>();
    const json& m = r.at("mean");
    Tensor mean;
    if (m.is_string() && m.get<std::string>() == "dataset") {
      if (!s.references || s.references->empty()) throw ConfigError("mean_split over an empty dataset");
      std::vector<double> acc;
      const Graph sub = reroot(g, node);
      for (const Example& ex : *s.references) {
        const Tensor v = evaluate(sub, ex.binding);
        if (acc.empty()) acc.assign(v.size(), 0.0);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v.data()[i];
      }
      for (double& a : acc) a /= static_cast<double>(s.references->size());
      mean = Tensor(g.node(g.id(node)).shape, std::move(acc));
    } else {
      mean = detail::tensor_from_json(m);
    }
    return mean_split(g, node, mean);
  }
  throw ConfigError("unknown rewrite '" + op + "'");
}

inline std::vector<Example> load_references(Setup& s, const json& d) {
  const std::string kind = detail::get_or<std::string>(d, "kind", "induction");
  const std::uint64_t seed = detail::get_or<std::uint64_t>(d, "seed", s.seed);
  std::vector<Example> out;
  auto from_induction = [&](const std::vector<InductionExample>& xs) {
    std::vector<std::vector<std::size_t>> streams;
    for (const auto& ex : xs) {
      auto st = ex.tokens;
      st.push_back(ex.labels.back());
      streams.push_back(std::move(st));
    }
    std::vector<std::size_t> counts;
    if (d.contains("frequency")) {
      counts = counts_from_text(read_file(resolve_path(s, d.at("frequency").get<std::string>())));
      counts.resize(std::max(counts.size(), s.vocab), 0);
    } else {
      counts = token_counts(streams, std::max<std::size_t>(s.vocab, 1));
    }
    s.class_counts = counts;
    const std::size_t top_k = detail::get_or<std::size_t>(d, "top_k", kDefaultTopK);
    for (std::size_t n = 0; n < xs.size(); ++n) {
      Example e = induction_example(xs[n]);
      // Row p predicts stream position p + 1.
      const auto mask = filter_repeats_subset(streams[n], counts, top_k);
      e.rows.assign(mask.begin() + 1, mask.end());
      out.push_back(std::move(e));
    }
  };
  if (kind == "induction") {
    InductionOptions opt;
    opt.ngram = detail::get_or<std::size_t>(d, "ngram", 1);
    const std::string f = detail::get_or<std::string>(d, "fillers", "zipf");
    if (f != "zipf" && f != "uniform") throw ConfigError("fillers must be zipf or uniform");
    opt.fillers = f == "zipf" ? FillerDistribution::kZipf : FillerDistribution::kUniform;
    const std::size_t length = detail::get_or<std::size_t>(d, "length", s.weights ? s.weights->config.context : 0);
    from_induction(gen_induction_sequences(detail::get_or<std::size_t>(d, "count", 1000), length,
                                           detail::get_or<std::size_t>(d, "vocab", s.vocab), seed, opt));
  } else if (kind == "distinct") {
    const std::size_t length = detail::get_or<std::size_t>(d, "length", s.weights ? s.weights->config.context : 0);
    from_induction(gen_distinct_sequences(detail::get_or<std::size_t>(d, "count", 100), length,
                                          detail::get_or<std::size_t>(d, "vocab", s.vocab), seed));
  } else if (kind == "file") {
    from_induction(induction_from_text(read_file(resolve_path(s, d.at("path").get<std::string>()))));
  } else if (kind == "numbers") {
    for (const auto& p : gen_number_prompts(detail::get_or<std::size_t>(d, "range_end", 100)))
      out.push_back(number_example(p));
  } else if (kind == "random") {
    std::mt19937_64 rng(seed);
    const std::size_t count = detail::get_or<std::size_t>(d, "count", 100);
    for (std::size_t n = 0; n < count; ++n) out.push_back({random_binding(*s.graph, rng), {}, {}});
  } else if (kind == "bindings") {
    for (const json& b : d.at("values")) {
      Example e;
      for (const auto& [name, v] : b.items()) e.binding.set(name, detail::tensor_from_json(v));
      out.push_back(std::move(e));
    }
  } else {
    throw ConfigError("unknown dataset kind '" + kind + "'");
  }
  if (out.empty()) throw ConfigError("dataset is empty");
  if (d.contains("vars")) {
    for (Example& e : out)
      for (const auto& [k, v] : d.at("vars").items()) e.vars[k] = v.get<long>();
  }
  return out;
}

// Resolves model, rewrites and dataset. The graph's output follows the
// dissimilarity: logits (`unembed`) for kl, the loss node otherwise.
inline Setup prepare(const json& cfg, const std::filesystem::path& base, const RunOptions& opt) {
  Setup s;
  s.config = cfg;
  s.base = base;
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  if (opt.seed) {
    s.seed = *opt.seed;
  } else if (cfg.contains("seed")) {
    s.seed = detail::get_or<std::uint64_t>(cfg, "seed", 0);
  } else {
    throw ConfigError("config has no seed; seeds are never defaulted");
  }
  s.jobs = opt.jobs.value_or(detail::get_or<std::size_t>(cfg, "jobs", std::max(1u, std::thread::hardware_concurrency())));
  if (s.jobs == 0) s.jobs = 1;
  const json& out = detail::section(cfg, "output");
  s.out_dir = opt.out_dir.value_or(resolve_path(s, detail::get_or<std::string>(out, "dir", "out")));

  const json& m = detail::section(cfg, "model");
  const json& h = detail::section(cfg, "hypothesis");
  const std::string dis = detail::get_or<std::string>(h, "dissimilarity", "loss-absolute-difference");
  const std::string kind = detail::get_or<std::string>(m, "kind", "induction");
  const std::string input = detail::get_or<std::string>(m, "input", "tokens");
  if (input != "tokens" && input != "embeddings") throw ConfigError("model.input must be tokens or embeddings");
  if (kind == "graph") {
    s.graph = std::make_shared<const Graph>(load_graph(resolve_path(s, m.at("path").get<std::string>())));
  } else {
    if (kind == "induction") {
      InductionParams p;
      const json& pp = detail::section(m, "params");
      p.beta_prev = detail::get_or<double>(pp, "beta_prev", p.beta_prev);
      p.beta_match = detail::get_or<double>(pp, "beta_match", p.beta_match);
      p.beta_sink = detail::get_or<double>(pp, "beta_sink", p.beta_sink);
      p.gamma = detail::get_or<double>(pp, "gamma", p.gamma);
      s.weights = construct_induction_model(detail::get_or<std::size_t>(m, "vocab", 24),
                                            detail::get_or<std::size_t>(m, "context", 12), p);
    } else if (kind == "weights") {
      s.weights = load_weights(resolve_path(s, m.at("path").get<std::string>()));
    } else if (kind == "random") {
      TransformerConfig c = config_from_json(detail::section(m, "config"));
      std::mt19937_64 rng(detail::get_or<std::uint64_t>(m, "weights_seed", s.seed));
      s.weights = random_weights(c, rng);
    } else {
      throw ConfigError("unknown model kind '" + kind + "'");
    }
    BuildOptions bo;
    bo.length = detail::get_or<std::size_t>(m, "length", 0);
    bo.input = input == "tokens" ? InputMode::kTokens : InputMode::kEmbeddings;
    bo.split_heads = detail::get_or<bool>(m, "split_heads", true);
    bo.slice_tokens = detail::get_or<bool>(m, "slice_tokens", false);
    Graph g = build_transformer_graph(*s.weights, bo);
    s.vocab = s.weights->config.vocab;
    if (parse_dissimilarity(dis) == Dissimilarity::kKl) g = eliminate_dead(reroot(g, "unembed"));
    s.graph = std::make_shared<const Graph>(std::move(g));
  }
  if (m.contains("output")) s.graph = std::make_shared<const Graph>(reroot(*s.graph, m.at("output").get<std::string>()));

  s.references = std::make_shared<std::vector<Example>>(load_references(s, detail::section(cfg, "dataset")));
  // Hypothesis-level integers such as a window size K join every example's
  // pattern variables.
  if (h.contains("vars")) {
    for (Example& e : *s.references)
      for (const auto& [k, v] : h.at("vars").items()) e.vars[k] = v.get<long>();
  }
  if (input == "embeddings") {
    for (Example& e : *s.references) e = embedded(e, s.weights->at("W_E"));
  }
  if (cfg.contains("rewrites")) {
    Graph g = *s.graph;
    for (const json& r : cfg.at("rewrites")) g = apply_rewrite(s, g, r);
    s.graph = std::make_shared<const Graph>(std::move(g));
  }
  return s;
}

// Names along `text` ("a → b → c"), matched exactly against enumerated paths.
inline PathSet parse_explicit_paths(const Graph& g, const std::vector<std::string>& texts) {
  std::vector<std::vector<std::string>> wanted;
  for (const std::string& t : texts) {
    const PatternExpr e = parse_pattern(t);
    if (e.op != PatternExpr::Op::kSequence) throw ConfigError("explicit path '" + t + "' is not a plain path");
    std::vector<std::string> names;
    for (const PatternItem& it : e.items) {
      if (it.gap) throw ConfigError("explicit path '" + t + "' contains a gap");
      names.push_back(it.element);
    }
    for (const std::string& n : names) g.id(n);
    wanted.push_back(std::move(names));
  }
  std::vector<Path> keep;
  for (const Path& p : enumerate_paths(g)) {
    std::vector<std::string> names;
    for (NodeId n : p.nodes) names.push_back(g.node(n).name());
    if (std::find(wanted.begin(), wanted.end(), names) != wanted.end()) keep.push_back(p);
  }
  return PathSet(g, std::move(keep));
}

inline Hypothesis make_hypothesis(const Setup& s) {
  const json& h = detail::section(s.config, "hypothesis");
  Hypothesis hyp;
  hyp.graph = s.graph;
  // Loss graphs default to the loss difference, anything else to the output.
  const bool has_loss = s.graph->output_node().kind() == OpKind::kCrossEntropy;
  hyp.dissimilarity = parse_dissimilarity(
      detail::get_or<std::string>(h, "dissimilarity", has_loss ? "loss-absolute-difference" : "absolute-difference"));
  const std::string rows_default = hyp.dissimilarity == Dissimilarity::kKl ? "final" : "all";
  hyp.rows = parse_rows(detail::get_or<std::string>(h, "rows", rows_default));
  hyp.strategy = parse_strategy(detail::section(s.config, "sampler"));
  int given = 0;
  for (const char* k : {"important", "unimportant", "unimportant_nodes", "important_paths"}) given += h.contains(k);
  if (given > 1) throw ConfigError("hypothesis: give one of important, unimportant, unimportant_nodes, important_paths");
  if (h.contains("important")) {
    hyp.important = Selection::of_pattern(h.at("important").get<std::string>());
  } else if (h.contains("unimportant")) {
    const std::string text = h.at("unimportant").get<std::string>();
    hyp.important = Selection::of_pattern("not (" + text + ")");
    parse_pattern(text);  // positions in errors refer to the user's text
  } else if (h.contains("unimportant_nodes")) {
    std::set<NodeId> ids;
    for (const auto& n : h.at("unimportant_nodes").get<std::vector<std::string>>()) ids.insert(s.graph->id(n));
    hyp.important = Selection::avoiding(ids);
  } else if (h.contains("important_paths")) {
    hyp.important = Selection::of_paths(parse_explicit_paths(*s.graph, h.at("important_paths").get<std::vector<std::string>>()));
  } else {
    hyp.important = Selection::of_pattern("all");
  }
  hyp.validate();
  return hyp;
}

inline Sampler make_sampler(const Setup& s, const Hypothesis& h) {
  return Sampler(s.graph, s.references, h.strategy);
}

inline std::size_t pair_count(const Setup& s) {
  return detail::get_or<std::size_t>(detail::section(s.config, "sampler"), "pairs", 1000);
}

inline std::vector<double> class_frequency(const Setup& s) {
  if (s.class_counts.empty()) return {};
  double total = 0.0;
  for (auto c : s.class_counts) total += static_cast<double>(c);
  std::vector<double> f;
  for (auto c : s.class_counts) f.push_back(static_cast<double>(c) / total);
  return f;
}

inline json summary_json(const Summary& sm) {
  json a;
  a["aue"] = sm.aue;
  a["ate"] = sm.ate;
  if (sm.proportion) {
    a["proportion_explained"] = *sm.proportion;
  } else {
    a["proportion_explained"] = nullptr;
    a["proportion_flag"] = "undefined: total effect is 0";
  }
  a["aue_standard_error"] = sm.aue_standard_error;
  a["aue_bootstrap_error"] = sm.aue_bootstrap_error;
  a["max_unexplained"] = sm.max_unexplained;
  if (sm.loss_difference) {
    a["difference_in_expected_loss"] = {
        {"value", sm.loss_difference->value},
        {"baseline", sm.loss_difference->baseline},
        {"warning", "per-example differences can cancel inside the expectation"}};
  }
  a["proportion_uniform_denominator"] = sm.proportion_uniform ? json(*sm.proportion_uniform) : json(nullptr);
  a["proportion_frequency_denominator"] = sm.proportion_frequency ? json(*sm.proportion_frequency) : json(nullptr);
  return a;
}

inline json hypothesis_json(const Hypothesis& h, const json& section) {
  json j;
  j["dissimilarity"] = std::string(dissimilarity_name(h.dissimilarity));
  if (h.dissimilarity == Dissimilarity::kKl) j["kl_direction"] = "KL(reference || patched) over softmax of logits";
  j["rows"] = h.rows == RowMode::kAll ? "all" : h.rows == RowMode::kFinal ? "final" : "subset";
  for (const char* k : {"important", "unimportant", "unimportant_nodes", "important_paths"})
    if (section.contains(k)) j[k] = section.at(k);
  j["strategy"] = std::string(strategy_name(h.strategy.kind));
  return j;
}

inline std::string pairs_tsv(const std::vector<PairRecord>& recs) {
  std::ostringstream out;
  out << "pair\treference\tcounterfactual\tdelta\ttotal\tpatched_loss\treference_loss\tcounterfactual_loss\n";
  for (const auto& r : recs) {
    out << r.id << '\t' << r.reference << '\t' << (r.counterfactual ? std::to_string(*r.counterfactual) : "NA") << '\t'
        << detail::fmt(r.delta) << '\t' << detail::fmt(r.total) << '\t' << detail::fmt(r.patched_loss) << '\t'
        << detail::fmt(r.reference_loss) << '\t' << detail::fmt(r.counterfactual_loss) << '\n';
  }
  return out.str();
}

inline json base_report(const Setup& s, const std::string& command) {
  json r;
  r["schema"] = kReportSchema;
  r["command"] = command;
  r["seed"] = s.seed;
  r["graph"] = {{"nodes", s.graph->size()}, {"output", s.graph->output_node().name()}};
  r["references"] = s.references->size();
  r["config"] = s.config;
  return r;
}

inline void write_report(const Setup& s, const json& report, const std::string& name = "report.json") {
  write_file(s.out_dir / name, report.dump(2) + "\n");
}

inline void print_summary(std::ostream& log, const Summary& sm) {
  log << "pairs " << sm.pairs << "  AUE " << sm.aue << "  ATE " << sm.ate << "  proportion explained ";
  if (sm.proportion) {
    log << *sm.proportion << "%\n";
  } else {
    log << "undefined (ATE = 0)\n";
  }
}

inline json run_patch(const Setup& s, const RunOptions& opt, const std::string& command = "patch") {
  const Hypothesis h = make_hypothesis(s);
  const Sampler sampler = make_sampler(s, h);
  const auto pairs = sampler.draw_many(s.seed, pair_count(s));
  ScoringOptions so;
  so.jobs = s.jobs;
  so.class_frequency = class_frequency(s);
  const auto recs = score_pairs(h, pairs, so);
  const Summary sm = summarize(recs, s.seed);
  json r = base_report(s, command);
  r["hypothesis"] = hypothesis_json(h, detail::section(s.config, "hypothesis"));
  r["pairs"] = recs.size();
  r["aggregates"] = summary_json(sm);
  r["records_file"] = "pairs.tsv";
  if (h.strategy.kind == CounterfactualStrategy::Kind::kGaussian) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& p : pairs)
      for (const auto& [name, t] : p.x_r.values()) {
        const Tensor* c = p.x_c.find(name);
        if (!c || c->identical(t)) continue;
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double e = c->data()[i] - t.data()[i];
          sum += e;
          sq += e * e;
          ++n;
        }
      }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    const double var = n > 1 ? (sq - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1) : 0.0;
    r["noise"] = {{"sigma", h.strategy.sigma}, {"draws", n}, {"empirical_std", std::sqrt(std::max(var, 0.0))}};
  }
  write_file(s.out_dir / "pairs.tsv", pairs_tsv(recs));
  write_report(s, r);
  print_summary(*opt.log, sm);
  return r;
}

inline json run_attribute(const Setup& s, const RunOptions& opt) {
  const Hypothesis h = make_hypothesis(s);
  const Sampler sampler = make_sampler(s, h);
  const json& a = detail::section(s.config, "attribute");
  std::vector<std::size_t> refs;
  if (a.contains("references")) {
    refs = a.at("references").get<std::vector<std::size_t>>();
  } else {
    const std::size_t n = std::min(detail::get_or<std::size_t>(a, "count", 10), s.references->size());
    for (std::size_t k = 0; k < n; ++k) refs.push_back(k);
  }
  const std::size_t samples = detail::get_or<std::size_t>(a, "samples", 20);
  std::ostringstream tsv;
  tsv << "reference\tposition\ttoken\tlabel\tattribution\n";
  json tables = json::array();
  for (std::size_t r : refs) {
    if (r >= s.references->size()) throw ConfigError("attribute reference " + std::to_string(r) + " out of range");
    const Example& ex = (*s.references)[r];
    std::vector<Binding> cfs;
    for (std::size_t k = 0; k < samples; ++k) cfs.push_back(sampler.draw_for(r, s.seed, k).x_c);
    const auto values = attribution(h, ex.binding, ex.vars, cfs);
    const Tensor* tok = ex.binding.find("tok");
    const Tensor* lab = ex.binding.find("labels");
    double max_abs = 0.0;
    for (std::size_t t = 0; t < values.size(); ++t) {
      tsv << r << '\t' << t << '\t' << (tok ? std::to_string(static_cast<long>(tok->data()[t])) : "NA") << '\t'
          << (lab ? std::to_string(static_cast<long>(lab->data()[t])) : "NA") << '\t' << detail::fmt(values[t]) << '\n';
      max_abs = std::max(max_abs, std::abs(values[t]));
    }
    tables.push_back({{"reference", r}, {"values", values}, {"max_abs", max_abs}});
  }
  json rep = base_report(s, "attribute");
  rep["hypothesis"] = hypothesis_json(h, detail::section(s.config, "hypothesis"));
  rep["samples"] = samples;
  rep["attribution"] = tables;
  rep["table_file"] = "attribution.tsv";
  write_file(s.out_dir / "attribution.tsv", tsv.str());
  write_report(s, rep);
  *opt.log << "attribution for " << refs.size() << " references written to " << (s.out_dir / "attribution.tsv").string()
           << "\n";
  return rep;
}

inline json run_greedy(const Setup& s, const RunOptions& opt) {
  Hypothesis h = make_hypothesis(s);
  const Sampler sampler = make_sampler(s, h);
  const auto pairs = sampler.draw_many(s.seed, pair_count(s));
  const GreedyResult g = greedy_head_ranking(h, pairs, s.jobs);
  json rep = base_report(s, "greedy");
  rep["hypothesis"] = hypothesis_json(h, detail::section(s.config, "hypothesis"));
  rep["pairs"] = pairs.size();
  rep["ate"] = g.ate;
  json ranking = json::array();
  for (const auto& hs : g.ranking) ranking.push_back({{"head", hs.head.label()}, {"score", hs.score}});
  rep["ranking"] = ranking;
  json curve = json::array();
  std::ostringstream tsv;
  tsv << "k\thead_added\taue\tproportion_explained\n";
  for (const auto& c : g.curve) {
    curve.push_back({{"k", c.k}, {"aue", c.aue}, {"proportion_explained", c.proportion}});
    tsv << c.k << '\t' << (c.k ? g.ranking[c.k - 1].head.label() : "-") << '\t' << detail::fmt(c.aue) << '\t'
        << detail::fmt(c.proportion) << '\n';
  }
  rep["curve"] = curve;
  rep["curve_file"] = "curve.tsv";
  write_file(s.out_dir / "curve.tsv", tsv.str());
  write_report(s, rep);
  *opt.log << "ranking:";
  for (std::size_t k = 0; k < std::min<std::size_t>(5, g.ranking.size()); ++k)
    *opt.log << " " << g.ranking[k].head.label() << " (" << g.ranking[k].score << ")";
  *opt.log << "\n";
  if (g.curve.size() > 2) *opt.log << "top-2 proportion explained " << g.curve[2].proportion << "%\n";
  return rep;
}

// Applies the config's rewrites one at a time to the unrewritten graph and
// checks each against its predecessor on probe bindings.
inline json run_rewrite_check(const Setup& s, const std::filesystem::path& base, const RunOptions& opt) {
  json cfg = s.config;
  json rewrites = cfg.contains("rewrites") ? cfg.at("rewrites") : json::array();
  cfg.erase("rewrites");
  RunOptions quiet = opt;
  Setup plain = prepare(cfg, base, quiet);
  const std::size_t probes = detail::get_or<std::size_t>(detail::section(s.config, "metric"), "probes", kRewriteProbes);
  Graph g = *plain.graph;
  json results = json::array();
  bool ok = true;
  for (const json& r : rewrites) {
    const std::string op = detail::get_or<std::string>(r, "op", "");
    const double tol = (op == "subspace_split" || op == "mean_split") ? 1e-12 : kRewriteTolerance;
    Graph next = apply_rewrite(plain, g, r);
    const RewriteCheck c = compare_graphs(g, next, probes, s.seed);
    const bool pass = c.max_error <= tol;
    ok = ok && pass;
    results.push_back({{"rewrite", r}, {"probes", c.probes}, {"max_error", c.max_error}, {"tolerance", tol}, {"pass", pass},
                       {"nodes_after", next.size()}});
    *opt.log << (pass ? "ok   " : "FAIL ") << op << "  max error " << c.max_error << " (tolerance " << tol << ")\n";
    g = std::move(next);
  }
  json rep = base_report(s, "rewrite-check");
  rep["rewrites"] = results;
  rep["all_passed"] = ok;
  write_report(s, rep);
  if (!ok) throw VerificationError("a rewrite changed outputs beyond tolerance");
  return rep;
}

inline json run_zero_ablate(const Setup& s, const RunOptions& opt) {
  const json& z = detail::section(s.config, "zero_ablate");
  const auto names = z.at("nodes").get<std::vector<std::string>>();
  std::set<std::string> nodes(names.begin(), names.end());
  const Graph& g = *s.graph;
  const std::size_t count = std::min(detail::get_or<std::size_t>(z, "count", s.references->size()), s.references->size());
  const std::optional<NodeId> logits = g.find("unembed");
  std::size_t hits = 0, hits_ablated = 0;
  double delta = 0.0;
  Hypothesis h;
  h.graph = s.graph;
  h.dissimilarity = parse_dissimilarity(
      detail::get_or<std::string>(detail::section(s.config, "hypothesis"), "dissimilarity", "absolute-difference"));
  h.rows = parse_rows(detail::get_or<std::string>(detail::section(s.config, "hypothesis"), "rows", "all"));
  for (std::size_t n = 0; n < count; ++n) {
    const Example& ex = (*s.references)[n];
    SamplePair p;
    p.x_r = ex.binding;
    p.rows = ex.rows;
    const Tensor base = evaluate(g, ex.binding);
    const Tensor ablated = zero_ablate_nodes(g, nodes, ex.binding);
    delta += dissimilarity(h, base, ablated, p);
    if (logits && ex.binding.find("labels")) {
      const Graph lg = reroot(g, "unembed");
      std::map<NodeId, Tensor> over;
      for (const auto& name : nodes)
        if (auto id = lg.find(name)) over.emplace(*id, Tensor::zeros(lg.node(*id).shape));
      const Tensor l0 = evaluate(lg, ex.binding), l1 = evaluate_with_overrides(lg, ex.binding, over);
      const std::size_t row = l0.dim(0) - 1, v = l0.dim(1);
      const auto label = static_cast<std::size_t>(ex.binding.at("labels").data()[row]);
      auto argmax = [&](const Tensor& t) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < v; ++k)
          if (t.at(row, k) > t.at(row, best)) best = k;
        return best;
      };
      hits += argmax(l0) == label;
      hits_ablated += argmax(l1) == label;
    }
  }
  json rep = base_report(s, "zero-ablate");
  rep["nodes"] = names;
  rep["examples"] = count;
  rep["mean_dissimilarity"] = delta / static_cast<double>(count);
  rep["dissimilarity"] = std::string(dissimilarity_name(h.dissimilarity));
  if (logits) {
    rep["final_accuracy"] = static_cast<double>(hits) / static_cast<double>(count);
    rep["final_accuracy_ablated"] = static_cast<double>(hits_ablated) / static_cast<double>(count);
  }
  write_report(s, rep);
  *opt.log << "mean dissimilarity after ablation " << rep["mean_dissimilarity"].get<double>() << "\n";
  if (logits)
    *opt.log << "final-position accuracy " << rep["final_accuracy"].get<double>() << " -> "
             << rep["final_accuracy_ablated"].get<double>() << "\n";
  return rep;
}

// Writes dataset.txt (and counts.txt) from the dataset section; the model
// section only supplies vocab and context when the dataset omits them.
inline json run_gen_data(const json& cfg, const std::filesystem::path& base, const RunOptions& opt) {
  if (!cfg.contains("seed") && !opt.seed) throw ConfigError("config has no seed; seeds are never defaulted");
  const std::uint64_t seed = opt.seed.value_or(detail::get_or<std::uint64_t>(cfg, "seed", 0));
  const json& d = detail::section(cfg, "dataset");
  const json& m = detail::section(cfg, "model");
  const std::size_t vocab = detail::get_or<std::size_t>(d, "vocab", detail::get_or<std::size_t>(m, "vocab", 24));
  const std::size_t length = detail::get_or<std::size_t>(d, "length", detail::get_or<std::size_t>(m, "context", 12));
  const std::size_t count = detail::get_or<std::size_t>(d, "count", 1000);
  const std::uint64_t dseed = detail::get_or<std::uint64_t>(d, "seed", seed);
  const std::string kind = detail::get_or<std::string>(d, "kind", "induction");
  std::vector<InductionExample> xs;
  if (kind == "induction") {
    InductionOptions o;
    o.ngram = detail::get_or<std::size_t>(d, "ngram", 1);
    o.fillers = detail::get_or<std::string>(d, "fillers", "zipf") == "uniform" ? FillerDistribution::kUniform
                                                                               : FillerDistribution::kZipf;
    xs = gen_induction_sequences(count, length, vocab, dseed, o);
  } else if (kind == "distinct") {
    xs = gen_distinct_sequences(count, length, vocab, dseed);
  } else {
    throw ConfigError("gen-data supports dataset kinds induction and distinct");
  }
  std::vector<std::vector<std::size_t>> streams;
  for (const auto& ex : xs) {
    auto st = ex.tokens;
    st.push_back(ex.labels.back());
    streams.push_back(std::move(st));
  }
  const std::string dir = detail::get_or<std::string>(detail::section(cfg, "output"), "dir", "out");
  const std::filesystem::path out = opt.out_dir.value_or((base / dir).lexically_normal());
  write_file(out / "dataset.txt", induction_to_text(xs));
  write_file(out / "counts.txt", counts_to_text(token_counts(streams, vocab)));
  json rep;
  rep["schema"] = kReportSchema;
  rep["command"] = "gen-data";
  rep["seed"] = seed;
  rep["examples"] = xs.size();
  rep["files"] = {"dataset.txt", "counts.txt"};
  write_file(out / "report.json", rep.dump(2) + "\n");
  *opt.log << "wrote " << xs.size() << " examples to " << (out / "dataset.txt").string() << "\n";
  return rep;
}

// Writes the model section's weights as model.ppw plus the built graph.
inline json run_make_model(const json& cfg, const std::filesystem::path& base, const RunOptions& opt) {
  json c = cfg;
  c["dataset"] = {{"kind", "bindings"}, {"values", json::array({json::object()})}};
  c.erase("rewrites");
  const Setup s = prepare(c, base, opt);
  if (!s.weights) throw ConfigError("make-model needs a transformer model kind");
  save_weights(*s.weights, s.out_dir / "model.ppw");
  save_graph(*s.graph, s.out_dir / "model.graph");
  json rep = base_report(s, "make-model");
  rep.erase("references");
  {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(bundle_hash(*s.weights)));
    rep["hash"] = hex;
  }
  rep["files"] = {"model.ppw", "model.graph"};
  write_report(s, rep);
  *opt.log << "wrote " << (s.out_dir / "model.ppw").string() << "\n";
  return rep;
}

// Entry point for the experiment subcommands.
inline json run_command(const std::string& command, const std::filesystem::path& config_path, const RunOptions& opt) {
  const json cfg = load_config(config_path);
  const std::filesystem::path base = config_path.has_parent_path() ? config_path.parent_path() : ".";
  if (command == "gen-data") return run_gen_data(cfg, base, opt);
  if (command == "make-model") return run_make_model(cfg, base, opt);
  const Setup s = prepare(cfg, base, opt);
  if (command == "patch") return run_patch(s, opt);
  if (command == "trace") {
    if (strategy_name(make_hypothesis(s).strategy.kind) != "gaussian")
      throw ConfigError("trace needs the gaussian sampler");
    return run_patch(s, opt, "trace");
  }
  if (command == "attribute") return run_attribute(s, opt);
  if (command == "greedy") return run_greedy(s, opt);
  if (command == "rewrite-check") return run_rewrite_check(s, base, opt);
  if (command == "zero-ablate") return run_zero_ablate(s, opt);
  throw ArgumentError("unknown command '" + command + "'");
}

}  // namespace pathpatch
