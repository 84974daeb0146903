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
#include <filesystem>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/intervene.hpp"
#include "pathpatch/models.hpp"
#include "pathpatch/weights_io.hpp"

namespace pathpatch {

// One "[A][B] ... [A]" sequence. `labels[p]` is the token after position p;
// the final label is B. For the bigram variant A is the second marker token
// and `a1` the first.
struct InductionExample {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> labels;
  std::size_t i = 0;  // second occurrence of A (last position)
  std::size_t j = 0;  // position of B
  std::size_t a = 0;  // token A
  std::size_t b = 0;  // token B
  std::optional<std::size_t> a1;
};

enum class FillerDistribution { kUniform, kZipf };

struct InductionOptions {
  std::size_t ngram = 1;  // 1: [A][B]..[A], 2: [A1][A2][B]..[A1][A2]
  FillerDistribution fillers = FillerDistribution::kZipf;
  double zipf_exponent = 1.0;
};

namespace detail {

// Weighted draw without replacement.
template <typename Rng>
std::vector<std::size_t> draw_distinct(std::vector<std::size_t> pool, std::vector<double> weights, std::size_t count,
                                       Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const std::size_t at = pick(rng);
    out.push_back(pool[at]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
    weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(at));
  }
  return out;
}

}  // namespace detail

// Token 0 is BEGIN and opens every sequence. Markers A and B are distinct,
// fillers are distinct and never a marker, so A is the only repeated token.
// With Zipf fillers the markers come from the upper half of the ids, which
// makes B rare relative to the filler head.
inline std::vector<InductionExample> gen_induction_sequences(std::size_t count, std::size_t length, std::size_t vocab,
                                                             std::uint64_t seed, const InductionOptions& opt = {}) {
  if (opt.ngram != 1 && opt.ngram != 2) throw ArgumentError("ngram must be 1 or 2");
  const std::size_t markers = opt.ngram + 1;
  if (length < 2 * opt.ngram + 2) throw ArgumentError("sequence length too short for the induction pattern");
  const std::size_t fillers = length - 1 - (markers + opt.ngram);
  if (vocab < 2 || vocab - 1 < markers + fillers)
    throw ArgumentError("vocab " + std::to_string(vocab) + " too small to keep " + std::to_string(fillers) +
                        " fillers distinct from the markers");
  const bool zipf = opt.fillers == FillerDistribution::kZipf;
  const std::size_t lo = zipf ? vocab / 2 : 1;
  if (vocab - std::max<std::size_t>(lo, 1) < markers) throw ArgumentError("vocab too small for distinct markers");

  std::mt19937_64 rng(seed);
  std::vector<InductionExample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<std::size_t> mpool;
    for (std::size_t t = std::max<std::size_t>(lo, 1); t < vocab; ++t) mpool.push_back(t);
    const auto m = detail::draw_distinct(mpool, std::vector<double>(mpool.size(), 1.0), markers, rng);
    std::vector<std::size_t> fpool;
    std::vector<double> fw;
    for (std::size_t t = 1; t < vocab; ++t) {
      if (std::find(m.begin(), m.end(), t) != m.end()) continue;
      fpool.push_back(t);
      fw.push_back(zipf ? std::pow(static_cast<double>(t), -opt.zipf_exponent) : 1.0);
    }
    const auto f = detail::draw_distinct(fpool, fw, fillers, rng);
    InductionExample ex;
    ex.tokens.assign(length, 0);
    const std::size_t last = length - 1;
    // First marker block starts at a in [1, last - 2*ngram].
    std::uniform_int_distribution<std::size_t> start(1, last - 2 * opt.ngram);
    const std::size_t a = start(rng);
    std::vector<char> used(length, 0);
    used[0] = 1;
    for (std::size_t k = 0; k < opt.ngram; ++k) {
      ex.tokens[a + k] = m[k];
      ex.tokens[last - opt.ngram + 1 + k] = m[k];
      used[a + k] = used[last - opt.ngram + 1 + k] = 1;
    }
    ex.j = a + opt.ngram;
    ex.tokens[ex.j] = m[opt.ngram];
    used[ex.j] = 1;
    std::size_t fi = 0;
    for (std::size_t p = 1; p < length; ++p)
      if (!used[p]) ex.tokens[p] = f[fi++];
    ex.i = last;
    ex.a = m[opt.ngram - 1];
    ex.b = m[opt.ngram];
    if (opt.ngram == 2) ex.a1 = m[0];
    ex.labels.assign(ex.tokens.begin() + 1, ex.tokens.end());
    ex.labels.push_back(ex.b);
    out.push_back(std::move(ex));
  }
  return out;
}

// BEGIN followed by distinct tokens: no repeats, so induction never fires.
// Labels are the next token, and the final label is a fresh token as well.
inline std::vector<InductionExample> gen_distinct_sequences(std::size_t count, std::size_t length, std::size_t vocab,
                                                            std::uint64_t seed) {
  if (length < 2 || vocab < length + 1) throw ArgumentError("vocab too small for distinct sequences");
  std::mt19937_64 rng(seed);
  std::vector<InductionExample> out;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<std::size_t> pool;
    for (std::size_t t = 1; t < vocab; ++t) pool.push_back(t);
    std::shuffle(pool.begin(), pool.end(), rng);
    InductionExample ex;
    ex.tokens.push_back(kBeginToken);
    ex.tokens.insert(ex.tokens.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(length - 1));
    ex.labels.assign(ex.tokens.begin() + 1, ex.tokens.end());
    ex.labels.push_back(pool[length - 1]);
    ex.i = length - 1;
    ex.j = 0;
    ex.a = ex.tokens.back();
    ex.b = ex.labels.back();
    out.push_back(std::move(ex));
  }
  return out;
}

// Metadata violations of one example (empty when consistent).
inline std::vector<std::string> check_induction_example(const InductionExample& ex) {
  std::vector<std::string> bad;
  const std::size_t n = ex.tokens.size();
  if (n < 4 || ex.i != n - 1) bad.push_back("i is not the last position");
  if (ex.tokens.at(0) != kBeginToken) bad.push_back("missing BEGIN");
  if (ex.tokens[ex.i] != ex.a) bad.push_back("token at i is not A");
  if (ex.j == 0 || ex.j >= ex.i || ex.tokens[ex.j] != ex.b) bad.push_back("token at j is not B");
  if (ex.j >= 1 && ex.tokens[ex.j - 1] != ex.a) bad.push_back("token before j is not A");
  std::size_t count_a = 0;
  for (std::size_t p = 0; p < n; ++p) count_a += ex.tokens[p] == ex.a;
  if (count_a != 2) bad.push_back("A does not occur exactly twice");
  std::map<std::size_t, std::size_t> seen;
  for (std::size_t p = 1; p < n; ++p) ++seen[ex.tokens[p]];
  for (const auto& [t, c] : seen) {
    const bool marker = t == ex.a || (ex.a1 && t == *ex.a1);
    if (c > 1 && !marker) bad.push_back("token " + std::to_string(t) + " repeats");
  }
  if (ex.labels.size() != n || ex.labels.back() != ex.b) bad.push_back("labels do not end in B");
  for (std::size_t p = 0; p + 1 < n && p < ex.labels.size(); ++p)
    if (ex.labels[p] != ex.tokens[p + 1]) bad.push_back("label " + std::to_string(p) + " is not the next token");
  return bad;
}

// Token counts over a set of streams, indexed by id.
inline std::vector<std::size_t> token_counts(const std::vector<std::vector<std::size_t>>& streams, std::size_t vocab) {
  std::vector<std::size_t> c(vocab, 0);
  for (const auto& s : streams)
    for (std::size_t t : s) {
      if (t >= vocab) throw ArgumentError("token " + std::to_string(t) + " outside vocab");
      ++c[t];
    }
  return c;
}

// Most frequent ids, count descending then id ascending.
inline std::vector<std::size_t> top_tokens(const std::vector<std::size_t>& counts, std::size_t k) {
  std::vector<std::size_t> ids(counts.size());
  for (std::size_t t = 0; t < ids.size(); ++t) ids[t] = t;
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t x, std::size_t y) { return counts[x] > counts[y]; });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

inline constexpr std::size_t kDefaultTopK = 200;

// True where the token already occurred earlier in the stream and is not one
// of the `top_k` most frequent tokens of the reference counts.
inline std::vector<char> filter_repeats_subset(const std::vector<std::size_t>& stream,
                                               const std::vector<std::size_t>& counts,
                                               std::size_t top_k = kDefaultTopK) {
  std::vector<char> common(counts.size(), 0);
  for (std::size_t t : top_tokens(counts, top_k)) common[t] = 1;
  std::vector<char> seen(counts.size(), 0);
  std::vector<char> mask(stream.size(), 0);
  for (std::size_t p = 0; p < stream.size(); ++p) {
    const std::size_t t = stream[p];
    if (t >= counts.size()) throw ArgumentError("token " + std::to_string(t) + " outside the frequency table");
    mask[p] = seen[t] && !common[t];
    seen[t] = 1;
  }
  return mask;
}

// Number prompts "The organization estimates that N-" in a tokenizer-free
// vocabulary: BEGIN=0, The=1, organization=2, estimates=3, that=4, "-"=5,
// and N -> 6+N.
struct NumberPrompt {
  std::size_t n = 0;
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> labels;
};

inline constexpr std::size_t kNumberBase = 6;

inline std::size_t number_vocab(std::size_t range_end = 100) { return kNumberBase + range_end + 1; }

inline std::vector<NumberPrompt> gen_number_prompts(std::size_t range_end = 100) {
  std::vector<NumberPrompt> out;
  for (std::size_t n = 0; n <= range_end; ++n) {
    NumberPrompt p;
    p.n = n;
    p.tokens = {kBeginToken, 1, 2, 3, 4, kNumberBase + n, 5};
    p.labels.assign(p.tokens.begin() + 1, p.tokens.end());
    p.labels.push_back(kBeginToken);  // nothing follows "-"; padding label
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string decode_number_prompt(const std::vector<std::size_t>& tokens) {
  static const char* words[] = {"[BEGIN]", "The", "organization", "estimates", "that", "-"};
  std::string out;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const std::size_t t = tokens[k];
    std::string w = t < kNumberBase ? words[t] : std::to_string(t - kNumberBase);
    if (k > 0 && t != 5) out += " ";
    out += w;
  }
  return out;
}

inline std::vector<std::size_t> encode_number_prompt(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  static const std::map<std::string, std::size_t> ids = {{"[BEGIN]", 0}, {"The", 1}, {"organization", 2},
                                                         {"estimates", 3}, {"that", 4}};
  for (std::string w; in >> w;) {
    bool dash = !w.empty() && w.back() == '-';
    if (dash) w.pop_back();
    if (auto it = ids.find(w); it != ids.end()) {
      out.push_back(it->second);
    } else if (!w.empty()) {
      std::size_t v = 0;
      for (char c : w) {
        if (!std::isdigit(static_cast<unsigned char>(c))) throw ArgumentError("unknown word '" + w + "'");
        v = v * 10 + static_cast<std::size_t>(c - '0');
      }
      out.push_back(kNumberBase + v);
    }
    if (dash) out.push_back(5);
  }
  return out;
}

// Dataset file: one example per line, space-separated token ids, a tab, then
// "i j A B" (and A1 for the bigram variant).
inline std::string induction_to_text(const std::vector<InductionExample>& xs) {
  std::ostringstream out;
  for (const auto& ex : xs) {
    for (std::size_t k = 0; k < ex.tokens.size(); ++k) out << (k ? " " : "") << ex.tokens[k];
    out << '\t' << ex.i << ' ' << ex.j << ' ' << ex.a << ' ' << ex.b;
    if (ex.a1) out << ' ' << *ex.a1;
    out << '\n';
  }
  return out.str();
}

inline std::vector<InductionExample> induction_from_text(const std::string& text) {
  std::vector<InductionExample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("dataset line " + std::to_string(lineno) + ": missing tab");
    InductionExample ex;
    std::istringstream toks(line.substr(0, tab)), meta(line.substr(tab + 1));
    for (long long t; toks >> t;) {
      if (t < 0) throw FormatError("dataset line " + std::to_string(lineno) + ": negative token");
      ex.tokens.push_back(static_cast<std::size_t>(t));
    }
    if (!toks.eof()) throw FormatError("dataset line " + std::to_string(lineno) + ": bad token");
    std::vector<long long> m;
    for (long long v; meta >> v;) m.push_back(v);
    if (!meta.eof() || (m.size() != 4 && m.size() != 5) ||
        std::any_of(m.begin(), m.end(), [](long long v) { return v < 0; }))
      throw FormatError("dataset line " + std::to_string(lineno) + ": expected 'i j A B'");
    ex.i = static_cast<std::size_t>(m[0]);
    ex.j = static_cast<std::size_t>(m[1]);
    ex.a = static_cast<std::size_t>(m[2]);
    ex.b = static_cast<std::size_t>(m[3]);
    if (m.size() == 5) ex.a1 = static_cast<std::size_t>(m[4]);
    if (ex.tokens.size() < 2 || ex.i >= ex.tokens.size() || ex.j >= ex.tokens.size())
      throw FormatError("dataset line " + std::to_string(lineno) + ": positions outside the sequence");
    ex.labels.assign(ex.tokens.begin() + 1, ex.tokens.end());
    ex.labels.push_back(ex.b);
    out.push_back(std::move(ex));
  }
  return out;
}

// Frequency sidecar: "id count" per line.
inline std::string counts_to_text(const std::vector<std::size_t>& counts) {
  std::ostringstream out;
  for (std::size_t t = 0; t < counts.size(); ++t) out << t << ' ' << counts[t] << '\n';
  return out.str();
}

inline std::vector<std::size_t> counts_from_text(const std::string& text) {
  std::vector<std::size_t> counts;
  std::istringstream in(text);
  long long id = 0, c = 0;
  while (in >> id >> c) {
    if (id < 0 || c < 0) throw FormatError("negative entry in frequency table");
    if (counts.size() <= static_cast<std::size_t>(id)) counts.resize(static_cast<std::size_t>(id) + 1, 0);
    counts[static_cast<std::size_t>(id)] = static_cast<std::size_t>(c);
  }
  if (!in.eof()) throw FormatError("malformed frequency table");
  return counts;
}

inline Tensor ids_tensor(const std::vector<std::size_t>& ids) {
  std::vector<double> v(ids.begin(), ids.end());
  return Tensor::vector(std::move(v));
}

// Reference-set entry for a token graph. Pattern variables: i, j, n (length).
inline Example induction_example(const InductionExample& ex) {
  Example e;
  e.binding.set("tok", ids_tensor(ex.tokens));
  e.binding.set("labels", ids_tensor(ex.labels));
  e.vars = {{"i", static_cast<long>(ex.i)}, {"j", static_cast<long>(ex.j)}, {"n", static_cast<long>(ex.tokens.size())}};
  return e;
}

inline Example number_example(const NumberPrompt& p) {
  Example e;
  e.binding.set("tok", ids_tensor(p.tokens));
  e.binding.set("labels", ids_tensor(p.labels));
  e.vars = {{"N", static_cast<long>(p.n)}, {"n", static_cast<long>(p.tokens.size())}};
  return e;
}

// Swaps token ids for their embedding rows (leaf `embed`), for samplers that
// perturb real values.
inline Example embedded(const Example& e, const Tensor& w_e) {
  Example out = e;
  Binding b;
  for (const auto& [name, t] : e.binding.values()) {
    if (name == "tok") {
      b.set("embed", embed_lookup(t, w_e));
    } else {
      b.set(name, t, e.binding.tag(name));
    }
  }
  out.binding = b;
  return out;
}

}  // namespace pathpatch
