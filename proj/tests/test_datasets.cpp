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

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "pathpatch/datasets.hpp"
#include "pathpatch/intervene.hpp"
#include "pathpatch/models.hpp"

namespace pathpatch {
namespace {

TEST(InductionData, MetadataHoldsOnEveryExample) {
  const auto xs = gen_induction_sequences(10000, 12, 24, 1);
  ASSERT_EQ(xs.size(), 10000u);
  std::map<std::size_t, std::size_t> j_hist;
  for (const auto& ex : xs) {
    const auto bad = check_induction_example(ex);
    ASSERT_TRUE(bad.empty()) << bad.front();
    EXPECT_NE(ex.a, ex.b);
    EXPECT_GE(ex.a, 12u);  // markers from the upper half
    EXPECT_GE(ex.b, 12u);
    ++j_hist[ex.j];
  }
  // B lands everywhere from position 2 to n-2.
  EXPECT_EQ(j_hist.begin()->first, 2u);
  EXPECT_EQ(j_hist.rbegin()->first, 10u);
}

TEST(InductionData, ZipfFillersFavourSmallIds) {
  const auto xs = gen_induction_sequences(2000, 12, 64, 2);
  std::vector<std::vector<std::size_t>> streams;
  for (const auto& ex : xs) streams.push_back(ex.tokens);
  const auto c = token_counts(streams, 64);
  EXPECT_EQ(c[0], 2000u);
  EXPECT_GT(c[1], c[20]);
  EXPECT_GT(c[2], c[40]);
}

TEST(InductionData, Bigram) {
  InductionOptions opt;
  opt.ngram = 2;
  for (const auto& ex : gen_induction_sequences(2000, 12, 24, 3, opt)) {
    ASSERT_TRUE(ex.a1.has_value());
    EXPECT_TRUE(check_induction_example(ex).empty());
    EXPECT_EQ(ex.tokens[ex.j - 2], *ex.a1);
    EXPECT_EQ(ex.tokens[ex.j - 1], ex.a);
    EXPECT_EQ(ex.tokens[ex.i - 1], *ex.a1);
    EXPECT_EQ(ex.tokens[ex.i], ex.a);
    EXPECT_EQ(ex.labels.back(), ex.b);
  }
  opt.ngram = 3;
  EXPECT_THROW(gen_induction_sequences(1, 12, 24, 3, opt), ArgumentError);
}

TEST(InductionData, DeterministicPerSeed) {
  const auto a = gen_induction_sequences(50, 10, 30, 9), b = gen_induction_sequences(50, 10, 30, 9);
  const auto c = gen_induction_sequences(50, 10, 30, 10);
  EXPECT_EQ(induction_to_text(a), induction_to_text(b));
  EXPECT_NE(induction_to_text(a), induction_to_text(c));
}

TEST(InductionData, VocabTooSmall) {
  EXPECT_THROW(gen_induction_sequences(1, 12, 10, 1), ArgumentError);
  EXPECT_THROW(gen_induction_sequences(1, 3, 24, 1), ArgumentError);
  EXPECT_THROW(gen_distinct_sequences(1, 12, 12, 1), ArgumentError);
}

TEST(DistinctData, NoTokenRepeats) {
  for (const auto& ex : gen_distinct_sequences(500, 12, 24, 4)) {
    std::set<std::size_t> seen(ex.tokens.begin(), ex.tokens.end());
    seen.insert(ex.labels.back());
    EXPECT_EQ(seen.size(), 13u);
    EXPECT_EQ(ex.tokens[0], kBeginToken);
  }
}

TEST(Filter, HandOracle) {
  // counts: token 1 most common, then 2; top_k = 1 hides only token 1.
  const std::vector<std::size_t> counts{0, 50, 20, 5, 1};
  const std::vector<std::size_t> stream{0, 1, 2, 1, 3, 2, 3, 4};
  const auto m = filter_repeats_subset(stream, counts, 1);
  EXPECT_EQ(m, (std::vector<char>{0, 0, 0, 0, 0, 1, 1, 0}));
  EXPECT_EQ(filter_repeats_subset(stream, counts, 0), (std::vector<char>{0, 0, 0, 1, 0, 1, 1, 0}));
  EXPECT_EQ(filter_repeats_subset(stream, counts, 5), std::vector<char>(8, 0));
  EXPECT_THROW(filter_repeats_subset({9}, counts), ArgumentError);
  EXPECT_EQ(top_tokens(counts, 3), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Filter, KeepsTheInductionTargetOnMostExamples) {
  const auto xs = gen_induction_sequences(5000, 12, 64, 5);
  std::vector<std::vector<std::size_t>> streams;
  for (const auto& ex : xs) {
    auto s = ex.tokens;
    s.push_back(ex.b);
    streams.push_back(s);
  }
  const auto counts = token_counts(streams, 64);
  std::size_t kept = 0;
  for (const auto& s : streams) {
    const auto m = filter_repeats_subset(s, counts, 8);
    kept += m.back();
    // Only the second A and the final B are repeats.
    for (std::size_t p = 0; p + 2 < s.size(); ++p) EXPECT_EQ(m[p], 0);
  }
  EXPECT_GE(static_cast<double>(kept) / 5000.0, 0.99);
}

TEST(NumberPrompts, Layout) {
  const auto ps = gen_number_prompts();
  ASSERT_EQ(ps.size(), 101u);
  EXPECT_EQ(number_vocab(), 107u);
  EXPECT_EQ(decode_number_prompt(ps[17].tokens), "[BEGIN] The organization estimates that 17-");
  for (const auto& p : ps) {
    EXPECT_EQ(encode_number_prompt(decode_number_prompt(p.tokens)), p.tokens);
    EXPECT_EQ(p.labels.size(), p.tokens.size());
    EXPECT_EQ(p.labels.back(), kBeginToken);
  }
  EXPECT_THROW(encode_number_prompt("The cat"), ArgumentError);
}

TEST(NumberPrompts, ResamplingNeverPairsEqualNumbers) {
  std::vector<Example> refs;
  for (const auto& p : gen_number_prompts()) refs.push_back(number_example(p));
  TransformerConfig c;
  c.vocab = number_vocab();
  c.context = 7;
  c.d_model = 4;
  c.d_head = 2;
  c.heads = 2;
  std::mt19937_64 rng(1);
  const auto g = std::make_shared<const Graph>(build_transformer_graph(random_weights(c, rng)));
  const Sampler s(g, std::make_shared<const std::vector<Example>>(refs), CounterfactualStrategy::resample());
  for (const auto& p : s.draw_many(3, 2000)) {
    EXPECT_NE(p.x_r.at("tok")[5], p.x_c.at("tok")[5]);
    EXPECT_EQ(p.vars.at("N") + 6, static_cast<long>(p.x_r.at("tok")[5]));
  }
}

TEST(Files, InductionRoundTrip) {
  InductionOptions opt;
  opt.ngram = 2;
  for (const auto& xs : {gen_induction_sequences(20, 12, 24, 6), gen_induction_sequences(20, 12, 24, 7, opt)}) {
    const auto back = induction_from_text(induction_to_text(xs));
    ASSERT_EQ(back.size(), xs.size());
    for (std::size_t n = 0; n < xs.size(); ++n) {
      EXPECT_EQ(back[n].tokens, xs[n].tokens);
      EXPECT_EQ(back[n].labels, xs[n].labels);
      EXPECT_EQ(back[n].a1, xs[n].a1);
      EXPECT_EQ(std::tie(back[n].i, back[n].j, back[n].a, back[n].b), std::tie(xs[n].i, xs[n].j, xs[n].a, xs[n].b));
    }
  }
}

TEST(Files, MalformedLinesNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      induction_from_text(text);
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("0 1 2 1\t3 2 1 2\n0 1 2\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("0 x 2\t1 1 1 1\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("0 1 2\t9 1 1 1\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("0 1 2\t2 1 1\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("0 -1 2\t2 1 1 1\n").find("line 1"), std::string::npos);
}

TEST(Files, Counts) {
  const std::vector<std::size_t> c{4, 0, 7, 1};
  EXPECT_EQ(counts_from_text(counts_to_text(c)), c);
  EXPECT_EQ(counts_from_text("3 5\n0 1\n"), (std::vector<std::size_t>{1, 0, 0, 5}));
  EXPECT_THROW(counts_from_text("1 2\nx\n"), FormatError);
  EXPECT_THROW(counts_from_text("1 -2\n"), FormatError);
}

TEST(Examples, EmbeddedSwapsTokensForRows) {
  const auto ex = induction_example(gen_induction_sequences(1, 6, 8, 8).front());
  const Tensor table({8, 2}, {0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7});
  const Example e = embedded(ex, table);
  EXPECT_EQ(e.binding.find("tok"), nullptr);
  const Tensor& m = e.binding.at("embed");
  for (std::size_t p = 0; p < 6; ++p) EXPECT_EQ(m.at(p, 1), ex.binding.at("tok")[p]);
  EXPECT_EQ(e.vars, ex.vars);
}

}  // namespace
}  // namespace pathpatch
