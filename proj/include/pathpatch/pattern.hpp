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
#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/paths.hpp"

// Path pattern language (see docs/pattern_language.md).
//
//   expr     := unary (('|' | '&' | '-') unary)*      left-associative
//   unary    := 'not' unary | '(' expr ')' | 'all' | 'none' | sequence
//   sequence := item (('→' | '->')? item)*
//   item     := element | '…' | '...'
//
// A sequence is matched against a whole path, leaf first. An element matches a
// run of one or more consecutive nodes whose names match its glob, either
// exactly or as a scope prefix (`a1.h5` matches `a1.h5.q`, `tok` matches
// `tok[3]`). A gap matches zero or more nodes. `$var` in an element is replaced
// by a per-example integer; `[lo..hi]` selects an inclusive index range.

namespace pathpatch {

namespace pattern_detail {

enum class Tok { kElement, kArrow, kGap, kLParen, kRParen, kOr, kAnd, kMinus, kNot, kAll, kNone, kEnd };

struct Token {
  Tok kind;
  std::string text;
  std::size_t pos;
};

inline bool element_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '*' || c == '?' ||
         c == '#' || c == '/' || c == '@' || c == '$' || c == ':' || c == '+';
}

inline std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto starts = [&](std::string_view lit) { return s.substr(i, lit.size()) == lit; };
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (starts("→")) {
      out.push_back({Tok::kArrow, "→", i});
      i += std::string_view("→").size();
    } else if (starts("…")) {
      out.push_back({Tok::kGap, "…", i});
      i += std::string_view("…").size();
    } else if (starts("...")) {
      out.push_back({Tok::kGap, "...", i});
      i += 3;
    } else if (starts("->")) {
      out.push_back({Tok::kArrow, "->", i});
      i += 2;
    } else if (c == '(') {
      out.push_back({Tok::kLParen, "(", i++});
    } else if (c == ')') {
      out.push_back({Tok::kRParen, ")", i++});
    } else if (c == '|') {
      out.push_back({Tok::kOr, "|", i++});
    } else if (c == '&') {
      out.push_back({Tok::kAnd, "&", i++});
    } else if (c == '-') {
      out.push_back({Tok::kMinus, "-", i++});
    } else if (element_char(c) || c == '[') {
      const std::size_t start = i;
      std::string text;
      while (i < s.size()) {
        if (s[i] == '[') {
          const std::size_t close = s.find(']', i);
          if (close == std::string_view::npos) throw SyntaxError("unterminated '['", i);
          text.append(s.substr(i, close - i + 1));
          i = close + 1;
        } else if (starts("...")) {
          break;
        } else if (element_char(s[i])) {
          text.push_back(s[i++]);
        } else {
          break;
        }
      }
      Tok kind = Tok::kElement;
      if (text == "not") kind = Tok::kNot;
      if (text == "all") kind = Tok::kAll;
      if (text == "none") kind = Tok::kNone;
      out.push_back({kind, text, start});
    } else {
      throw SyntaxError(std::string("unexpected character '") + c + "'", i);
    }
  }
  out.push_back({Tok::kEnd, "", s.size()});
  return out;
}

}  // namespace pattern_detail

// One sequence item: an element glob (unresolved) or a gap.
struct PatternItem {
  bool gap = false;
  std::string element;
  std::size_t pos = 0;
};

struct PatternExpr {
  enum class Op { kSequence, kAll, kNone, kNot, kUnion, kIntersect, kDifference };
  Op op = Op::kSequence;
  std::vector<PatternItem> items;  // kSequence
  std::vector<PatternExpr> args;   // operators
};

// Parses a pattern expression; throws SyntaxError with a character position.
inline PatternExpr parse_pattern(std::string_view text) {
  using namespace pattern_detail;
  const std::vector<Token> toks = tokenize(text);
  std::size_t at = 0;
  auto peek = [&]() -> const Token& { return toks[at]; };

  auto parse_sequence = [&]() {
    PatternExpr e;
    e.op = PatternExpr::Op::kSequence;
    bool after_arrow = false;
    while (true) {
      const Token& t = peek();
      if (t.kind == Tok::kElement) {
        if (!e.items.empty() && !e.items.back().gap && !after_arrow) {
          throw SyntaxError("expected '→' or '…' before '" + t.text + "'", t.pos);
        }
        e.items.push_back({false, t.text, t.pos});
        after_arrow = false;
        ++at;
      } else if (t.kind == Tok::kGap) {
        if (e.items.empty() || !e.items.back().gap) e.items.push_back({true, "", t.pos});
        after_arrow = false;
        ++at;
      } else if (t.kind == Tok::kArrow) {
        if (e.items.empty() || after_arrow) throw SyntaxError("misplaced '→'", t.pos);
        after_arrow = true;
        ++at;
      } else {
        break;
      }
    }
    if (after_arrow) throw SyntaxError("pattern ends with '→'", peek().pos);
    if (e.items.empty()) throw SyntaxError("expected a path pattern", peek().pos);
    return e;
  };

  auto parse_expr = [&](auto&& self) -> PatternExpr {
    auto unary = [&](auto&& un) -> PatternExpr {
      const Token& t = peek();
      switch (t.kind) {
        case Tok::kNot: {
          ++at;
          PatternExpr e;
          e.op = PatternExpr::Op::kNot;
          e.args.push_back(un(un));
          return e;
        }
        case Tok::kLParen: {
          ++at;
          PatternExpr e = self(self);
          if (peek().kind != Tok::kRParen) throw SyntaxError("expected ')'", peek().pos);
          ++at;
          return e;
        }
        case Tok::kAll: {
          ++at;
          PatternExpr e;
          e.op = PatternExpr::Op::kAll;
          return e;
        }
        case Tok::kNone: {
          ++at;
          PatternExpr e;
          e.op = PatternExpr::Op::kNone;
          return e;
        }
        case Tok::kElement:
        case Tok::kGap:
          return parse_sequence();
        default:
          throw SyntaxError(t.kind == Tok::kEnd ? "unexpected end of pattern"
                                                : "unexpected '" + t.text + "'",
                            t.pos);
      }
    };
    PatternExpr lhs = unary(unary);
    while (true) {
      const Tok k = peek().kind;
      PatternExpr::Op op;
      if (k == Tok::kOr) op = PatternExpr::Op::kUnion;
      else if (k == Tok::kAnd) op = PatternExpr::Op::kIntersect;
      else if (k == Tok::kMinus) op = PatternExpr::Op::kDifference;
      else break;
      ++at;
      PatternExpr e;
      e.op = op;
      e.args.push_back(std::move(lhs));
      e.args.push_back(unary(unary));
      lhs = std::move(e);
    }
    return lhs;
  };

  PatternExpr e = parse_expr(parse_expr);
  if (peek().kind != Tok::kEnd) throw SyntaxError("unexpected '" + peek().text + "'", peek().pos);
  return e;
}

using PatternVars = std::map<std::string, long>;

namespace pattern_detail {

inline long eval_index(const std::string& expr, const PatternVars& vars, std::size_t pos) {
  // term (('+'|'-') term)*, term := integer | $name
  long total = 0;
  int sign = 1;
  std::size_t i = 0;
  bool expect_term = true;
  while (i < expr.size()) {
    const char c = expr[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (!expect_term && (c == '+' || c == '-')) {
      sign = c == '+' ? 1 : -1;
      expect_term = true;
      ++i;
    } else if (expect_term && c == '$') {
      std::size_t j = i + 1;
      while (j < expr.size() && (std::isalnum(static_cast<unsigned char>(expr[j])) || expr[j] == '_')) ++j;
      const std::string name = expr.substr(i + 1, j - i - 1);
      auto it = vars.find(name);
      if (it == vars.end()) throw ArgumentError("pattern variable $" + name + " is not bound");
      total += sign * it->second;
      expect_term = false;
      i = j;
    } else if (expect_term && std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < expr.size() && std::isdigit(static_cast<unsigned char>(expr[j]))) ++j;
      total += sign * std::stol(expr.substr(i, j - i));
      expect_term = false;
      i = j;
    } else {
      throw SyntaxError("bad index expression '" + expr + "'", pos);
    }
  }
  if (expect_term) throw SyntaxError("incomplete index expression '" + expr + "'", pos);
  return total;
}

inline std::string regex_escape(char c) {
  static const std::string special = R"(\^$.|?*+()[]{}-)";
  return special.find(c) != std::string::npos ? std::string("\\") + c : std::string(1, c);
}

// Regex for an element after variable resolution, including the scope suffix.
inline std::string element_regex(const std::string& element, const PatternVars& vars, std::size_t pos) {
  std::string re = "(";
  for (std::size_t i = 0; i < element.size();) {
    const char c = element[i];
    if (c == '[') {
      const std::size_t close = element.find(']', i);
      std::string body = element.substr(i + 1, close - i - 1);
      i = close + 1;
      body.erase(std::remove_if(body.begin(), body.end(), [](char ch) { return std::isspace(static_cast<unsigned char>(ch)); }),
                 body.end());
      if (body == "*") {
        re += R"(\[[0-9]+\])";
        continue;
      }
      const std::size_t dots = body.find("..");
      long lo = eval_index(dots == std::string::npos ? body : body.substr(0, dots), vars, pos);
      long hi = dots == std::string::npos ? lo : eval_index(body.substr(dots + 2), vars, pos);
      lo = std::max(lo, 0L);
      std::string alt;
      for (long v = lo; v <= hi; ++v) alt += (alt.empty() ? "" : "|") + std::to_string(v);
      re += alt.empty() ? R"(\[(?!))" : R"(\[()" + alt + R"()\])";
    } else if (c == '$') {
      std::size_t j = i + 1;
      while (j < element.size() && (std::isalnum(static_cast<unsigned char>(element[j])) || element[j] == '_')) ++j;
      re += std::to_string(eval_index(element.substr(i, j - i), vars, pos));
      i = j;
    } else if (c == '*') {
      re += ".*";
      ++i;
    } else if (c == '?') {
      re += ".";
      ++i;
    } else {
      re += regex_escape(c);
      ++i;
    }
  }
  re += R"()([.\[].*)?)";
  return re;
}

}  // namespace pattern_detail

// A pattern expression resolved against one graph and one variable
// assignment: every element becomes a node mask and every sequence a small
// NFA run over the reversed path (output first).
class CompiledPattern {
 public:
  using StateSet = std::uint64_t;
  static constexpr std::size_t kMaxItems = 62;

  CompiledPattern(const Graph& g, const PatternExpr& expr, const PatternVars& vars = {}) : graph_(&g) {
    root_ = compile(expr, vars);
  }

  std::size_t sequence_count() const noexcept { return seqs_.size(); }

  // State sets per sequence before any node is consumed.
  std::vector<StateSet> initial() const {
    std::vector<StateSet> s(seqs_.size(), StateSet{1});
    return s;
  }

  // Advance sequence `k` by consuming `node` (walking from the output down).
  StateSet step(std::size_t k, StateSet set, NodeId node) const {
    const Seq& q = seqs_[k];
    StateSet out = 0;
    const std::size_t m = q.items.size();
    for (std::size_t state = 0; state <= m; ++state) {
      if (!(set >> state & 1)) continue;
      // state 0: nothing consumed; state s >= 1: item s-1 consumed the last node.
      if (state >= 1) {
        const Item& cur = q.items[state - 1];
        if (cur.gap || cur.mask[node]) out |= StateSet{1} << state;
      }
      for (std::size_t next = state; next < m; ++next) {
        const Item& it = q.items[next];
        if (it.gap) {
          out |= StateSet{1} << (next + 1);
          continue;
        }
        if (it.mask[node]) out |= StateSet{1} << (next + 1);
        break;
      }
    }
    return out;
  }

  bool accepts(std::size_t k, StateSet set) const { return (set & seqs_[k].accepting) != 0; }
  bool universal(std::size_t k, StateSet set) const { return (set & seqs_[k].universal) != 0; }

  // Membership of a completed path given each sequence's final state set.
  bool evaluate(const std::vector<StateSet>& sets) const {
    return eval(root_, [&](std::size_t k) { return accepts(k, sets[k]) ? 1 : 0; }) == 1;
  }

  // Three-valued verdict for a partial path: 1 every completion matches,
  // 0 none does, -1 undecided.
  int verdict(const std::vector<StateSet>& sets) const {
    return eval(root_, [&](std::size_t k) {
      if (sets[k] == 0) return 0;
      if (universal(k, sets[k])) return 1;
      return -1;
    });
  }

  bool matches(const Path& p) const {
    auto sets = initial();
    for (std::size_t i = p.nodes.size(); i-- > 0;)
      for (std::size_t k = 0; k < sets.size(); ++k) sets[k] = step(k, sets[k], p.nodes[i]);
    return evaluate(sets);
  }

 private:
  struct Item {
    bool gap = false;
    std::vector<char> mask;
  };
  struct Seq {
    std::vector<Item> items;  // reversed: output side first
    StateSet accepting = 0;
    StateSet universal = 0;
  };
  struct Node {
    PatternExpr::Op op;
    std::size_t seq = 0;
    std::vector<std::size_t> args;
  };

  std::size_t compile(const PatternExpr& e, const PatternVars& vars) {
    Node n{e.op, 0, {}};
    if (e.op == PatternExpr::Op::kSequence) {
      if (e.items.size() > kMaxItems) throw ArgumentError("pattern has too many items");
      Seq q;
      for (auto it = e.items.rbegin(); it != e.items.rend(); ++it) {
        Item item;
        item.gap = it->gap;
        if (!it->gap) {
          const std::regex re(pattern_detail::element_regex(it->element, vars, it->pos));
          item.mask.resize(graph_->size());
          for (NodeId id = 0; id < graph_->size(); ++id)
            item.mask[id] = std::regex_match(graph_->node(id).name(), re) ? 1 : 0;
        }
        q.items.push_back(std::move(item));
      }
      const std::size_t m = q.items.size();
      // Accepting: all remaining items are gaps. Universal: additionally some
      // gap (current or remaining) can absorb any further nodes.
      for (std::size_t state = 0; state <= m; ++state) {
        bool rest_gaps = true;
        for (std::size_t j = state; j < m; ++j) rest_gaps = rest_gaps && q.items[j].gap;
        if (!rest_gaps) continue;
        q.accepting |= StateSet{1} << state;
        const bool absorbing = (state >= 1 && q.items[state - 1].gap) || state < m;
        if (absorbing) q.universal |= StateSet{1} << state;
      }
      n.seq = seqs_.size();
      seqs_.push_back(std::move(q));
    } else {
      for (const PatternExpr& a : e.args) n.args.push_back(compile(a, vars));
    }
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  template <typename Leaf>
  int eval(std::size_t at, const Leaf& leaf) const {
    const Node& n = nodes_[at];
    auto arg = [&](std::size_t i) { return eval(n.args[i], leaf); };
    switch (n.op) {
      case PatternExpr::Op::kSequence: return leaf(n.seq);
      case PatternExpr::Op::kAll: return 1;
      case PatternExpr::Op::kNone: return 0;
      case PatternExpr::Op::kNot: {
        const int a = arg(0);
        return a < 0 ? -1 : 1 - a;
      }
      case PatternExpr::Op::kUnion: {
        const int a = arg(0), b = arg(1);
        if (a == 1 || b == 1) return 1;
        if (a == 0 && b == 0) return 0;
        return -1;
      }
      case PatternExpr::Op::kIntersect: {
        const int a = arg(0), b = arg(1);
        if (a == 0 || b == 0) return 0;
        if (a == 1 && b == 1) return 1;
        return -1;
      }
      case PatternExpr::Op::kDifference: {
        const int a = arg(0), b = arg(1);
        if (a == 0 || b == 1) return 0;
        if (a == 1 && b == 0) return 1;
        return -1;
      }
    }
    return -1;
  }

  const Graph* graph_;
  std::vector<Seq> seqs_;
  std::vector<Node> nodes_;
  std::size_t root_ = 0;
};

// Enumerated paths whose node-name sequences match the expression.
inline PathSet match_pattern(const Graph& g, const PatternExpr& expr, const PatternVars& vars = {},
                             std::uint64_t cap = kDefaultPathCap) {
  const CompiledPattern c(g, expr, vars);
  std::vector<Path> keep;
  for (const Path& p : enumerate_paths(g, cap))
    if (c.matches(p)) keep.push_back(p);
  return PathSet(g, std::move(keep));
}

inline PathSet match_pattern(const Graph& g, std::string_view text, const PatternVars& vars = {},
                             std::uint64_t cap = kDefaultPathCap) {
  return match_pattern(g, parse_pattern(text), vars, cap);
}

}  // namespace pathpatch
