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
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/rewrites.hpp"
#include "pathpatch/tensor.hpp"

namespace pathpatch {

enum class Positional { kShortformer, kNone };
enum class Norm { kOn, kIdentity };
enum class Unembedding { kSeparate, kTied };
enum class InputMode { kTokens, kEmbeddings };

struct TransformerConfig {
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t d_model = 64;
  std::size_t d_head = 8;
  std::size_t vocab = 32;
  std::size_t context = 16;
  Positional positional = Positional::kShortformer;
  Norm layer_norm = Norm::kOn;
  Unembedding unembedding = Unembedding::kSeparate;

  void validate() const {
    if (context < 2) throw ArgumentError("context must be at least 2");
    if (vocab < 2) throw ArgumentError("vocab must be at least 2");
    if (heads == 0 || d_head == 0 || d_model == 0) throw ArgumentError("empty transformer dimension");
  }
};

// Parameters by name: W_E [V,d], W_pos [ctx,d], W_U [d,V] (absent when
// tied), aL.W_Q/W_K/W_V [d,H*dh], aL.W_O [H*dh,d], lnL.w / lnL.b [d] for
// L = 0..layers (the last is the final norm).
struct WeightBundle {
  TransformerConfig config;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ArgumentError("weight bundle has no '" + name + "'");
    return it->second;
  }
};

inline std::string layer_name(std::size_t l) { return "a" + std::to_string(l); }
inline std::string head_name(std::size_t l, std::size_t h) { return layer_name(l) + ".h" + std::to_string(h); }
inline std::string head_label(std::size_t l, std::size_t h) { return std::to_string(l) + "." + std::to_string(h); }

// Expected shape of every parameter the config needs.
inline std::map<std::string, Shape> weight_shapes(const TransformerConfig& c) {
  std::map<std::string, Shape> out;
  const std::size_t hd = c.heads * c.d_head;
  out["W_E"] = {c.vocab, c.d_model};
  if (c.positional == Positional::kShortformer) out["W_pos"] = {c.context, c.d_model};
  if (c.unembedding == Unembedding::kSeparate) out["W_U"] = {c.d_model, c.vocab};
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string a = layer_name(l);
    out[a + ".W_Q"] = {c.d_model, hd};
    out[a + ".W_K"] = {c.d_model, hd};
    out[a + ".W_V"] = {c.d_model, hd};
    out[a + ".W_O"] = {hd, c.d_model};
  }
  if (c.layer_norm == Norm::kOn) {
    for (std::size_t l = 0; l <= c.layers; ++l) {
      out["ln" + std::to_string(l) + ".w"] = {c.d_model};
      out["ln" + std::to_string(l) + ".b"] = {c.d_model};
    }
  }
  return out;
}

inline void check_weights(const WeightBundle& w) {
  w.config.validate();
  for (const auto& [name, shape] : weight_shapes(w.config)) {
    auto it = w.tensors.find(name);
    if (it == w.tensors.end()) throw ShapeError("missing weight for port '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("weight for port '" + name + "' has shape " + shape_string(it->second.shape()) +
                       ", expected " + shape_string(shape));
    }
  }
}

template <typename Rng>
WeightBundle random_weights(const TransformerConfig& c, Rng& rng, double scale_factor = 0.5) {
  WeightBundle w;
  w.config = c;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [name, shape] : weight_shapes(c)) {
    std::vector<double> data(shape_size(shape));
    const bool gain = name.size() > 2 && name.substr(name.size() - 2) == ".w";
    for (double& v : data) v = gain ? 1.0 + 0.1 * normal(rng) : scale_factor * normal(rng);
    w.tensors.emplace(name, Tensor(shape, std::move(data)));
  }
  return w;
}

struct BuildOptions {
  std::size_t length = 0;  // sequence length; 0 means the full context
  InputMode input = InputMode::kTokens;
  bool split_heads = true;
  bool slice_tokens = false;  // per-position `tok[p]` leaves
};

// Attention-only transformer:
//   tok -> embed -> [lnL -> aL (+ pos into q/k) -> residL+1]* -> lnF -> unembed -> loss
// Heads are split into `aL.hH.*` subgraphs unless disabled. In embeddings mode
// the data leaf is `embed` itself.
inline Graph build_transformer_graph(const WeightBundle& w, const BuildOptions& opt = {}) {
  check_weights(w);
  const TransformerConfig& c = w.config;
  const std::size_t n = opt.length == 0 ? c.context : opt.length;
  if (n > c.context) throw ShapeError("sequence length " + std::to_string(n) + " exceeds context " + std::to_string(c.context));
  std::vector<NodeSpec> s;
  if (opt.input == InputMode::kTokens) {
    s.push_back(input_spec("tok", {n}, c.vocab));
    s.push_back(constant_spec("W_E", w.at("W_E")));
    s.push_back(op_spec("embed", OpKind::kEmbedLookup, {"tok", "W_E"}));
  } else {
    s.push_back(input_spec("embed", {n, c.d_model}));
  }
  s.push_back(labels_spec("labels", {n}, c.vocab));
  const bool shortformer = c.positional == Positional::kShortformer;
  if (shortformer) s.push_back(constant_spec("pos", slice(w.at("W_pos"), 0, 0, n)));

  auto norm = [&](std::size_t l, const std::string& in) {
    const std::string name = "ln" + std::to_string(l);
    if (c.layer_norm == Norm::kIdentity) {
      s.push_back(op_spec(name, OpKind::kAlias, {in}));
    } else {
      s.push_back(constant_spec(name + ".w", w.at(name + ".w")));
      s.push_back(constant_spec(name + ".b", w.at(name + ".b")));
      s.push_back(op_spec(name, OpKind::kLayerNorm, {in, name + ".w", name + ".b"}));
    }
    return name;
  };

  std::string resid = "embed";
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string a = layer_name(l);
    const std::string ln = norm(l, resid);
    std::string qk_in = ln;
    if (shortformer) {
      qk_in = a + ".qk_in";
      s.push_back(op_spec(qk_in, OpKind::kAdd, {ln, "pos"}));
    }
    for (const char* p : {".W_Q", ".W_K", ".W_V", ".W_O"}) s.push_back(constant_spec(a + p, w.at(a + p)));
    NodeSpec attn = op_spec(a, OpKind::kAttention, {qk_in, qk_in, ln, a + ".W_Q", a + ".W_K", a + ".W_V", a + ".W_O"});
    attn.heads = c.heads;
    attn.head_dim = c.d_head;
    s.push_back(attn);
    const std::string next = "resid" + std::to_string(l + 1);
    s.push_back(op_spec(next, OpKind::kAdd, {resid, a}));
    resid = next;
  }
  const std::string lnf = norm(c.layers, resid);
  if (c.unembedding == Unembedding::kSeparate) {
    s.push_back(constant_spec("W_U", w.at("W_U")));
  } else {
    s.push_back(constant_spec("W_U", transpose(w.at("W_E"))));
  }
  s.push_back(op_spec("unembed", OpKind::kMatmul, {lnf, "W_U"}));
  s.push_back(op_spec("loss", OpKind::kCrossEntropy, {"unembed", "labels"}));
  Graph g = build(std::move(s), "loss");
  if (opt.split_heads)
    for (std::size_t l = 0; l < c.layers; ++l) g = split_attention_heads(g, layer_name(l));
  if (opt.slice_tokens && opt.input == InputMode::kTokens) g = slice_positions(g, "tok");
  return g;
}

// Per-head attention patterns keyed "L.H", each [n, n].
inline std::map<std::string, Tensor> attention_patterns(const Graph& g, const Binding& b) {
  Graph split = g;
  for (const Node& n : g.nodes())
    if (n.live && n.kind() == OpKind::kAttention) split = split_attention_heads(split, n.name());
  std::map<std::string, Tensor> out;
  std::vector<std::pair<std::string, NodeId>> wanted;
  for (const Node& n : split.nodes()) {
    const std::string& name = n.name();
    if (n.kind() != OpKind::kCausalSoftmax || name.size() < 5 || name.substr(name.size() - 5) != ".attn") continue;
    // aL.hH.attn
    const auto dot = name.find(".h");
    if (name[0] != 'a' || dot == std::string::npos) continue;
    const std::string label = name.substr(1, dot - 1) + "." + name.substr(dot + 2, name.size() - 5 - dot - 2);
    wanted.emplace_back(label, &n - split.nodes().data());
  }
  // Evaluate once with every pattern node pinned as needed.
  for (const auto& [label, id] : wanted) out.emplace(label, evaluate(reroot(split, split.node(id).name()), b));
  return out;
}

struct InductionParams {
  double beta_prev = 30.0;   // previous-token head sharpness
  double beta_match = 50.0;  // induction match score
  double beta_sink = 25.0;   // fallback attention to the BEGIN position
  double gamma = 10.0;       // logit written for the copied token
  std::size_t heads = 8;
  std::size_t layers = 2;
  std::size_t induction_head = 5;
};

inline constexpr std::size_t kBeginToken = 0;

// Two-head induction circuit with exact residual subspaces:
//   [0,V) token, [V,2V) previous token, [2V,3V) output, [3V,3V+ctx) position.
// Head 0.0 attends from p to p-1 and writes the previous token; head 1.5
// matches its current token against the previous-token subspace, copies the
// attended token into the output subspace, and otherwise parks on position 0
// (the BEGIN token, whose value is zero). Every other head is zero and layer
// norm is the identity.
inline WeightBundle construct_induction_model(std::size_t vocab, std::size_t context, const InductionParams& p = {}) {
  if (vocab < 4 || context < 2) throw CapacityError("induction model needs vocab >= 4 and context >= 2");
  if (vocab > 128 || context > 128) throw CapacityError("induction model is limited to 128 tokens and positions");
  if (!(p.beta_prev > 0 && p.beta_match > 0 && p.beta_sink > 0 && p.gamma > 0))
    throw ArgumentError("induction model parameters must be positive");
  if (p.layers < 2 || p.induction_head >= p.heads) throw CapacityError("induction model needs two layers and the head index in range");
  const std::size_t V = vocab, C = context;
  TransformerConfig c;
  c.layers = p.layers;
  c.heads = p.heads;
  c.vocab = V;
  c.context = C;
  c.d_model = 3 * V + C;
  c.d_head = std::max(C, V + 1);
  c.positional = Positional::kShortformer;
  c.layer_norm = Norm::kIdentity;
  c.unembedding = Unembedding::kSeparate;
  const std::size_t d = c.d_model, dh = c.d_head, hd = c.heads * dh;
  const std::size_t tok0 = 0, prev0 = V, out0 = 2 * V, pos0 = 3 * V;
  const double root = std::sqrt(static_cast<double>(dh));

  auto mat = [](std::size_t r, std::size_t cols) { return std::vector<double>(r * cols, 0.0); };
  WeightBundle w;
  w.config = c;
  {
    auto e = mat(V, d);
    for (std::size_t t = 0; t < V; ++t) e[t * d + tok0 + t] = 1.0;
    w.tensors["W_E"] = Tensor({V, d}, std::move(e));
    auto pos = mat(C, d);
    for (std::size_t q = 0; q < C; ++q) pos[q * d + pos0 + q] = 1.0;
    w.tensors["W_pos"] = Tensor({C, d}, std::move(pos));
    auto u = mat(d, V);
    for (std::size_t t = 0; t < V; ++t) u[(out0 + t) * V + t] = p.gamma;
    w.tensors["W_U"] = Tensor({d, V}, std::move(u));
  }
  for (std::size_t l = 0; l < c.layers; ++l) {
    auto wq = mat(d, hd), wk = mat(d, hd), wv = mat(d, hd), wo = mat(hd, d);
    if (l == 0) {
      const std::size_t base = 0;  // head 0
      for (std::size_t q = 0; q < C; ++q) wq[(pos0 + q) * hd + base + q] = p.beta_prev * root;
      for (std::size_t q = 0; q + 1 < C; ++q) wk[(pos0 + q) * hd + base + q + 1] = 1.0;
      for (std::size_t t = 0; t < V; ++t) {
        wv[(tok0 + t) * hd + base + t] = 1.0;
        wo[(base + t) * d + prev0 + t] = 1.0;
      }
    } else if (l == 1) {
      const std::size_t base = p.induction_head * dh;
      for (std::size_t t = 1; t < V; ++t) {
        wq[(tok0 + t) * hd + base + t] = p.beta_match * root;
        wk[(prev0 + t) * hd + base + t] = 1.0;
        wv[(tok0 + t) * hd + base + t] = 1.0;
        wo[(base + t) * d + out0 + t] = 1.0;
      }
      for (std::size_t q = 0; q < C; ++q) wq[(pos0 + q) * hd + base + V] = root;
      wk[(pos0 + 0) * hd + base + V] = p.beta_sink;
    }
    const std::string a = layer_name(l);
    w.tensors[a + ".W_Q"] = Tensor({d, hd}, std::move(wq));
    w.tensors[a + ".W_K"] = Tensor({d, hd}, std::move(wk));
    w.tensors[a + ".W_V"] = Tensor({d, hd}, std::move(wv));
    w.tensors[a + ".W_O"] = Tensor({hd, d}, std::move(wo));
  }
  check_weights(w);
  return w;
}

}  // namespace pathpatch
