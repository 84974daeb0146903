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

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "pathpatch/error.hpp"
#include "pathpatch/graph.hpp"
#include "pathpatch/weights_io.hpp"

// Graph text format, version 1 (grammar in docs/formats.md):
//
//   pathpatch-graph 1
//   output Y
//   node x input shape=2
//   node W0 constant value=2x2:0.5,1,-1,2
//   node f0 matmul inputs=x,W0
//
// One node per line, `#` starts a comment. Doubles are printed with 17
// significant digits so a save/load round trip is exact.

namespace pathpatch {

inline constexpr int kGraphFormatVersion = 1;

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string shape_field(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline void check_name(const std::string& n) {
  if (n.empty()) throw FormatError("empty node name");
  for (char c : n)
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == '=' || c == '#')
      throw FormatError("node name '" + n + "' cannot be written to the text format");
}

}  // namespace detail

inline std::string graph_to_text(const Graph& g) {
  std::ostringstream out;
  out << "pathpatch-graph " << kGraphFormatVersion << "\n";
  out << "output " << g.output_node().name() << "\n";
  for (const Node& n : g.nodes()) {
    const NodeSpec& s = n.spec;
    detail::check_name(s.name);
    out << "node " << s.name << " " << op_name(s.kind);
    if (!s.inputs.empty()) {
      out << " inputs=";
      for (std::size_t i = 0; i < s.inputs.size(); ++i) out << (i ? "," : "") << s.inputs[i];
    }
    switch (s.kind) {
      case OpKind::kInput:
        out << " shape=" << detail::shape_field(s.shape);
        if (s.role == LeafRole::kLabels) out << " role=labels";
        if (s.vocab) out << " vocab=" << s.vocab;
        if (!s.origin.empty()) out << " origin=" << s.origin;
        if (s.origin_index) out << " index=" << *s.origin_index;
        break;
      case OpKind::kConstant: {
        out << " value=" << detail::shape_field(s.value.shape()) << ":";
        const auto d = s.value.data();
        for (std::size_t i = 0; i < d.size(); ++i) out << (i ? "," : "") << detail::format_double(d[i]);
        break;
      }
      case OpKind::kScalarMul:
      case OpKind::kLayerNorm:
        out << " scalar=" << detail::format_double(s.scalar);
        break;
      case OpKind::kSoftmax:
        out << " axis=" << s.axis;
        break;
      case OpKind::kConcat:
        out << " axis=" << s.axis;
        break;
      case OpKind::kSlice:
        out << " axis=" << s.axis << " start=" << s.start << " stop=" << s.stop;
        break;
      case OpKind::kAttention:
        out << " heads=" << s.heads << " head_dim=" << s.head_dim;
        break;
      default:
        break;
    }
    if (!s.copy_of.empty()) out << " copy_of=" << s.copy_of;
    out << "\n";
  }
  return out.str();
}

inline Graph graph_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::string output;
  std::vector<NodeSpec> specs;
  auto fail = [&](const std::string& m) -> void { throw FormatError("line " + std::to_string(lineno) + ": " + m); };
  auto to_size = [&](const std::string& v) {
    std::size_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) fail("bad integer '" + v + "'");
    return x;
  };
  auto to_double = [&](const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) fail("bad number '" + v + "'");
    return x;
  };
  auto to_shape = [&](const std::string& v) {
    Shape s;
    if (v == "scalar") return s;
    for (const std::string& d : detail::split(v, 'x')) s.push_back(to_size(d));
    return s;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> w;
    for (std::string t; ls >> t;) w.push_back(t);
    if (w.empty()) continue;
    if (!header) {
      if (w.size() != 2 || w[0] != "pathpatch-graph") fail("expected 'pathpatch-graph <version>'");
      if (w[1] != std::to_string(kGraphFormatVersion)) fail("unsupported graph format version " + w[1]);
      header = true;
      continue;
    }
    if (w[0] == "output") {
      if (w.size() != 2) fail("expected 'output <name>'");
      output = w[1];
      continue;
    }
    if (w[0] != "node" || w.size() < 3) fail("expected 'node <name> <kind> ...'");
    NodeSpec s;
    s.name = w[1];
    const auto kind = op_from_name(w[2]);
    if (!kind) fail("unknown node kind '" + w[2] + "'");
    s = *kind == OpKind::kLayerNorm ? op_spec(s.name, *kind, {}) : s;
    s.kind = *kind;
    bool has_value = false;
    for (std::size_t i = 3; i < w.size(); ++i) {
      const auto eq = w[i].find('=');
      if (eq == std::string::npos) fail("expected key=value, got '" + w[i] + "'");
      const std::string key = w[i].substr(0, eq), val = w[i].substr(eq + 1);
      if (key == "inputs") {
        s.inputs = detail::split(val, ',');
      } else if (key == "shape") {
        s.shape = to_shape(val);
      } else if (key == "role") {
        if (val != "labels" && val != "data") fail("role must be data or labels");
        s.role = val == "labels" ? LeafRole::kLabels : LeafRole::kData;
      } else if (key == "vocab") {
        s.vocab = to_size(val);
      } else if (key == "origin") {
        s.origin = val;
      } else if (key == "index") {
        s.origin_index = to_size(val);
      } else if (key == "copy_of") {
        s.copy_of = val;
      } else if (key == "scalar") {
        s.scalar = to_double(val);
      } else if (key == "axis") {
        s.axis = to_size(val);
      } else if (key == "start") {
        s.start = to_size(val);
      } else if (key == "stop") {
        s.stop = to_size(val);
      } else if (key == "heads") {
        s.heads = to_size(val);
      } else if (key == "head_dim") {
        s.head_dim = to_size(val);
      } else if (key == "value") {
        const auto colon = val.find(':');
        if (colon == std::string::npos) fail("value needs '<shape>:<numbers>'");
        const Shape shape = to_shape(val.substr(0, colon));
        std::vector<double> data;
        for (const std::string& x : detail::split(val.substr(colon + 1), ',')) data.push_back(to_double(x));
        try {
          s.value = Tensor(shape, std::move(data));
        } catch (const Error& e) {
          fail(e.what());
        }
        has_value = true;
      } else {
        fail("unknown key '" + key + "'");
      }
    }
    if (s.kind == OpKind::kConstant && !has_value) fail("constant '" + s.name + "' has no value");
    specs.push_back(std::move(s));
  }
  if (!header) throw FormatError("missing 'pathpatch-graph' header");
  if (output.empty()) throw FormatError("missing 'output' line");
  return build(std::move(specs), output);
}

inline Graph load_graph(const std::filesystem::path& path) { return graph_from_text(read_file(path)); }

inline void save_graph(const Graph& g, const std::filesystem::path& path) { write_file(path, graph_to_text(g)); }

}  // namespace pathpatch
