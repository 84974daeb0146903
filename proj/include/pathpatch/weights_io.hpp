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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathpatch/error.hpp"
#include "pathpatch/models.hpp"

// Weight container, little-endian throughout:
//   "PPWB"  u32 version  u64 config-length  config (JSON text)
//   u32 entry-count, then per entry: u32 name-length, name, u32 rank, rank x u64 dims
//   payload: every entry's values as f64, in table order
// See docs/formats.md.

namespace pathpatch {

inline constexpr char kWeightsMagic[4] = {'P', 'P', 'W', 'B'};
inline constexpr std::uint32_t kWeightsVersion = 1;

inline nlohmann::json config_to_json(const TransformerConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"d_model", c.d_model},
          {"d_head", c.d_head},
          {"vocab", c.vocab},
          {"context", c.context},
          {"positional", c.positional == Positional::kShortformer ? "shortformer" : "none"},
          {"layer_norm", c.layer_norm == Norm::kOn ? "on" : "identity"},
          {"unembedding", c.unembedding == Unembedding::kSeparate ? "separate" : "tied"}};
}

inline TransformerConfig config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.d_model = j.value("d_model", c.d_model);
    c.d_head = j.value("d_head", c.d_head);
    c.vocab = j.value("vocab", c.vocab);
    c.context = j.value("context", c.context);
    const std::string pos = j.value("positional", std::string("shortformer"));
    const std::string ln = j.value("layer_norm", std::string("on"));
    const std::string un = j.value("unembedding", std::string("separate"));
    if (pos != "shortformer" && pos != "none") throw ConfigError("positional must be shortformer or none");
    if (ln != "on" && ln != "identity") throw ConfigError("layer_norm must be on or identity");
    if (un != "separate" && un != "tied") throw ConfigError("unembedding must be separate or tied");
    c.positional = pos == "shortformer" ? Positional::kShortformer : Positional::kNone;
    c.layer_norm = ln == "on" ? Norm::kOn : Norm::kIdentity;
    c.unembedding = un == "separate" ? Unembedding::kSeparate : Unembedding::kTied;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("transformer config: ") + e.what());
  }
  return c;
}

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}
  template <typename T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(b_[at_ + i])) << (8 * i);
    at_ += sizeof(T);
    return static_cast<T>(u);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(at_, n);
    at_ += n;
    return s;
  }
  bool done() const { return at_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - at_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - at_ < n) throw FormatError("weight file is truncated");
  }
  const std::string& b_;
  std::size_t at_ = 0;
};

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// FNV-1a over the tensor table and payload as written to disk (the config
// text is excluded so writers may format it freely).
inline std::uint64_t bundle_hash(const WeightBundle& w) {
  std::string bytes;
  for (const auto& [name, t] : w.tensors) {
    detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(name.size()));
    bytes += name;
    detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(bytes, d);
  }
  for (const auto& [name, t] : w.tensors)
    for (double v : t.data()) detail::put_le<std::uint64_t>(bytes, std::bit_cast<std::uint64_t>(v));
  return detail::fnv1a(0xcbf29ce484222325ULL, bytes.data(), bytes.size());
}

inline std::string serialize_weights(const WeightBundle& w) {
  std::string out(kWeightsMagic, 4);
  detail::put_le<std::uint32_t>(out, kWeightsVersion);
  const std::string config = config_to_json(w.config).dump();
  detail::put_le<std::uint64_t>(out, config.size());
  out += config;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.tensors.size()));
  for (const auto& [name, t] : w.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
  }
  for (const auto& [name, t] : w.tensors)
    for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline WeightBundle deserialize_weights(const std::string& bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) throw FormatError("bad weight file magic");
  r.bytes(4);
  const auto version = r.le<std::uint32_t>();
  if (version != kWeightsVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
  const auto config_len = r.le<std::uint64_t>();
  if (config_len > bytes.size()) throw FormatError("weight file is truncated");
  const std::string config = r.bytes(static_cast<std::size_t>(config_len));
  WeightBundle w;
  try {
    w.config = config_from_json(nlohmann::json::parse(config));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weight file config: ") + e.what());
  }
  const auto count = r.le<std::uint32_t>();
  std::vector<std::pair<std::string, Shape>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint32_t>();
    std::string name = r.bytes(len);
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw FormatError("entry '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint64_t>();
      if (d == 0 || d > (1ULL << 32)) throw FormatError("entry '" + name + "' has a bad dimension");
      shape.push_back(static_cast<std::size_t>(d));
    }
    table.emplace_back(std::move(name), std::move(shape));
  }
  std::size_t values = 0;
  for (const auto& [name, shape] : table) values += shape_size(shape);
  if (values > r.remaining() / 8) throw FormatError("weight file is truncated");
  for (auto& [name, shape] : table) {
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    try {
      if (!w.tensors.emplace(name, Tensor(shape, std::move(data))).second)
        throw FormatError("duplicate entry '" + name + "'");
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError("entry '" + name + "': " + e.what());
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after weight payload");
  return w;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFoundError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileNotFoundError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void save_weights(const WeightBundle& w, const std::filesystem::path& path) {
  write_file(path, serialize_weights(w));
}

inline WeightBundle load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file(path)); }

}  // namespace pathpatch
