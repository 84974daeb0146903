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
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pathpatch/error.hpp"

namespace pathpatch {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor of 64-bit floats. Storage is shared and never
// mutated after construction, so copies are cheap and safe across threads.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    if (shape_size(shape_) != data.size()) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(data.size()));
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw ArgumentError("tensor data must be finite");
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor full(Shape shape, double v) {
    std::vector<double> d(shape_size(shape), v);
    return Tensor(std::move(shape), std::move(d));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(d));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> d;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(d));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_->size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::span<const double> data() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_.back() + c]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  // Bitwise equality of shape and data.
  bool identical(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    if (data_ == other.data_) return true;
    return std::equal(data_->begin(), data_->end(), other.data_->begin(),
                      [](double a, double b) { return std::bit_cast<std::uint64_t>(a) ==
                                                      std::bit_cast<std::uint64_t>(b); });
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cannot compare " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace detail {

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* op, F f) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " of " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

inline void check_axis(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw ArgumentError("axis " + std::to_string(axis) + " out of range for shape " +
                        shape_string(t.shape()));
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, "add", [](double x, double y) { return x + y; });
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, "subtract", [](double x, double y) { return x - y; });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return Tensor(a.shape(), std::move(out));
}

// Left-to-right sum of same-shaped tensors.
inline Tensor sum(std::span<const Tensor> terms) {
  if (terms.empty()) throw ArgumentError("sum of zero tensors");
  std::vector<double> out(terms[0].data().begin(), terms[0].data().end());
  for (std::size_t t = 1; t < terms.size(); ++t) {
    if (terms[t].shape() != terms[0].shape()) {
      throw ShapeError("sum of " + shape_string(terms[0].shape()) + " and " +
                       shape_string(terms[t].shape()));
    }
    auto d = terms[t].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  return Tensor(terms[0].shape(), std::move(out));
}

// [m x k] . [k x n] -> [m x n], or [k] . [k x n] -> [n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || (a.rank() != 1 && a.rank() != 2) || a.shape().back() != b.dim(0)) {
    throw ShapeError("matmul of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Shape s = a.rank() == 2 ? Shape{m, n} : Shape{n};
  return Tensor(std::move(s), std::move(out));
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose needs a matrix, got " + shape_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return Tensor({c, r}, std::move(out));
}

inline Tensor softmax(const Tensor& v, std::size_t axis) {
  detail::check_axis(v, axis);
  const Shape& s = v.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<double> out(v.size());
  auto d = v.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = d[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, d[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(d[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  return Tensor(s, std::move(out));
}

// Row-wise softmax of a [rows x cols] score matrix where row r may only attend
// to columns c <= r. Masked entries are exactly zero.
inline Tensor causal_softmax(const Tensor& scores) {
  if (scores.rank() != 2) {
    throw ShapeError("causal softmax needs a matrix, got " + shape_string(scores.shape()));
  }
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<double> out(rows * cols, 0.0);
  auto d = scores.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = std::min(cols, r + 1);
    const double* row = d.data() + r * cols;
    double mx = row[0];
    for (std::size_t c = 1; c < visible; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < visible; ++c) {
      out[r * cols + c] = std::exp(row[c] - mx);
      total += out[r * cols + c];
    }
    for (std::size_t c = 0; c < visible; ++c) out[r * cols + c] /= total;
  }
  return Tensor(scores.shape(), std::move(out));
}

inline constexpr double kDefaultLayerNormEpsilon = 1e-5;

// Normalizes over the last axis, then applies gain and bias (both shaped like
// the last axis).
inline Tensor layer_norm(const Tensor& v, const Tensor& gain, const Tensor& bias,
                         double epsilon = kDefaultLayerNormEpsilon) {
  if (v.rank() == 0) throw ShapeError("layer norm of a scalar");
  const std::size_t d = v.shape().back();
  if (gain.size() != d || bias.size() != d || gain.rank() != 1 || bias.rank() != 1) {
    throw ShapeError("layer norm gain/bias must be [" + std::to_string(d) + "], got " +
                     shape_string(gain.shape()) + " and " + shape_string(bias.shape()));
  }
  if (!(epsilon >= 0.0)) throw ArgumentError("layer norm epsilon must be nonnegative");
  const std::size_t rows = v.size() / d;
  std::vector<double> out(v.size());
  auto x = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = (row[i] - mean) * inv * gain[i] + bias[i];
  }
  return Tensor(v.shape(), std::move(out));
}

// Converts a tensor of token ids to indices, rejecting non-integers and ids
// outside [0, limit).
inline std::vector<std::size_t> token_ids(const Tensor& ids, std::size_t limit) {
  std::vector<std::size_t> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double v = ids[i];
    if (v < 0.0 || v != std::floor(v) || v >= static_cast<double>(limit)) {
      throw ArgumentError("token id " + std::to_string(v) + " outside [0, " +
                          std::to_string(limit) + ")");
    }
    out[i] = static_cast<std::size_t>(v);
  }
  return out;
}

inline Tensor cross_entropy_per_token(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross entropy needs [pos x vocab] logits matching " +
                     std::to_string(labels.size()) + " labels, got " + shape_string(logits.shape()));
  }
  const std::size_t vocab = logits.dim(1);
  std::vector<double> out(labels.size());
  auto d = logits.data();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] >= vocab) {
      throw ArgumentError("label " + std::to_string(labels[p]) + " out of range for vocab " +
                          std::to_string(vocab));
    }
    const double* row = d.data() + p * vocab;
    double mx = row[0];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
    double total = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) total += std::exp(row[v] - mx);
    out[p] = std::max(0.0, mx + std::log(total) - row[labels[p]]);
  }
  return Tensor::vector(std::move(out));
}

inline Tensor cross_entropy_per_token(const Tensor& logits, const Tensor& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross entropy needs [pos x vocab] logits, got " + shape_string(logits.shape()));
  }
  auto ids = token_ids(labels, logits.dim(1));
  return cross_entropy_per_token(logits, ids);
}

inline constexpr double kProbabilityFloor = 1e-12;

// KL(p || q) in nats over flattened distributions. q is clamped below at
// `floor`; terms with p == 0 contribute nothing.
inline double kl_divergence(const Tensor& p, const Tensor& q, double floor = kProbabilityFloor) {
  if (p.shape() != q.shape()) {
    throw ShapeError("KL of " + shape_string(p.shape()) + " and " + shape_string(q.shape()));
  }
  auto check = [](const Tensor& t, const char* which) {
    double total = 0.0;
    for (double v : t.data()) {
      if (v < 0.0) throw ArgumentError(std::string(which) + " has a negative probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ArgumentError(std::string(which) + " sums to " + std::to_string(total) + ", not 1");
    }
  };
  check(p, "p");
  check(q, "q");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], floor)));
  }
  return kl;
}

inline Tensor one_hot(std::span<const std::size_t> ids, std::size_t vocab) {
  std::vector<double> out(ids.size() * vocab, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) throw ArgumentError("one-hot id out of range");
    out[i * vocab + ids[i]] = 1.0;
  }
  return Tensor({ids.size(), vocab}, std::move(out));
}

// Rows of `table` selected by integer ids: [n] x [V x d] -> [n x d].
inline Tensor embed_lookup(const Tensor& ids, const Tensor& table) {
  if (table.rank() != 2 || ids.rank() != 1) {
    throw ShapeError("embed lookup needs [n] ids and a [V x d] table, got " +
                     shape_string(ids.shape()) + " and " + shape_string(table.shape()));
  }
  auto idx = token_ids(ids, table.dim(0));
  const std::size_t d = table.dim(1);
  std::vector<double> out(idx.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  return Tensor({idx.size(), d}, std::move(out));
}

inline Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t stop) {
  detail::check_axis(t, axis);
  if (start >= stop || stop > t.dim(axis)) {
    throw ArgumentError("slice [" + std::to_string(start) + ", " + std::to_string(stop) +
                        ") invalid for axis of length " + std::to_string(t.dim(axis)));
  }
  const Shape& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = stop - start;
  std::vector<double> out;
  out.reserve(outer * len * inner);
  auto d = t.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const auto* base = d.data() + (o * s[axis] + start) * inner;
    out.insert(out.end(), base, base + len * inner);
  }
  Shape ns = s;
  ns[axis] = len;
  return Tensor(std::move(ns), std::move(out));
}

inline Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat of zero tensors");
  detail::check_axis(parts[0], axis);
  Shape ns = parts[0].shape();
  ns[axis] = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw ShapeError("concat rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw ShapeError("concat of " + shape_string(parts[0].shape()) + " and " +
                       shape_string(p.shape()) + " along axis " + std::to_string(axis));
    }
    ns[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ns[i];
  for (std::size_t i = axis + 1; i < ns.size(); ++i) inner *= ns[i];
  std::vector<double> out;
  out.reserve(shape_size(ns));
  for (std::size_t o = 0; o < outer; ++o) {
    for (const Tensor& p : parts) {
      const std::size_t chunk = p.dim(axis) * inner;
      const auto* base = p.data().data() + o * chunk;
      out.insert(out.end(), base, base + chunk);
    }
  }
  return Tensor(std::move(ns), std::move(out));
}

inline double mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

}  // namespace pathpatch
