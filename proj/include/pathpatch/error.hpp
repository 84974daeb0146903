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

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pathpatch {

// Every failure raised by the library carries one of these kinds. The CLI maps
// each kind onto a distinct process exit code.
enum class ErrorKind {
  kArgument,
  kShape,
  kStructural,
  kBinding,
  kCapacity,
  kSyntax,
  kVerification,
  kFormat,
  kUndefinedMetric,
  kConfig,
  kFileNotFound,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kArgument: return "argument error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kStructural: return "structural error";
    case ErrorKind::kBinding: return "binding error";
    case ErrorKind::kCapacity: return "capacity error";
    case ErrorKind::kSyntax: return "syntax error";
    case ErrorKind::kVerification: return "rewrite-verification error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kUndefinedMetric: return "undefined-metric error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kFileNotFound: return "file not found";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& m) : Error(ErrorKind::kArgument, m) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error(ErrorKind::kShape, m) {}
};

class StructuralError : public Error {
 public:
  explicit StructuralError(const std::string& m) : Error(ErrorKind::kStructural, m) {}
};

class BindingError : public Error {
 public:
  explicit BindingError(const std::string& m) : Error(ErrorKind::kBinding, m) {}
};

class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& m) : Error(ErrorKind::kCapacity, m) {}
};

// Raised by the pattern and config parsers; `position` is a 0-based character
// offset into the offending text.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& m, std::size_t position)
      : Error(ErrorKind::kSyntax, m + " at position " + std::to_string(position)),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class VerificationError : public Error {
 public:
  explicit VerificationError(const std::string& m) : Error(ErrorKind::kVerification, m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error(ErrorKind::kFormat, m) {}
};

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& m) : Error(ErrorKind::kUndefinedMetric, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorKind::kConfig, m) {}
};

class FileNotFoundError : public Error {
 public:
  explicit FileNotFoundError(const std::string& m) : Error(ErrorKind::kFileNotFound, m) {}
};

}  // namespace pathpatch
