// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metaseq {

enum class ErrorKind {
  kDimension,
  kWindow,
  kLabel,
  kParameter,
  kContract,
  kState,
  kParse,
  kFormat,
  kIo,
  kRange,
  kInput,
  kAlignment,
  kCompatibility,
  kNumeric,
  kDegeneracy,
  kUsage,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kWindow: return "window error";
    case ErrorKind::kLabel: return "label error";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kState: return "state error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kAlignment: return "alignment error";
    case ErrorKind::kCompatibility: return "compatibility error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kDegeneracy: return "degeneracy error";
    case ErrorKind::kUsage: return "usage error";
  }
  return "error";
}

/// Single exception type for the toolkit; `kind()` tells callers (and the CLI
/// exit-code mapping) what went wrong.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <typename... Args>
[[noreturn]] void fail(ErrorKind kind, const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(kind, os.str());
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

}  // namespace metaseq
