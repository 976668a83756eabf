// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_ERROR_HPP
#define TUBELABEL_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace tubelabel {

enum class ErrorKind {
  MalformedFile,
  ShapeMismatch,
  SchemaError,
  MissingFile,
  InconsistentDims,
  EmptyLabel,
  EmptyEvaluation,
  BadSpan,
  InvalidConfig,
  IoError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::InconsistentDims: return "InconsistentDims";
    case ErrorKind::EmptyLabel: return "EmptyLabel";
    case ErrorKind::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorKind::BadSpan: return "BadSpan";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the ErrorKind tags so
/// callers (and the CLI) can report a stable diagnostic category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tubelabel

#endif  // TUBELABEL_ERROR_HPP
