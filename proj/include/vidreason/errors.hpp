#pragma once

#include <stdexcept>
#include <string>

namespace vidreason {

enum class ErrorKind {
  kDimension,
  kConfiguration,
  kMaskedRow,
  kEmptyContext,
  kEvaluation,
  kEncoding,
  kFormat,
  kGeneration,
  kNumerical,
};

/// Base of every error thrown by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& w) : Error(ErrorKind::kDimension, w) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfiguration, w) {}
};

class MaskedRowError : public Error {
 public:
  explicit MaskedRowError(const std::string& w) : Error(ErrorKind::kMaskedRow, w) {}
};

class EmptyContextError : public Error {
 public:
  explicit EmptyContextError(const std::string& w) : Error(ErrorKind::kEmptyContext, w) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& w) : Error(ErrorKind::kEvaluation, w) {}
};

class EncodingError : public Error {
 public:
  explicit EncodingError(const std::string& w) : Error(ErrorKind::kEncoding, w) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& w) : Error(ErrorKind::kFormat, w) {}
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& w) : Error(ErrorKind::kGeneration, w) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& w) : Error(ErrorKind::kNumerical, w) {}
};

}  // namespace vidreason
