#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gatedcot {

// Root of every error the engine raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures that may succeed when the same request is retried later
// (network errors, timeouts, 5xx responses).
class TransientError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// confidence
class MarginUnavailable : public Error {
 public:
  using Error::Error;
};
class EmptyStep : public Error {
 public:
  using Error::Error;
};

// objectpool / providers
class ManifestParseError : public Error {
 public:
  using Error::Error;
};
class GeometryError : public Error {
 public:
  using Error::Error;
};
class ProviderUnavailable : public TransientError {
 public:
  using TransientError::TransientError;
};
class ProviderRejected : public Error {
 public:
  using Error::Error;
};

// relevance
class NonFiniteScore : public Error {
 public:
  using Error::Error;
};
class EmptyPool : public Error {
 public:
  using Error::Error;
};
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// backend / transport
class EndpointUnavailable : public TransientError {
 public:
  using TransientError::TransientError;
};
class LogprobsUnsupported : public Error {
 public:
  using Error::Error;
};
class ContextTooLong : public Error {
 public:
  using Error::Error;
};
class ProtocolError : public Error {
 public:
  using Error::Error;
};
class CassetteMismatch : public Error {
 public:
  using Error::Error;
};

// metrics
class DivisionByZeroBaseline : public Error {
 public:
  using Error::Error;
};
class EmptyInput : public Error {
 public:
  using Error::Error;
};
class NoInsertions : public Error {
 public:
  using Error::Error;
};
class LengthMismatch : public Error {
 public:
  using Error::Error;
};

// harness
class DatasetParseError : public Error {
 public:
  DatasetParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
class DuplicateId : public Error {
 public:
  using Error::Error;
};

// mocks
class ScriptExhausted : public Error {
 public:
  using Error::Error;
};
class ScriptMiss : public Error {
 public:
  using Error::Error;
};

// tracestore
class IoError : public Error {
 public:
  using Error::Error;
};
class HashMismatch : public Error {
 public:
  using Error::Error;
};
class UnknownSchemaVersion : public Error {
 public:
  using Error::Error;
};

}  // namespace gatedcot
