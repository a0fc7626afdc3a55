#pragma once

#include <stdexcept>
#include <string>

namespace hsrgan {

// Failure categories surfaced to the command line as distinct exit codes.
enum class ErrorKind {
  runtime,
  range,
  config,
  shape,
  io,
  schema,
  missing_artifact,
  hash_mismatch,
  exists,
  locked,
  non_finite,
  convergence,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class RangeError : public Error {
 public:
  explicit RangeError(const std::string& m) : Error(ErrorKind::range, m) {}
};
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};
class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& m) : Error(ErrorKind::schema, m) {}
};
class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::string& m) : Error(ErrorKind::missing_artifact, m) {}
};
class HashMismatchError : public Error {
 public:
  explicit HashMismatchError(const std::string& m) : Error(ErrorKind::hash_mismatch, m) {}
};
class ExistsError : public Error {
 public:
  explicit ExistsError(const std::string& m) : Error(ErrorKind::exists, m) {}
};
class LockedError : public Error {
 public:
  explicit LockedError(const std::string& m) : Error(ErrorKind::locked, m) {}
};
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& m) : Error(ErrorKind::non_finite, m) {}
};
class ConvergenceError : public Error {
 public:
  explicit ConvergenceError(const std::string& m) : Error(ErrorKind::convergence, m) {}
};

}  // namespace hsrgan
