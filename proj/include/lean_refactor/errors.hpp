#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace lean_refactor {

// Root of every error thrown by the library. Callers that only need a message
// catch this; the subclasses carry the structured payload.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A bank record or fixture file violated its schema. `field` names the
// offending key and `line` is the 1-based record number (0 when unknown).
class SchemaError : public Error {
 public:
  SchemaError(std::string field, std::size_t line, const std::string& detail)
      : Error(format(field, line, detail)), field_(std::move(field)), line_(line) {}

  const std::string& field() const noexcept { return field_; }
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& field, std::size_t line, const std::string& detail) {
    std::string msg = "schema error";
    if (line != 0) msg += " at record " + std::to_string(line);
    msg += " (field '" + field + "'): " + detail;
    return msg;
  }

  std::string field_;
  std::size_t line_;
};

class EmptyCluster : public Error {
 public:
  EmptyCluster() : Error("aggregation over an empty cluster") {}
};

class MalformedDeclaration : public Error {
 public:
  using Error::Error;
};

class DegenerateVector : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyIndex : public Error {
 public:
  EmptyIndex() : Error("retrieval index is empty") {}
};

class UnknownVersion : public Error {
 public:
  explicit UnknownVersion(const std::string& version)
      : Error("toolchain version not in registry: " + version), version_(version) {}
  const std::string& version() const noexcept { return version_; }

 private:
  std::string version_;
};

class InvalidTemperature : public Error {
 public:
  using Error::Error;
};

// Transport or remote failure talking to an embedding/chat service.
class RetryableProviderError : public Error {
 public:
  RetryableProviderError(const std::string& what, int attempts)
      : Error(what + " (after " + std::to_string(attempts) + " attempt(s))"), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

class ProviderContractViolation : public Error {
 public:
  using Error::Error;
};

class EnvironmentError : public Error {
 public:
  using Error::Error;
};

class ProfileParseError : public Error {
 public:
  ProfileParseError(const std::string& what, std::string raw)
      : Error(what), raw_output_(std::move(raw)) {}
  const std::string& raw_output() const noexcept { return raw_output_; }

 private:
  std::string raw_output_;
};

class HeartbeatParseError : public Error {
 public:
  using Error::Error;
};

class PreconditionFailed : public Error {
 public:
  using Error::Error;
};

class StepFailed : public Error {
 public:
  using Error::Error;
};

class StatementMutation : public Error {
 public:
  using Error::Error;
};

class NoValidProof : public Error {
 public:
  NoValidProof() : Error("no candidate proof compiled") {}
};

class RoutingError : public Error {
 public:
  using Error::Error;
};

class InvalidBaseline : public Error {
 public:
  using Error::Error;
};

// The judge could not be reached; the item goes to the quarantine queue.
class JudgeUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace lean_refactor
