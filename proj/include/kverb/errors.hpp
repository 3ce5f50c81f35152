#pragma once

#include <stdexcept>
#include <string>

namespace kverb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized input. The message names the offending record.
class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or otherwise could not proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A knowledge-base request failed after all retries.
class RetrievalError : public Error {
 public:
  RetrievalError(std::string query, int status, const std::string& what)
      : Error(what), query_(std::move(query)), status_(status) {}

  const std::string& query() const noexcept { return query_; }
  /// HTTP status of the last attempt, or 0 when no response was received.
  int status() const noexcept { return status_; }

 private:
  std::string query_;
  int status_;
};

}  // namespace kverb
