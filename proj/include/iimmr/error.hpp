#pragma once

#include <stdexcept>
#include <string>

namespace iimmr {

// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input file could not be parsed (bad JSON, wrong shape, out-of-range value).
class ParseError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// The model endpoint could not be reached after bounded retries, or answered
// with a non-retryable status.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what, bool retryable = true)
      : Error(what), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

// The mock backend has no scripted response for a request.
class UnscriptedRequest : public Error {
 public:
  explicit UnscriptedRequest(std::string digest)
      : Error("unscripted request: no transcript rule matches digest " + digest),
        digest_(std::move(digest)) {}

  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

// A pipeline stage failed; carries the stage name for the run manifest.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace iimmr
