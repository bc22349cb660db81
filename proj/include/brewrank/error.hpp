#pragma once

#include <stdexcept>
#include <string>

namespace brewrank {

enum class ErrorKind {
  Parse,              // malformed input line or document
  DuplicateId,
  DanglingReference,
  UnknownId,
  InvalidArgument,
  UnknownAction,
  IrreducibleOverflow,
  Transport,          // retryable network failure
  BackendRefusal,     // non-retryable backend error
  MalformedResponse,
  CacheMiss,
  Provenance,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace brewrank
