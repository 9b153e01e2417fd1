#pragma once

#include <stdexcept>
#include <string>

namespace dfinger {

enum class ErrorKind {
  kInvalidShape,
  kInvalidConfig,
  kNumeric,
  kEmptyFingerprint,
  kSkipSample,
  kIo,
  kData,
  kCorruptCheckpoint,
  kVersionMismatch,
  kUndefinedReference,
  kInvalidLength,
  kHashMismatch,
  kConnectionFailed,
  kTimeout,
  kProtocol,
};

const char* ToString(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace dfinger
