#include "dfinger/error.hpp"

namespace dfinger {

const char* ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidShape: return "invalid-shape";
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kEmptyFingerprint: return "empty-fingerprint";
    case ErrorKind::kSkipSample: return "skip-sample";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kData: return "data";
    case ErrorKind::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorKind::kVersionMismatch: return "version-mismatch";
    case ErrorKind::kUndefinedReference: return "undefined-reference";
    case ErrorKind::kInvalidLength: return "invalid-length";
    case ErrorKind::kHashMismatch: return "hash-mismatch";
    case ErrorKind::kConnectionFailed: return "connection-failed";
    case ErrorKind::kTimeout: return "timeout";
    case ErrorKind::kProtocol: return "protocol";
  }
  return "unknown";
}

}  // namespace dfinger
