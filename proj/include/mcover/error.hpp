#ifndef MCOVER_ERROR_HPP
#define MCOVER_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mcover {

// Failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kInvalidInput,  // malformed arguments handed to a pure function
  kConfig,        // inconsistent or infeasible configuration
  kFormat,        // corrupt / truncated / foreign file
  kShape,         // tensor or matrix dimension mismatch
  kEmptyMelody,   // F0 matrix without any salience
  kMining,        // batch cannot produce a triplet
  kData,          // missing or unusable data on disk
  kNumeric,       // NaN / Inf surfaced during computation
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kEmptyMelody: return "empty-melody";
    case ErrorKind::kMining: return "mining";
    case ErrorKind::kData: return "data";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace mcover

#endif  // MCOVER_ERROR_HPP
