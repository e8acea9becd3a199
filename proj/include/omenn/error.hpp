#pragma once

#include <stdexcept>
#include <string>

namespace omenn {

enum class ErrorCode {
  Shape,
  Parameter,
  Resource,
  Capability,
  Integrity,
  Io,
  Parse,
  MissingBlob,
  ShapeChain,
  UnknownKind,
  Version,
  Checksum,
  UndefinedCorrelation,
  OutOfRange,
};

const char* to_string(ErrorCode code) noexcept;

/// Base of every error raised by the library. The code is stable and is what
/// the CLI maps onto process exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace omenn
