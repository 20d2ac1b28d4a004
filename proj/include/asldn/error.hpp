#pragma once

#include <stdexcept>
#include <string>

namespace asldn {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  NonScalarLoss,
  MissingGradient,
  NumericalFailure,
  CorruptFile,
  Io,
  DuplicateName,
  Config,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::NonScalarLoss: return "non-scalar loss";
    case ErrorCode::MissingGradient: return "missing gradient";
    case ErrorCode::NumericalFailure: return "numerical failure";
    case ErrorCode::CorruptFile: return "corrupt file";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::DuplicateName: return "duplicate name";
    case ErrorCode::Config: return "config error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace asldn
