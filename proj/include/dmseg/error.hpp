#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dmseg {

enum class ErrorCode {
  Parameter,
  Input,
  DegenerateGraph,
  Numerical,
  NoElbow,
  ScanTooCoarse,
  StageFailure,
  Parse,
  Config,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Parameter: return "PARAMETER";
    case ErrorCode::Input: return "INPUT";
    case ErrorCode::DegenerateGraph: return "DEGENERATE_GRAPH";
    case ErrorCode::Numerical: return "NUMERICAL";
    case ErrorCode::NoElbow: return "NO_ELBOW";
    case ErrorCode::ScanTooCoarse: return "SCAN_TOO_COARSE";
    case ErrorCode::StageFailure: return "STAGE_FAILURE";
    case ErrorCode::Parse: return "PARSE";
    case ErrorCode::Config: return "CONFIG";
    case ErrorCode::Io: return "IO";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace dmseg
