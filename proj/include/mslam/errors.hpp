#pragma once

#include <stdexcept>
#include <string>

namespace mslam {

enum class ErrorCode {
  NonPositiveDepth,
  SingularInput,
  DegenerateLine,
  UnknownTemplate,
  InfeasibleTrajectory,
  MissingReference,
  EmptyList,
  DegenerateSystem,
  TrackingLost,
  EmptyReconstruction,
  LengthMismatch,
  TimestampMismatch,
  ConfigError,
  IoError,
};

const char* to_string(ErrorCode code);

// Every failure surfaced by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mslam
