#include "mslam/errors.hpp"

namespace mslam {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::SingularInput: return "SingularInput";
    case ErrorCode::DegenerateLine: return "DegenerateLine";
    case ErrorCode::UnknownTemplate: return "UnknownTemplate";
    case ErrorCode::InfeasibleTrajectory: return "InfeasibleTrajectory";
    case ErrorCode::MissingReference: return "MissingReference";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::DegenerateSystem: return "DegenerateSystem";
    case ErrorCode::TrackingLost: return "TrackingLost";
    case ErrorCode::EmptyReconstruction: return "EmptyReconstruction";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TimestampMismatch: return "TimestampMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace mslam
