#include "hadnet/errors.hpp"

namespace hadnet {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DuplicateNode: return "DuplicateNode";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::BidirectionalEdge: return "BidirectionalEdge";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::MapTargetsGlucose: return "MapTargetsGlucose";
    case ErrorCode::MissingErrorNodes: return "MissingErrorNodes";
    case ErrorCode::GapInWindow: return "GapInWindow";
    case ErrorCode::NonPositiveGlucose: return "NonPositiveGlucose";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnstableIntegration: return "UnstableIntegration";
    case ErrorCode::NonPositiveTruth: return "NonPositiveTruth";
    case ErrorCode::NoTestWindows: return "NoTestWindows";
    case ErrorCode::ContractViolation: return "ContractViolation";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

}  // namespace hadnet
