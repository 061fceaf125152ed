#pragma once

#include <stdexcept>
#include <string>

namespace hadnet {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  DuplicateNode,
  DuplicateEdge,
  BidirectionalEdge,
  UnknownNode,
  EmptyTrajectory,
  BatchTooSmall,
  NonScalarLoss,
  MapTargetsGlucose,
  MissingErrorNodes,
  GapInWindow,
  NonPositiveGlucose,
  LengthMismatch,
  EmptyDataset,
  NonFiniteLoss,
  UnstableIntegration,
  NonPositiveTruth,
  NoTestWindows,
  ContractViolation,
  Io,
  Parse,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hadnet
