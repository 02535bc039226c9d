#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skelnoise {

enum class ErrorKind {
  InvalidArgument,
  Dimension,
  InsufficientFrames,
  Io,
  Format,
  ShapeMismatch,
  InvalidRatio,
  DegenerateClasses,
  Lookup,
  UndefinedPrecision,
  InvalidLabel,
  EmptyBatch,
  TrainingDiverged,
  InvalidConfiguration,
  Inconsistent,
  CorruptModel,
  DegenerateWeights,
  NothingToPlot,
  StageFailed,
  NotImplemented,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` lets callers and tests
/// distinguish failure classes without a deep hierarchy.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace skelnoise
