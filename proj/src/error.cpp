#include "skelnoise/error.hpp"

namespace skelnoise {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::InsufficientFrames: return "insufficient-frames";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::InvalidRatio: return "invalid-ratio";
    case ErrorKind::DegenerateClasses: return "degenerate-classes";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::UndefinedPrecision: return "undefined-precision";
    case ErrorKind::InvalidLabel: return "invalid-label";
    case ErrorKind::EmptyBatch: return "empty-batch";
    case ErrorKind::TrainingDiverged: return "training-diverged";
    case ErrorKind::InvalidConfiguration: return "invalid-configuration";
    case ErrorKind::Inconsistent: return "inconsistent";
    case ErrorKind::CorruptModel: return "corrupt-model";
    case ErrorKind::DegenerateWeights: return "degenerate-weights";
    case ErrorKind::NothingToPlot: return "nothing-to-plot";
    case ErrorKind::StageFailed: return "stage-failed";
    case ErrorKind::NotImplemented: return "not-implemented";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace skelnoise
