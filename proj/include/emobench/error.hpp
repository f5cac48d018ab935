#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace emobench {

enum class ErrorCode {
  kZeroMass,
  kNegativeComponent,
  kNonFinite,
  kDimensionMismatch,
  kCategoryMismatch,
  kInvalidCategories,
  kEmptyAnnotations,
  kTooFewExamples,
  kNoNumberFound,
  kMissingTranscript,
  kTransportError,
  kAudioReadError,
  kNoFiniteScores,
  kEmptyCandidateSet,
  kAllCandidatesUnparseable,
  kDegenerateVariance,
  kMissingCandidates,
  kConfigError,
  kIoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kZeroMass: return "ZeroMass";
    case ErrorCode::kNegativeComponent: return "NegativeComponent";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kCategoryMismatch: return "CategoryMismatch";
    case ErrorCode::kInvalidCategories: return "InvalidCategories";
    case ErrorCode::kEmptyAnnotations: return "EmptyAnnotations";
    case ErrorCode::kTooFewExamples: return "TooFewExamples";
    case ErrorCode::kNoNumberFound: return "NoNumberFound";
    case ErrorCode::kMissingTranscript: return "MissingTranscript";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kAudioReadError: return "AudioReadError";
    case ErrorCode::kNoFiniteScores: return "NoFiniteScores";
    case ErrorCode::kEmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorCode::kAllCandidatesUnparseable: return "AllCandidatesUnparseable";
    case ErrorCode::kDegenerateVariance: return "DegenerateVariance";
    case ErrorCode::kMissingCandidates: return "MissingCandidates";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace emobench
