#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dres {

enum class ErrorCode {
  UnknownInstance,
  LengthMismatch,
  ShapeMismatch,
  UnbalancedDelimiters,
  EmptyIdList,
  NonIntegerId,
  EmptyPhrase,
  FileUnreadable,
  MalformedRecord,
  EmptyDataset,
  DegenerateScene,
  IndexOutOfRange,
  NonFiniteActivation,
  NonFiniteGradient,
  DivergedLoss,
  MissingPrediction,
  PhraseCountMismatch,
  EmptyInput,
  ConfigInfeasible,
  FeatureFileMissing,
  PathUnwritable,
  BadCheckpoint,
};

const char* to_string(ErrorCode code) noexcept;

/// Single exception type for the toolkit; `code()` identifies the failure.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

/// Parse failures carry the byte offset into the raw input.
class ParseError : public Error {
public:
  ParseError(ErrorCode code, std::size_t offset, const std::string& message)
      : Error(code, message + " at byte " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

}  // namespace dres
