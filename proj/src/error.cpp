#include "dres/error.hpp"

namespace dres {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownInstance: return "UnknownInstance";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnbalancedDelimiters: return "UnbalancedDelimiters";
    case ErrorCode::EmptyIdList: return "EmptyIdList";
    case ErrorCode::NonIntegerId: return "NonIntegerId";
    case ErrorCode::EmptyPhrase: return "EmptyPhrase";
    case ErrorCode::FileUnreadable: return "FileUnreadable";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DegenerateScene: return "DegenerateScene";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::MissingPrediction: return "MissingPrediction";
    case ErrorCode::PhraseCountMismatch: return "PhraseCountMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ConfigInfeasible: return "ConfigInfeasible";
    case ErrorCode::FeatureFileMissing: return "FeatureFileMissing";
    case ErrorCode::PathUnwritable: return "PathUnwritable";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
  }
  return "Unknown";
}

}  // namespace dres
