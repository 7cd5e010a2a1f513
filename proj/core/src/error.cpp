#include "dpmusic/error.hpp"

namespace dpmusic {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedFile: return "MalformedFile";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kEmptyPiece: return "EmptyPiece";
    case ErrorCode::kVocabOverflow: return "VocabOverflow";
    case ErrorCode::kUnsortedInput: return "UnsortedInput";
    case ErrorCode::kGrammarViolation: return "GrammarViolation";
    case ErrorCode::kPadLeak: return "PadLeak";
    case ErrorCode::kInvalidSchedule: return "InvalidSchedule";
    case ErrorCode::kMalformedGrid: return "MalformedGrid";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kIndexOutOfVocab: return "IndexOutOfVocab";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kEmptyGrid: return "EmptyGrid";
    case ErrorCode::kNoFeasibleValue: return "NoFeasibleValue";
    case ErrorCode::kTooFewPieces: return "TooFewPieces";
    case ErrorCode::kBadFormat: return "BadFormat";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kPromptTooShort: return "PromptTooShort";
    case ErrorCode::kCheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace dpmusic
