#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dpmusic {

enum class ErrorCode {
  kMalformedFile,
  kUnsupportedFormat,
  kEmptyPiece,
  kVocabOverflow,
  kUnsortedInput,
  kGrammarViolation,
  kPadLeak,
  kInvalidSchedule,
  kMalformedGrid,
  kOutOfRange,
  kIndexOutOfVocab,
  kSequenceTooLong,
  kEmptyGrid,
  kNoFeasibleValue,
  kTooFewPieces,
  kBadFormat,
  kNonFiniteLoss,
  kTooShort,
  kEmptyCorpus,
  kPromptTooShort,
  kCheckpointMismatch,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception; `code()` identifies the
// contract violation so callers (the CLI in particular) can map it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // what() without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace dpmusic
