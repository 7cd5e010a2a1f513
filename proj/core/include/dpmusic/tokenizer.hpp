#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpmusic/midi_io.hpp"

namespace dpmusic {

inline constexpr std::size_t kNumFields = 6;

enum class Field : std::size_t {
  kType = 0,
  kBeat = 1,
  kPosition = 2,
  kPitch = 3,
  kDuration = 4,
  kInstrument = 5,
};

inline constexpr std::array<Field, kNumFields> kAllFields = {
    Field::kType, Field::kBeat, Field::kPosition, Field::kPitch, Field::kDuration, Field::kInstrument};

std::string_view field_name(Field field);
inline std::string_view field_name(std::size_t d) { return field_name(static_cast<Field>(d)); }

// Values of the `type` field. 0 is the per-field null index.
enum class TokenType : int {
  kNull = 0,
  kStartOfSong = 1,
  kInstrument = 2,
  kStartOfNotes = 3,
  kNote = 4,
  kEndOfSong = 5,
};

inline constexpr int kNullIndex = 0;

struct CompoundToken {
  std::array<int, kNumFields> values{};

  int& operator[](Field f) { return values[static_cast<std::size_t>(f)]; }
  int operator[](Field f) const { return values[static_cast<std::size_t>(f)]; }
  int& operator[](std::size_t d) { return values[d]; }
  int operator[](std::size_t d) const { return values[d]; }

  TokenType type() const { return static_cast<TokenType>(values[0]); }

  friend bool operator==(const CompoundToken&, const CompoundToken&) = default;
};

CompoundToken make_structural_token(TokenType type);

// Per-field vocabularies. Index 0 is null in every field and the last
// index (size - 1) is the pad symbol used by delay scheduling. Real values
// are shifted by one (beat b -> b + 1) except duration, which is >= 1 and
// stored as-is.
class FieldVocabulary {
 public:
  FieldVocabulary() : FieldVocabulary(QuantizationConfig{}) {}
  explicit FieldVocabulary(const QuantizationConfig& quant, int num_instruments = kNumInstruments);

  const QuantizationConfig& quantization() const { return quant_; }
  int num_instruments() const { return num_instruments_; }

  int size(std::size_t d) const { return sizes_[d]; }
  int size(Field f) const { return sizes_[static_cast<std::size_t>(f)]; }
  const std::array<int, kNumFields>& sizes() const { return sizes_; }
  int pad_id(std::size_t d) const { return sizes_[d] - 1; }
  int pad_id(Field f) const { return pad_id(static_cast<std::size_t>(f)); }

  // First and last index carrying a real (non-null, non-pad) value.
  int first_value(std::size_t d) const;
  int last_value(std::size_t d) const { return sizes_[d] - 2; }

  int beat_index(int beat) const { return beat + 1; }
  int beat_from_index(int index) const { return index - 1; }

  CompoundToken pad_token() const;
  std::uint64_t hash() const;

  friend bool operator==(const FieldVocabulary& a, const FieldVocabulary& b) {
    return a.sizes_ == b.sizes_ && a.num_instruments_ == b.num_instruments_ &&
           a.quant_.resolution == b.quant_.resolution;
  }

 private:
  QuantizationConfig quant_;
  int num_instruments_;
  std::array<int, kNumFields> sizes_{};
};

// Regular type grammar: SOS instrument* SON note* EOS.
enum class GrammarPhase {
  kExpectStart,
  kHeader,
  kNotes,
  kEnded,
};

// Types that may legally follow in `phase`.
std::span<const TokenType> allowed_types(GrammarPhase phase);
bool type_allowed(GrammarPhase phase, TokenType type);
GrammarPhase advance_phase(GrammarPhase phase, TokenType type);
// Minimal number of further tokens needed to reach a complete sequence.
int tokens_to_finish(GrammarPhase phase);

struct GrammarVerdict {
  bool ok = true;
  std::size_t violation_index = 0;
  std::string reason;

  explicit operator bool() const { return ok; }
};

GrammarVerdict validate_grammar(std::span<const CompoundToken> tokens);

std::vector<CompoundToken> encode_events(const std::vector<NoteEvent>& events,
                                         const FieldVocabulary& vocab);
std::vector<NoteEvent> decode_events(std::span<const CompoundToken> tokens,
                                     const FieldVocabulary& vocab);

// Pitch shift applied directly to note tokens. Notes leaving the pitch
// range are removed; returns the number removed.
std::size_t transpose_tokens(std::vector<CompoundToken>& tokens, int semitones,
                             const FieldVocabulary& vocab);

// Newline-delimited text: one "type beat pos pitch dur inst" line per token.
std::string tokens_to_text(std::span<const CompoundToken> tokens);
std::vector<CompoundToken> tokens_from_text(std::string_view text);

// Packed little-endian u16, six values per token, no header.
std::vector<std::uint8_t> tokens_to_binary(std::span<const CompoundToken> tokens);
std::vector<CompoundToken> tokens_from_binary(std::span<const std::uint8_t> bytes);

}  // namespace dpmusic
