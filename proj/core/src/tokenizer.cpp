#include "dpmusic/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "dpmusic/error.hpp"

namespace dpmusic {

namespace {

constexpr std::array<TokenType, 2> kAfterStart = {TokenType::kInstrument, TokenType::kStartOfNotes};
constexpr std::array<TokenType, 1> kBeforeStart = {TokenType::kStartOfSong};
constexpr std::array<TokenType, 2> kInNotes = {TokenType::kNote, TokenType::kEndOfSong};

constexpr int kTypeVocab = 7;  // null, five types, pad

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xFF;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string_view field_name(Field field) {
  switch (field) {
    case Field::kType: return "type";
    case Field::kBeat: return "beat";
    case Field::kPosition: return "position";
    case Field::kPitch: return "pitch";
    case Field::kDuration: return "duration";
    case Field::kInstrument: return "instrument";
  }
  return "?";
}

CompoundToken make_structural_token(TokenType type) {
  CompoundToken t;
  t[Field::kType] = static_cast<int>(type);
  return t;
}

FieldVocabulary::FieldVocabulary(const QuantizationConfig& quant, int num_instruments)
    : quant_(quant), num_instruments_(num_instruments) {
  if (quant.resolution < 1 || quant.max_beat < 1 || quant.max_duration < 2 || num_instruments < 1) {
    throw Error(ErrorCode::kOutOfRange, "vocabulary bounds must be positive");
  }
  sizes_[0] = kTypeVocab;
  sizes_[1] = quant.max_beat + 2;
  sizes_[2] = quant.resolution + 2;
  sizes_[3] = 128 + 2;
  sizes_[4] = quant.max_duration + 1;
  sizes_[5] = num_instruments + 2;
}

int FieldVocabulary::first_value(std::size_t) const { return 1; }

CompoundToken FieldVocabulary::pad_token() const {
  CompoundToken t;
  for (std::size_t d = 0; d < kNumFields; ++d) t[d] = pad_id(d);
  return t;
}

std::uint64_t FieldVocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int s : sizes_) h = fnv1a(h, static_cast<std::uint64_t>(s));
  h = fnv1a(h, static_cast<std::uint64_t>(quant_.resolution));
  return h;
}

std::span<const TokenType> allowed_types(GrammarPhase phase) {
  switch (phase) {
    case GrammarPhase::kExpectStart: return kBeforeStart;
    case GrammarPhase::kHeader: return kAfterStart;
    case GrammarPhase::kNotes: return kInNotes;
    case GrammarPhase::kEnded: return {};
  }
  return {};
}

bool type_allowed(GrammarPhase phase, TokenType type) {
  const auto allowed = allowed_types(phase);
  return std::find(allowed.begin(), allowed.end(), type) != allowed.end();
}

GrammarPhase advance_phase(GrammarPhase phase, TokenType type) {
  switch (type) {
    case TokenType::kStartOfSong:
    case TokenType::kInstrument: return GrammarPhase::kHeader;
    case TokenType::kStartOfNotes:
    case TokenType::kNote: return GrammarPhase::kNotes;
    case TokenType::kEndOfSong: return GrammarPhase::kEnded;
    case TokenType::kNull: break;
  }
  return phase;
}

int tokens_to_finish(GrammarPhase phase) {
  switch (phase) {
    case GrammarPhase::kExpectStart: return 3;
    case GrammarPhase::kHeader: return 2;
    case GrammarPhase::kNotes: return 1;
    case GrammarPhase::kEnded: return 0;
  }
  return 0;
}

GrammarVerdict validate_grammar(std::span<const CompoundToken> tokens) {
  GrammarPhase phase = GrammarPhase::kExpectStart;
  int last_beat = -1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenType type = tokens[i].type();
    if (!type_allowed(phase, type)) {
      return {false, i, "type " + std::to_string(static_cast<int>(type)) + " not allowed here"};
    }
    if (type == TokenType::kNote) {
      const int beat = tokens[i][Field::kBeat];
      if (beat < last_beat) {
        return {false, i, "beat index " + std::to_string(beat) + " after " + std::to_string(last_beat)};
      }
      last_beat = beat;
    }
    phase = advance_phase(phase, type);
  }
  if (phase != GrammarPhase::kEnded) {
    return {false, tokens.size(), "sequence does not end with end-of-song"};
  }
  return {};
}

std::vector<CompoundToken> encode_events(const std::vector<NoteEvent>& events,
                                         const FieldVocabulary& vocab) {
  const auto& q = vocab.quantization();
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (i > 0 && onset(e, q.resolution) < onset(events[i - 1], q.resolution)) {
      throw Error(ErrorCode::kUnsortedInput, "onset decreases at event " + std::to_string(i));
    }
    if (e.beat < 0 || e.beat >= q.max_beat || e.duration < 1 || e.duration >= q.max_duration ||
        e.position < 0 || e.position >= q.resolution || e.pitch < 0 || e.pitch > 127 ||
        e.instrument < 0 || e.instrument >= vocab.num_instruments()) {
      throw Error(ErrorCode::kVocabOverflow, "event " + std::to_string(i) + " outside vocabulary");
    }
  }
  std::vector<NoteEvent> sorted = events;
  sort_canonical(sorted);

  std::set<int> instruments;
  for (const auto& e : sorted) instruments.insert(e.instrument);

  std::vector<CompoundToken> out;
  out.reserve(sorted.size() + instruments.size() + 3);
  out.push_back(make_structural_token(TokenType::kStartOfSong));
  for (int inst : instruments) {
    auto t = make_structural_token(TokenType::kInstrument);
    t[Field::kInstrument] = inst + 1;
    out.push_back(t);
  }
  out.push_back(make_structural_token(TokenType::kStartOfNotes));
  for (const auto& e : sorted) {
    CompoundToken t;
    t[Field::kType] = static_cast<int>(TokenType::kNote);
    t[Field::kBeat] = vocab.beat_index(e.beat);
    t[Field::kPosition] = e.position + 1;
    t[Field::kPitch] = e.pitch + 1;
    t[Field::kDuration] = e.duration;
    t[Field::kInstrument] = e.instrument + 1;
    out.push_back(t);
  }
  out.push_back(make_structural_token(TokenType::kEndOfSong));
  return out;
}

std::vector<NoteEvent> decode_events(std::span<const CompoundToken> tokens,
                                     const FieldVocabulary& vocab) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const int v = tokens[i][d];
      if (v == vocab.pad_id(d)) {
        throw Error(ErrorCode::kPadLeak, "pad in field " + std::string(field_name(d)) +
                                             " of token " + std::to_string(i));
      }
      if (v < 0 || v >= vocab.size(d)) {
        throw Error(ErrorCode::kIndexOutOfVocab, "field " + std::string(field_name(d)) +
                                                     " of token " + std::to_string(i));
      }
    }
  }
  const auto verdict = validate_grammar(tokens);
  if (!verdict) {
    throw Error(ErrorCode::kGrammarViolation,
                "at index " + std::to_string(verdict.violation_index) + ": " + verdict.reason);
  }
  std::vector<NoteEvent> events;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t.type() != TokenType::kNote) continue;
    for (std::size_t d = 1; d < kNumFields; ++d) {
      if (t[d] == kNullIndex) {
        throw Error(ErrorCode::kGrammarViolation, "at index " + std::to_string(i) +
                                                      ": note token with null " +
                                                      std::string(field_name(d)));
      }
    }
    events.push_back({vocab.beat_from_index(t[Field::kBeat]), t[Field::kPosition] - 1,
                      t[Field::kPitch] - 1, t[Field::kDuration], t[Field::kInstrument] - 1});
  }
  return events;
}

std::size_t transpose_tokens(std::vector<CompoundToken>& tokens, int semitones,
                             const FieldVocabulary& vocab) {
  const int lo = 1;
  const int hi = vocab.last_value(static_cast<std::size_t>(Field::kPitch));
  std::size_t dropped = 0;
  std::vector<CompoundToken> kept;
  kept.reserve(tokens.size());
  for (auto t : tokens) {
    if (t.type() == TokenType::kNote) {
      t[Field::kPitch] += semitones;
      if (t[Field::kPitch] < lo || t[Field::kPitch] > hi) {
        ++dropped;
        continue;
      }
    }
    kept.push_back(t);
  }
  tokens = std::move(kept);
  return dropped;
}

std::string tokens_to_text(std::span<const CompoundToken> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      if (d) out += ' ';
      out += std::to_string(t[d]);
    }
    out += '\n';
  }
  return out;
}

std::vector<CompoundToken> tokens_from_text(std::string_view text) {
  std::vector<CompoundToken> tokens;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    CompoundToken t;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t d = 0; d < kNumFields; ++d) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [next, ec] = std::from_chars(p, end, t[d]);
      if (ec != std::errc{}) {
        throw Error(ErrorCode::kBadFormat, "line " + std::to_string(line_no) + ": expected 6 integers");
      }
      p = next;
    }
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    if (p != end) throw Error(ErrorCode::kBadFormat, "line " + std::to_string(line_no) + ": trailing data");
    tokens.push_back(t);
  }
  return tokens;
}

std::vector<std::uint8_t> tokens_to_binary(std::span<const CompoundToken> tokens) {
  std::vector<std::uint8_t> out;
  out.reserve(tokens.size() * kNumFields * 2);
  for (const auto& t : tokens) {
    for (int v : t.values) {
      if (v < 0 || v > 0xFFFF) throw Error(ErrorCode::kVocabOverflow, "token value exceeds u16");
      out.push_back(static_cast<std::uint8_t>(v & 0xFF));
      out.push_back(static_cast<std::uint8_t>(v >> 8));
    }
  }
  return out;
}

std::vector<CompoundToken> tokens_from_binary(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kTokenBytes = kNumFields * 2;
  if (bytes.size() % kTokenBytes != 0) {
    throw Error(ErrorCode::kBadFormat, "token file size " + std::to_string(bytes.size()) +
                                          " is not a multiple of 12");
  }
  std::vector<CompoundToken> tokens(bytes.size() / kTokenBytes);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const std::size_t at = i * kTokenBytes + d * 2;
      tokens[i][d] = bytes[at] | (bytes[at + 1] << 8);
    }
  }
  return tokens;
}

}  // namespace dpmusic
