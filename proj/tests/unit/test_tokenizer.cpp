#include <gtest/gtest.h>

#include <set>

#include "dpmusic/error.hpp"
#include "dpmusic/tokenizer.hpp"
#include "generators.hpp"

namespace dpmusic {
namespace {

const FieldVocabulary kVocab;

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}

CompoundToken note_token(int beat) {
  CompoundToken t;
  t[Field::kType] = static_cast<int>(TokenType::kNote);
  t[Field::kBeat] = kVocab.beat_index(beat);
  t[Field::kPosition] = 1;
  t[Field::kPitch] = 61;
  t[Field::kDuration] = 4;
  t[Field::kInstrument] = 1;
  return t;
}

std::vector<CompoundToken> with_frame(const std::vector<CompoundToken>& notes) {
  std::vector<CompoundToken> out = {make_structural_token(TokenType::kStartOfSong),
                                    make_structural_token(TokenType::kStartOfNotes)};
  out.insert(out.end(), notes.begin(), notes.end());
  out.push_back(make_structural_token(TokenType::kEndOfSong));
  return out;
}

TEST(Vocabulary, Layout) {
  EXPECT_GE(kVocab.size(Field::kType), 5);
  for (std::size_t d = 0; d < kNumFields; ++d) {
    EXPECT_NE(kVocab.pad_id(d), kNullIndex);
    EXPECT_EQ(kVocab.pad_id(d), kVocab.size(d) - 1);
  }
  EXPECT_EQ(kVocab.size(Field::kPosition), 14);
  EXPECT_EQ(kVocab.size(Field::kInstrument), 131);
}

TEST(EncodeEvents, SingleNote) {
  const auto tokens = encode_events({{0, 0, 60, 12, 0}}, kVocab);
  ASSERT_EQ(tokens.size(), 5u);
  EXPECT_EQ(tokens[0].type(), TokenType::kStartOfSong);
  EXPECT_EQ(tokens[1].type(), TokenType::kInstrument);
  EXPECT_EQ(tokens[2].type(), TokenType::kStartOfNotes);
  EXPECT_EQ(tokens[3].type(), TokenType::kNote);
  EXPECT_EQ(tokens[4].type(), TokenType::kEndOfSong);
  for (std::size_t d = 1; d < kNumFields; ++d) EXPECT_NE(tokens[3][d], kNullIndex);
  EXPECT_EQ(decode_events(tokens, kVocab), (std::vector<NoteEvent>{{0, 0, 60, 12, 0}}));
}

TEST(EncodeEvents, Empty) {
  const auto tokens = encode_events({}, kVocab);
  ASSERT_EQ(tokens.size(), 3u);
  EXPECT_EQ(tokens[0].type(), TokenType::kStartOfSong);
  EXPECT_EQ(tokens[1].type(), TokenType::kStartOfNotes);
  EXPECT_EQ(tokens[2].type(), TokenType::kEndOfSong);
  for (const auto& t : tokens) {
    for (std::size_t d = 1; d < kNumFields; ++d) EXPECT_EQ(t[d], kNullIndex);
  }
}

TEST(EncodeEvents, SimultaneousNotesOrderedByPitch) {
  const auto tokens = encode_events({{0, 0, 64, 1, 0}, {0, 0, 60, 1, 0}}, kVocab);
  const auto events = decode_events(tokens, kVocab);
  EXPECT_EQ(events[0].pitch, 60);
  EXPECT_EQ(events[1].pitch, 64);
}

TEST(EncodeEvents, Errors) {
  EXPECT_EQ(code_of([] { encode_events({{1, 0, 60, 1, 0}, {0, 0, 60, 1, 0}}, kVocab); }),
            ErrorCode::kUnsortedInput);
  EXPECT_EQ(code_of([] { encode_events({{256, 0, 60, 1, 0}}, kVocab); }), ErrorCode::kVocabOverflow);
  EXPECT_EQ(code_of([] { encode_events({{0, 0, 60, 384, 0}}, kVocab); }), ErrorCode::kVocabOverflow);
}

TEST(EncodeEvents, RoundTripAndCountLaw) {
  Rng rng(1);
  const QuantizationConfig q{};
  for (int i = 0; i < 1000; ++i) {
    const auto events = testing::random_events(rng, q, 50);
    const auto tokens = encode_events(events, kVocab);
    std::set<int> instruments;
    for (const auto& e : events) instruments.insert(e.instrument);
    ASSERT_EQ(tokens.size(), events.size() + instruments.size() + 3);
    ASSERT_TRUE(validate_grammar(tokens).ok);
    ASSERT_EQ(decode_events(tokens, kVocab), events);
    for (const auto& t : tokens) {
      for (std::size_t d = 0; d < kNumFields; ++d) ASSERT_NE(t[d], kVocab.pad_id(d));
    }
  }
}

TEST(DecodeEvents, Errors) {
  auto tokens = encode_events({{0, 0, 60, 12, 0}}, kVocab);
  auto missing_end = tokens;
  missing_end.pop_back();
  EXPECT_EQ(code_of([&] { decode_events(missing_end, kVocab); }), ErrorCode::kGrammarViolation);

  std::vector<CompoundToken> early = {make_structural_token(TokenType::kStartOfSong), note_token(0),
                                      make_structural_token(TokenType::kStartOfNotes),
                                      make_structural_token(TokenType::kEndOfSong)};
  EXPECT_EQ(code_of([&] { decode_events(early, kVocab); }), ErrorCode::kGrammarViolation);

  auto leak = tokens;
  leak[3][Field::kPitch] = kVocab.pad_id(Field::kPitch);
  EXPECT_EQ(code_of([&] { decode_events(leak, kVocab); }), ErrorCode::kPadLeak);
}

TEST(ValidateGrammar, Beats) {
  EXPECT_TRUE(validate_grammar(with_frame({note_token(0), note_token(0), note_token(1), note_token(3)})).ok);
  const auto bad = with_frame({note_token(0), note_token(2), note_token(1)});
  const auto verdict = validate_grammar(bad);
  EXPECT_FALSE(verdict.ok);
  // Index 2 among the notes; 4 in the framed sequence.
  EXPECT_EQ(verdict.violation_index, 4u);
  EXPECT_TRUE(validate_grammar(with_frame({})).ok);
}

TEST(ValidateGrammar, TypeSequence) {
  using T = TokenType;
  const auto seq = [](std::initializer_list<T> types) {
    std::vector<CompoundToken> out;
    for (T t : types) out.push_back(t == T::kNote ? note_token(0) : make_structural_token(t));
    return out;
  };
  EXPECT_TRUE(validate_grammar(seq({T::kStartOfSong, T::kInstrument, T::kInstrument,
                                    T::kStartOfNotes, T::kNote, T::kEndOfSong}))
                  .ok);
  EXPECT_FALSE(validate_grammar(seq({T::kStartOfNotes, T::kEndOfSong})).ok);
  EXPECT_FALSE(validate_grammar(seq({T::kStartOfSong, T::kStartOfNotes, T::kInstrument, T::kEndOfSong})).ok);
  EXPECT_FALSE(validate_grammar(seq({T::kStartOfSong, T::kStartOfNotes, T::kEndOfSong, T::kNote})).ok);
  EXPECT_FALSE(validate_grammar(seq({})).ok);
}

TEST(Grammar, TokensToFinish) {
  EXPECT_EQ(tokens_to_finish(GrammarPhase::kExpectStart), 3);
  EXPECT_EQ(tokens_to_finish(GrammarPhase::kHeader), 2);
  EXPECT_EQ(tokens_to_finish(GrammarPhase::kNotes), 1);
  EXPECT_EQ(tokens_to_finish(GrammarPhase::kEnded), 0);
  EXPECT_TRUE(type_allowed(GrammarPhase::kHeader, TokenType::kInstrument));
  EXPECT_TRUE(type_allowed(GrammarPhase::kHeader, TokenType::kStartOfNotes));
  EXPECT_FALSE(type_allowed(GrammarPhase::kHeader, TokenType::kNote));
}

TEST(TransposeTokens, ShiftsPitchOnly) {
  auto tokens = encode_events({{0, 0, 60, 12, 0}, {1, 0, 126, 2, 0}}, kVocab);
  const auto before = tokens;
  EXPECT_EQ(transpose_tokens(tokens, 2, kVocab), 1u);
  ASSERT_EQ(tokens.size(), before.size() - 1);
  EXPECT_EQ(tokens[3][Field::kPitch], before[3][Field::kPitch] + 2);
  for (std::size_t d = 0; d < kNumFields; ++d) {
    if (d != static_cast<std::size_t>(Field::kPitch)) EXPECT_EQ(tokens[3][d], before[3][d]);
  }
}

TEST(Serialization, TextAndBinaryRoundTrip) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto tokens = encode_events(testing::random_events(rng, {}, 30), kVocab);
    ASSERT_EQ(tokens_from_text(tokens_to_text(tokens)), tokens);
    const auto bin = tokens_to_binary(tokens);
    ASSERT_EQ(bin.size(), tokens.size() * 12);
    ASSERT_EQ(tokens_from_binary(bin), tokens);
  }
}

TEST(Serialization, Layouts) {
  const std::vector<CompoundToken> t = {CompoundToken{{4, 2, 3, 61, 12, 258}}};
  EXPECT_EQ(tokens_to_text(t), "4 2 3 61 12 258\n");
  const auto bin = tokens_to_binary(t);
  EXPECT_EQ(bin[0], 4);
  EXPECT_EQ(bin[1], 0);
  EXPECT_EQ(bin[10], 258 & 0xFF);
  EXPECT_EQ(bin[11], 1);
}

TEST(Serialization, BadInput) {
  EXPECT_EQ(code_of([] { tokens_from_text("1 2 3\n"); }), ErrorCode::kBadFormat);
  EXPECT_EQ(code_of([] { tokens_from_text("1 2 3 4 5 x\n"); }), ErrorCode::kBadFormat);
  const std::vector<std::uint8_t> odd(13, 0);
  EXPECT_EQ(code_of([&] { tokens_from_binary(odd); }), ErrorCode::kBadFormat);
}

}  // namespace
}  // namespace dpmusic
