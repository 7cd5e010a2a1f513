#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "dpmusic/delay_codec.hpp"
#include "dpmusic/error.hpp"
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

CompoundToken token(int base) {
  CompoundToken t;
  for (std::size_t d = 0; d < kNumFields; ++d) t[d] = base + static_cast<int>(d);
  return t;
}

TEST(Schedule, ParseAndValidate) {
  EXPECT_EQ(parse_schedule("uniform"), DelaySchedule::uniform());
  EXPECT_EQ(parse_schedule("zero"), DelaySchedule::zero());
  EXPECT_EQ(parse_schedule("5,4,3,2,1,0").delays, (std::array<int, 6>{5, 4, 3, 2, 1, 0}));
  EXPECT_EQ(code_of([] { parse_schedule("0,1,2"); }), ErrorCode::kInvalidSchedule);
  EXPECT_EQ(code_of([] { parse_schedule("0,1,2,3,4,x"); }), ErrorCode::kInvalidSchedule);
  EXPECT_EQ(code_of([] { DelaySchedule{{0, -1, 0, 0, 0, 0}}.validate(); }), ErrorCode::kInvalidSchedule);
  EXPECT_EQ(DelaySchedule::uniform().max_delay(), 5);
  EXPECT_NE(DelaySchedule::uniform().hash16(), DelaySchedule::zero().hash16());
}

TEST(DpEncode, SingleTokenStaircase) {
  const std::vector<CompoundToken> tokens = {token(1)};
  const auto grid = dp_encode(tokens, DelaySchedule::uniform(), kVocab);
  ASSERT_EQ(grid.steps(), 6u);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      EXPECT_EQ(grid.cell(t, d), t == d ? tokens[0][d] : kVocab.pad_id(d));
    }
  }
}

TEST(DpEncode, EmptyIsFlushOnly) {
  const auto grid = dp_encode({}, DelaySchedule::uniform(), kVocab);
  EXPECT_EQ(grid.steps(), 5u);
  for (std::size_t t = 0; t < grid.steps(); ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) EXPECT_EQ(grid.cell(t, d), kVocab.pad_id(d));
  }
  EXPECT_TRUE(dp_decode(grid, kVocab).empty());
  EXPECT_EQ(dp_encode({}, DelaySchedule::zero(), kVocab).steps(), 0u);
}

TEST(DpEncode, ZeroDelayIsRowStacking) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto tokens = testing::random_tokens(rng, kVocab, 40);
    const auto grid = dp_encode(tokens, DelaySchedule::zero(), kVocab);
    ASSERT_EQ(grid.steps(), tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      for (std::size_t d = 0; d < kNumFields; ++d) ASSERT_EQ(grid.cell(t, d), tokens[t][d]);
    }
    ASSERT_EQ(dp_decode(grid, kVocab), tokens);
  }
}

TEST(DpEncode, LawsOverRandomSchedules) {
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const auto tokens = testing::random_tokens(rng, kVocab, 30);
    const auto s = testing::random_schedule(rng, 7);
    const auto grid = dp_encode(tokens, s, kVocab);
    ASSERT_EQ(grid.steps(), tokens.size() + static_cast<std::size_t>(s.max_delay()));
    ASSERT_EQ(dp_decode(grid, kVocab), tokens);
    // Each source value lands in exactly one cell: compare per-field multisets.
    for (std::size_t d = 0; d < kNumFields; ++d) {
      std::map<int, int> src, cells;
      for (const auto& t : tokens) ++src[t[d]];
      for (std::size_t r = 0; r < grid.steps(); ++r) {
        if (grid.cell(r, d) != kVocab.pad_id(d)) ++cells[grid.cell(r, d)];
      }
      ASSERT_EQ(src, cells);
    }
  }
}

TEST(DpDecode, MalformedGrid) {
  const std::vector<CompoundToken> tokens = {token(1), token(2)};
  auto grid = dp_encode(tokens, DelaySchedule::uniform(), kVocab);
  auto pad_in_value = grid;
  pad_in_value.cell(0, 0) = kVocab.pad_id(0);
  EXPECT_EQ(code_of([&] { dp_decode(pad_in_value, kVocab); }), ErrorCode::kMalformedGrid);
  auto value_in_pad = grid;
  value_in_pad.cell(0, 5) = 1;
  EXPECT_EQ(code_of([&] { dp_decode(value_in_pad, kVocab); }), ErrorCode::kMalformedGrid);
  try {
    dp_decode(pad_in_value, kVocab);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("[1][type]"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { dp_decode(TokenGrid(3, DelaySchedule::uniform()), kVocab); }),
            ErrorCode::kMalformedGrid);
}

TEST(ConditioningContext, Examples) {
  std::vector<CompoundToken> tokens(4, token(1));
  const auto grid = dp_encode(tokens, DelaySchedule::uniform(), kVocab);
  const std::size_t pitch = static_cast<std::size_t>(Field::kPitch);
  // Pitch of event 3 sits at step 3 + 3.
  const auto ctx = conditioning_context(grid, 6, pitch);
  std::vector<EventField> expected;
  for (long j = 1; j <= 2; ++j) {
    for (std::size_t f = 0; f < kNumFields; ++f) expected.push_back({j, f});
  }
  for (std::size_t f = 0; f < 3; ++f) expected.push_back({3, f});
  EXPECT_EQ(ctx, expected);

  EXPECT_TRUE(conditioning_context(grid, 1, 0).empty());

  const auto flat = dp_encode(tokens, DelaySchedule::zero(), kVocab);
  for (std::size_t d = 0; d < kNumFields; ++d) {
    for (const auto& ef : conditioning_context(flat, 3, d)) EXPECT_LT(ef.event, 3);
  }
  EXPECT_EQ(code_of([&] { conditioning_context(grid, 0, 0); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(code_of([&] { conditioning_context(grid, grid.steps() + 1, 0); }), ErrorCode::kOutOfRange);
}

TEST(ConditioningContext, IntraEventPartWithinAttentionReach) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const auto s = testing::random_schedule(rng);
    std::vector<CompoundToken> tokens(8, token(1));
    const auto grid = dp_encode(tokens, s, kVocab);
    for (std::size_t t = 1; t <= grid.steps(); ++t) {
      const auto reach = attention_reach(s, tokens.size(), t);
      for (std::size_t d = 0; d < kNumFields; ++d) {
        const long event = event_at(s, static_cast<long>(t), d);
        for (const auto& ef : conditioning_context(grid, t, d)) {
          if (ef.event != event) continue;
          ASSERT_TRUE(std::binary_search(reach.begin(), reach.end(), ef));
        }
      }
    }
  }
}

TEST(GridBinary, RoundTripAndChecks) {
  Rng rng(6);
  const auto tokens = testing::random_tokens(rng, kVocab, 30);
  const auto grid = dp_encode(tokens, DelaySchedule::uniform(), kVocab);
  const auto bytes = grid_to_binary(grid);
  ASSERT_EQ(bytes.size(), 8 + grid.steps() * kNumFields * 2);
  EXPECT_EQ(bytes[0], 0x44);
  EXPECT_EQ(bytes[1], 0x47);
  EXPECT_EQ(grid_from_binary(bytes, DelaySchedule::uniform()), grid);
  EXPECT_EQ(code_of([&] { grid_from_binary(bytes, DelaySchedule::zero()); }),
            ErrorCode::kCheckpointMismatch);
  auto bad = bytes;
  bad[0] = 0;
  EXPECT_EQ(code_of([&] { grid_from_binary(bad, DelaySchedule::uniform()); }), ErrorCode::kBadFormat);
  bad = bytes;
  bad.pop_back();
  EXPECT_EQ(code_of([&] { grid_from_binary(bad, DelaySchedule::uniform()); }), ErrorCode::kBadFormat);
}

}  // namespace
}  // namespace dpmusic
