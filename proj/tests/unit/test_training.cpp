#include <gtest/gtest.h>

#include <cmath>

#include "dpmusic/checkpoint.hpp"
#include "dpmusic/error.hpp"
#include "dpmusic/training.hpp"
#include "generators.hpp"

namespace dpmusic {
namespace {

using testing::tiny_model_config;

TEST(LearningRate, Schedule) {
  TrainConfig cfg;
  cfg.warmup_steps = 100;
  EXPECT_DOUBLE_EQ(lr_at(100, cfg), 3e-4);
  EXPECT_DOUBLE_EQ(lr_at(50, cfg), 1.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(400, cfg), 1.5e-4);
  double prev = 0.0;
  for (long s = 1; s <= 100; ++s) {
    ASSERT_GT(lr_at(s, cfg), prev);
    prev = lr_at(s, cfg);
  }
  for (long s = 101; s <= 1000; ++s) {
    ASSERT_LT(lr_at(s, cfg), prev);
    prev = lr_at(s, cfg);
  }
  EXPECT_NEAR(lr_at(101, cfg), lr_at(100, cfg), 2e-6);
  cfg.warmup_steps = 0;
  EXPECT_THROW(lr_at(1, cfg), Error);
}

std::vector<std::vector<CompoundToken>> corpus(const FieldVocabulary& vocab, int pieces, int notes,
                                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<CompoundToken>> out;
  for (int i = 0; i < pieces; ++i) {
    out.push_back(encode_events(
        testing::random_events(rng, vocab.quantization(), notes, vocab.num_instruments(), notes), vocab));
  }
  return out;
}

TEST(BatchStream, LengthLawAndTruncation) {
  const auto vocab = testing::tiny_vocab();
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.augment = false;
  cfg.max_seq_len = 1024;
  auto pieces = corpus(vocab, 3, 6, 1);
  BatchStream stream(pieces, cfg, DelaySchedule::uniform(), vocab);
  for (const auto& p : pieces) EXPECT_EQ(stream.encode(p).steps(), p.size() + 5);
  cfg.max_seq_len = 7;
  BatchStream short_stream(pieces, cfg, DelaySchedule::uniform(), vocab);
  const auto batch = short_stream.next();
  for (const auto& g : batch.grids) EXPECT_EQ(g.steps(), 7u);
}

TEST(BatchStream, DeterministicOrderAndEpochs) {
  const auto vocab = testing::tiny_vocab();
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.seed = 9;
  const auto pieces = corpus(vocab, 5, 4, 2);
  BatchStream a(pieces, cfg, DelaySchedule::uniform(), vocab);
  BatchStream b(pieces, cfg, DelaySchedule::uniform(), vocab);
  for (int i = 0; i < 6; ++i) {
    const auto x = a.next();
    const auto y = b.next();
    ASSERT_EQ(x.grids, y.grids);
    ASSERT_EQ(x.transpositions, y.transpositions);
  }
  EXPECT_GE(a.epoch(), 3u);
}

TEST(BatchStream, AugmentationShiftsPitchOnly) {
  const auto vocab = testing::tiny_vocab();
  auto tokens = encode_events({{0, 0, 60, 2, 1}}, vocab);
  const auto before = tokens;
  transpose_tokens(tokens, 2, vocab);
  EXPECT_EQ(tokens[3][Field::kPitch], before[3][Field::kPitch] + 2);
  for (std::size_t d : {0u, 1u, 2u, 4u, 5u}) EXPECT_EQ(tokens[3][d], before[3][d]);

  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.augmentation.seed = 4;
  BatchStream stream({before}, cfg, DelaySchedule::zero(), vocab);
  for (int i = 0; i < 20; ++i) {
    const auto batch = stream.next();
    const int s = batch.transpositions[0];
    ASSERT_GE(s, -5);
    ASSERT_LE(s, 6);
    ASSERT_EQ(batch.grids[0].cell(3, 3), before[3][Field::kPitch] + s);
  }
}

TEST(BatchStream, EmptyCorpus) {
  try {
    BatchStream({}, TrainConfig{}, DelaySchedule::uniform(), FieldVocabulary{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyCorpus);
  }
}

TEST(Train, ZeroStepsKeepsInitialization) {
  const auto cfg = tiny_model_config();
  Model model = Model::initialized(cfg, 1);
  const auto before = checkpoint_to_bytes(model);
  TrainConfig tc;
  tc.total_steps = 0;
  tc.max_seq_len = cfg.max_steps;
  BatchStream stream(corpus(cfg.vocab, 2, 4, 3), tc, cfg.schedule, cfg.vocab);
  const auto result = train(model, stream, tc);
  EXPECT_TRUE(result.trace.empty());
  EXPECT_EQ(checkpoint_to_bytes(model), before);
}

TEST(Train, SameSeedSameTrace) {
  auto cfg = tiny_model_config(1, 2, 8);
  cfg.dropout = 0.1;
  TrainConfig tc;
  tc.total_steps = 15;
  tc.batch_size = 2;
  tc.warmup_steps = 5;
  tc.lr_peak = 1e-2;
  tc.max_seq_len = cfg.max_steps;
  tc.seed = 3;
  const auto pieces = corpus(cfg.vocab, 4, 6, 4);
  std::vector<std::vector<TrainRecord>> traces;
  for (int run = 0; run < 2; ++run) {
    Model model = Model::initialized(cfg, 1);
    BatchStream stream(pieces, tc, cfg.schedule, cfg.vocab);
    traces.push_back(train(model, stream, tc).trace);
  }
  ASSERT_EQ(traces[0].size(), 15u);
  for (std::size_t i = 0; i < traces[0].size(); ++i) {
    EXPECT_EQ(traces[0][i].loss, traces[1][i].loss);
    EXPECT_EQ(traces[0][i].lr, traces[1][i].lr);
  }
}

TEST(Train, MemorizesOnePiece) {
  auto cfg = tiny_model_config(1, 2, 16);
  const auto pieces = corpus(cfg.vocab, 1, 8, 5);
  TrainConfig tc;
  tc.total_steps = 300;
  tc.batch_size = 1;
  tc.warmup_steps = 20;
  tc.lr_peak = 1e-2;
  tc.augment = false;
  tc.max_seq_len = cfg.max_steps;
  Model model = Model::initialized(cfg, 2);
  BatchStream stream(pieces, tc, cfg.schedule, cfg.vocab);
  const auto result = train(model, stream, tc, {stream.encode(pieces[0])});
  EXPECT_LT(result.trace.back().loss, 0.1 * result.trace.front().loss);
  EXPECT_GT(result.heldout.min_accuracy(), 0.9);
}

TEST(Train, NonFiniteLossAborts) {
  auto cfg = tiny_model_config();
  Model model = Model::initialized(cfg, 1);
  model.params().head_b[0](0, 1) = std::nan("");
  TrainConfig tc;
  tc.total_steps = 3;
  tc.max_seq_len = cfg.max_steps;
  BatchStream stream(corpus(cfg.vocab, 2, 4, 3), tc, cfg.schedule, cfg.vocab);
  try {
    train(model, stream, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteLoss);
  }
}

TEST(Train, RejectsOverlongSequences) {
  const auto cfg = tiny_model_config();
  Model model = Model::initialized(cfg, 1);
  TrainConfig tc;
  tc.max_seq_len = cfg.max_steps + 1;
  BatchStream stream(corpus(cfg.vocab, 2, 4, 3), tc, cfg.schedule, cfg.vocab);
  EXPECT_THROW(train(model, stream, tc), Error);
}

}  // namespace
}  // namespace dpmusic
