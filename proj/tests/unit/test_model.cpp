#include <gtest/gtest.h>

#include <cmath>

#include "dpmusic/error.hpp"
#include "dpmusic/model.hpp"
#include "generators.hpp"
#include "gradcheck.hpp"
#include "reference_model.hpp"

namespace dpmusic {
namespace {

using testing::tiny_model_config;

std::vector<CompoundToken> random_piece(Rng& rng, const FieldVocabulary& vocab, int max_notes) {
  return encode_events(testing::random_events(rng, vocab.quantization(), max_notes,
                                              vocab.num_instruments(), 1),
                       vocab);
}

std::vector<testing::Cells> rows_of(const TokenGrid& grid, std::size_t rows) {
  std::vector<testing::Cells> out;
  for (std::size_t r = 0; r < rows; ++r) {
    testing::Cells c;
    for (std::size_t d = 0; d < kNumFields; ++d) c[d] = grid.cell(r, d);
    out.push_back(c);
  }
  return out;
}

void expect_matches_reference(const Model& model, const TokenGrid& grid, double tol) {
  const auto logits = forward(model, grid);
  const auto ref = testing::reference_logits(model, rows_of(grid, grid.steps()));
  for (std::size_t t = 0; t < grid.steps(); ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      for (std::size_t v = 0; v < ref[t][d].size(); ++v) {
        ASSERT_NEAR(logits.fields[d](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)),
                    ref[t][d][v], tol);
      }
    }
  }
}

TEST(EmbedStep, ZeroTablesGivePosition) {
  auto cfg = tiny_model_config();
  Model model = testing::scrambled_model(cfg, 1);
  for (auto& e : model.params().embed) e.setZero();
  const std::array<int, kNumFields> row = {1, 2, 3, 4, 5, 1};
  EXPECT_EQ(embed_step(model, row, 3), RowVector(model.params().position.row(3)));
}

TEST(EmbedStep, SwapWithIdenticalTables) {
  auto cfg = tiny_model_config();
  Model model = testing::scrambled_model(cfg, 2);
  // Beat and position tables made identical on their common rows.
  auto& P = model.params();
  const Eigen::Index rows = std::min(P.embed[1].rows(), P.embed[2].rows());
  P.embed[2].topRows(rows) = P.embed[1].topRows(rows);
  const std::array<int, kNumFields> a = {1, 2, 3, 4, 5, 1};
  const std::array<int, kNumFields> b = {1, 3, 2, 4, 5, 1};
  EXPECT_NEAR((embed_step(model, a, 0) - embed_step(model, b, 0)).norm(), 0.0, 1e-15);
}

TEST(EmbedStep, PadRowMatchesLookup) {
  auto cfg = tiny_model_config();
  const Model model = testing::scrambled_model(cfg, 3);
  const auto pad = cfg.vocab.pad_token();
  RowVector expected = model.params().position.row(3);
  for (std::size_t d = 0; d < kNumFields; ++d) expected += model.params().embed[d].row(pad[d]);
  EXPECT_NEAR((embed_step(model, pad.values, 3) - expected).norm(), 0.0, 1e-15);
}

TEST(EmbedStep, OutOfVocab) {
  const Model model = testing::scrambled_model(tiny_model_config(), 3);
  const std::array<int, kNumFields> bad = {99, 0, 0, 0, 0, 0};
  try {
    embed_step(model, bad, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIndexOutOfVocab);
  }
}

TEST(Forward, ToyModelMatchesReference) {
  auto cfg = tiny_model_config(1, 1, 4);
  const Model model = testing::scrambled_model(cfg, 4);
  Rng rng(4);
  const auto grid = dp_encode(random_piece(rng, cfg.vocab, 6), cfg.schedule, cfg.vocab);
  expect_matches_reference(model, grid, 1e-12);
}

TEST(Forward, DeeperModelsMatchReference) {
  Rng rng(5);
  for (bool tied : {false, true}) {
    auto cfg = tiny_model_config(3, 4, 16);
    cfg.tie_embeddings = tied;
    const Model model = testing::scrambled_model(cfg, tied ? 6 : 7);
    const auto grid = dp_encode(random_piece(rng, cfg.vocab, 10), cfg.schedule, cfg.vocab);
    expect_matches_reference(model, grid, 1e-11);
  }
}

TEST(Forward, FirstStepSeesOnlyRowOne) {
  auto cfg = tiny_model_config();
  const Model model = testing::scrambled_model(cfg, 8);
  Rng rng(8);
  const auto grid = dp_encode(random_piece(rng, cfg.vocab, 6), cfg.schedule, cfg.vocab);
  TokenGrid one(0, cfg.schedule);
  one.append_row(grid.row(0));
  const auto a = forward(model, grid).at(0);
  const auto b = forward(model, one).at(0);
  // Different prefix lengths may change summation blocking in the last bits.
  for (std::size_t d = 0; d < kNumFields; ++d) {
    EXPECT_LT((a.fields[d] - b.fields[d]).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Forward, CausalityBitExact) {
  auto cfg = tiny_model_config(2, 2, 16);
  const Model model = testing::scrambled_model(cfg, 9);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto grid = dp_encode(random_piece(rng, cfg.vocab, 12), cfg.schedule, cfg.vocab);
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<long>(grid.steps()) - 1));
    auto other = grid;
    for (std::size_t r = t; r < grid.steps(); ++r) {
      for (std::size_t d = 0; d < kNumFields; ++d) {
        other.cell(r, d) = static_cast<int>(rng.uniform_int(0, cfg.vocab.pad_id(d)));
      }
    }
    const auto a = forward(model, grid);
    const auto b = forward(model, other);
    for (std::size_t d = 0; d < kNumFields; ++d) {
      ASSERT_TRUE(a.fields[d].topRows(static_cast<Eigen::Index>(t)) ==
                  b.fields[d].topRows(static_cast<Eigen::Index>(t)));
    }
  }
}

TEST(Forward, IncrementalMatchesFull) {
  auto cfg = tiny_model_config(2, 2, 16);
  const Model model = testing::scrambled_model(cfg, 10);
  Rng rng(10);
  const auto grid = dp_encode(random_piece(rng, cfg.vocab, 12), cfg.schedule, cfg.vocab);
  const auto full = forward(model, grid);
  IncrementalState inc(model);
  for (std::size_t t = 0; t < grid.steps(); ++t) {
    const auto step = inc.push(grid.row(t));
    for (std::size_t d = 0; d < kNumFields; ++d) {
      ASSERT_LT((step.fields[d] - full.fields[d].row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff(),
                1e-10);
    }
  }
  EXPECT_EQ(inc.length(), grid.steps());
}

TEST(Forward, SequenceTooLong) {
  auto cfg = tiny_model_config();
  cfg.max_steps = 8;
  const Model model = testing::scrambled_model(cfg, 11);
  Rng rng(11);
  const auto grid = dp_encode(random_piece(rng, cfg.vocab, 20), cfg.schedule, cfg.vocab);
  ASSERT_GT(grid.steps(), 8u);
  try {
    forward(model, grid);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSequenceTooLong);
  }
  IncrementalState inc(model);
  for (std::size_t t = 0; t < 8; ++t) inc.push(grid.row(t));
  EXPECT_THROW(inc.push(grid.row(8)), Error);
}

TEST(Loss, UniformLogitsGiveLogVocab) {
  auto cfg = tiny_model_config();
  Model model = testing::scrambled_model(cfg, 12);
  for (std::size_t d = 0; d < kNumFields; ++d) {
    model.params().head_w[d].setZero();
    model.params().head_b[d].setZero();
  }
  Rng rng(12);
  const auto grid = dp_encode(random_piece(rng, cfg.vocab, 8), cfg.schedule, cfg.vocab);
  const auto stats = loss(model, grid);
  for (std::size_t d = 0; d < kNumFields; ++d) {
    EXPECT_NEAR(stats.field_loss(d), std::log(static_cast<double>(cfg.vocab.size(d))), 1e-12);
  }
}

TEST(Loss, ConfidentCorrectLogitsApproachZero) {
  auto cfg = tiny_model_config();
  Model model = testing::scrambled_model(cfg, 13);
  CompoundToken tok;
  tok.values = {4, 2, 3, 4, 5, 1};
  const std::vector<CompoundToken> tokens = {tok, tok};
  const auto grid = dp_encode(tokens, cfg.schedule, cfg.vocab);
  for (std::size_t d = 0; d < kNumFields; ++d) {
    model.params().head_w[d].setZero();
    model.params().head_b[d].setZero();
    model.params().head_b[d](0, tok[d]) = 60.0;
  }
  EXPECT_LT(loss(model, grid).loss(), 1e-20);
}

TEST(Loss, TwoTokenCellCount) {
  auto cfg = tiny_model_config();
  const Model model = testing::scrambled_model(cfg, 14);
  CompoundToken tok;
  tok.values = {4, 2, 3, 4, 5, 1};
  const auto grid = dp_encode(std::vector<CompoundToken>{tok, tok}, cfg.schedule, cfg.vocab);
  // Brute-force enumeration of cells at t >= 2 that carry an event field.
  std::size_t expected = 0;
  for (std::size_t t = 2; t <= grid.steps(); ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const long i = event_at(cfg.schedule, static_cast<long>(t), d);
      if (i >= 1 && i <= 2) ++expected;
    }
  }
  // Same cells via the context oracle: a target never conditions on itself.
  std::size_t via_context = 0;
  for (std::size_t t = 2; t <= grid.steps(); ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const long i = event_at(cfg.schedule, static_cast<long>(t), d);
      if (i < 1 || i > 2) continue;
      const auto ctx = conditioning_context(grid, t, d);
      if (std::find(ctx.begin(), ctx.end(), EventField{i, d}) == ctx.end()) ++via_context;
    }
  }
  EXPECT_EQ(expected, 11u);
  EXPECT_EQ(via_context, expected);
  EXPECT_EQ(loss(model, grid).count, expected);
}

TEST(Loss, EmptyGrid) {
  const Model model = testing::scrambled_model(tiny_model_config(), 15);
  try {
    loss(model, TokenGrid(1, DelaySchedule::uniform()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyGrid);
  }
  const auto pads = dp_encode({}, DelaySchedule::uniform(), tiny_model_config().vocab);
  EXPECT_THROW(loss(model, pads), Error);
}

TEST(Loss, ZeroDelayMatchesParallelBaseline) {
  auto cfg = tiny_model_config(2, 2, 8);
  cfg.schedule = DelaySchedule::zero();
  const Model model = testing::scrambled_model(cfg, 16);
  Rng rng(16);
  for (int i = 0; i < 5; ++i) {
    const auto tokens = random_piece(rng, cfg.vocab, 10);
    const auto grid = dp_encode(tokens, cfg.schedule, cfg.vocab);
    const auto stats = loss(model, grid);
    const auto ref = testing::parallel_baseline_loss(model, tokens);
    EXPECT_NEAR(stats.loss(), ref.mean, 1e-12);
    for (std::size_t d = 0; d < kNumFields; ++d) EXPECT_NEAR(stats.field_loss(d), ref.field_mean[d], 1e-12);
  }
}

TEST(Gradients, FiniteDifferences) {
  Rng rng(17);
  for (bool tied : {false, true}) {
    auto cfg = tiny_model_config(2, 2, 8);
    cfg.tie_embeddings = tied;
    Model model = testing::scrambled_model(cfg, 17);
    const auto grid = dp_encode(random_piece(rng, cfg.vocab, 5), cfg.schedule, cfg.vocab);
    const auto check = testing::finite_difference_check(model, grid, 200, 17);
    EXPECT_LT(check.max_relative_error, 1e-4) << check.worst;
  }
}

TEST(Gradients, DropoutIsUsedOnlyWithRng) {
  auto cfg = tiny_model_config();
  cfg.dropout = 0.5;
  const Model model = testing::scrambled_model(cfg, 18);
  Rng rng(18);
  const auto grid = dp_encode(random_piece(rng, cfg.vocab, 5), cfg.schedule, cfg.vocab);
  ModelParams plain = ModelParams::zeros(cfg);
  const auto a = accumulate_gradients(model, grid, plain);
  EXPECT_NEAR(a.loss(), loss(model, grid).loss(), 1e-12);
  ModelParams dropped = ModelParams::zeros(cfg);
  Rng drop(1);
  const auto b = accumulate_gradients(model, grid, dropped, &drop);
  EXPECT_NE(a.loss(), b.loss());
}

TEST(ModelInit, DeterministicAndShaped) {
  ModelConfig cfg;
  const Model a = Model::initialized(cfg, 3);
  const Model b = Model::initialized(cfg, 3);
  EXPECT_TRUE(a.params().embed[0] == b.params().embed[0]);
  EXPECT_TRUE(a.params().layers[1].w2 == b.params().layers[1].w2);
  EXPECT_EQ(a.params().layers[0].ln1_gain(0, 5), 1.0);
  EXPECT_EQ(a.params().layers[0].bq(0, 5), 0.0);
  EXPECT_EQ(a.params().head_w[3].rows(), cfg.d_model);
  ModelConfig bad = cfg;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), Error);
  ModelConfig other = cfg;
  other.d_model = 32;
  other.d_ff = 64;
  try {
    Model(other, a.params());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheckpointMismatch);
  }
}

}  // namespace
}  // namespace dpmusic
