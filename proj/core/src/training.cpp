#include "dpmusic/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dpmusic/error.hpp"
#include "dpmusic/random.hpp"

namespace dpmusic {

namespace {

std::vector<Matrix*> tensors_of(ModelParams& p) {
  std::vector<Matrix*> out;
  p.visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

}  // namespace

double lr_at(long step, const TrainConfig& cfg) {
  if (cfg.warmup_steps < 1) throw Error(ErrorCode::kOutOfRange, "warmup_steps must be >= 1");
  const auto s = static_cast<double>(std::max(step, 1L));
  const auto w = static_cast<double>(cfg.warmup_steps);
  if (s <= w) return cfg.lr_peak * s / w;
  return cfg.lr_peak * std::sqrt(w / s);
}

BatchStream::BatchStream(std::vector<std::vector<CompoundToken>> pieces, const TrainConfig& cfg,
                         const DelaySchedule& schedule, const FieldVocabulary& vocab)
    : pieces_(std::move(pieces)), cfg_(cfg), schedule_(schedule), vocab_(vocab) {
  if (pieces_.empty()) throw Error(ErrorCode::kEmptyCorpus, "no training pieces");
  if (cfg_.batch_size < 1) throw Error(ErrorCode::kOutOfRange, "batch_size must be >= 1");
  if (cfg_.max_seq_len < 2) throw Error(ErrorCode::kOutOfRange, "max_seq_len must be >= 2");
  schedule_.validate();
  reshuffle();
}

void BatchStream::reshuffle() {
  order_.resize(pieces_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(mix_seed(cfg_.seed, epoch_));
  rng.shuffle(order_);
  cursor_ = 0;
}

TokenGrid BatchStream::encode(const std::vector<CompoundToken>& piece) const {
  TokenGrid grid = dp_encode(piece, schedule_, vocab_);
  grid.truncate(static_cast<std::size_t>(cfg_.max_seq_len));
  return grid;
}

Batch BatchStream::next() {
  Batch batch;
  batch.epoch = epoch_;
  while (batch.grids.size() < static_cast<std::size_t>(cfg_.batch_size)) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    std::vector<CompoundToken> tokens = pieces_[order_[cursor_++]];
    int shift = 0;
    if (cfg_.augment) {
      shift = draw_transposition(cfg_.augmentation, draws_++);
      transpose_tokens(tokens, shift, vocab_);
    }
    batch.grids.push_back(encode(tokens));
    batch.transpositions.push_back(shift);
    batch.steps = std::max(batch.steps, batch.grids.back().steps());
  }
  return batch;
}

std::vector<CompoundToken> load_token_file(const std::string& path) {
  try {
    return tokens_from_binary(read_file_bytes(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.message());
  }
}

std::vector<std::vector<CompoundToken>> load_token_files(const std::vector<std::string>& paths) {
  std::vector<std::vector<CompoundToken>> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_token_file(p));
  return out;
}

double EvalResult::min_accuracy() const {
  return *std::min_element(field_accuracy.begin(), field_accuracy.end());
}

EvalResult evaluate(const Model& model, const std::vector<TokenGrid>& grids) {
  LossStats total;
  for (const auto& g : grids) {
    if (g.steps() < 2) continue;
    total += loss(model, g);
  }
  EvalResult r;
  r.loss = total.loss();
  for (std::size_t d = 0; d < kNumFields; ++d) {
    r.field_accuracy[d] = total.field_accuracy(d);
    r.field_loss[d] = total.field_loss(d);
  }
  return r;
}

TrainResult train(Model& model, BatchStream& batches, const TrainConfig& cfg,
                  const std::vector<TokenGrid>& heldout, const TrainCallback& on_step) {
  const auto& mcfg = model.config();
  if (cfg.max_seq_len > mcfg.max_steps) {
    throw Error(ErrorCode::kOutOfRange, "max_seq_len exceeds the model's max_steps");
  }
  ModelParams grads = ModelParams::zeros(mcfg);
  ModelParams first = ModelParams::zeros(mcfg);
  ModelParams second = ModelParams::zeros(mcfg);
  auto params = tensors_of(model.params());
  auto g = tensors_of(grads);
  auto m = tensors_of(first);
  auto v = tensors_of(second);
  Rng dropout_rng(mix_seed(cfg.seed, 0xD509));
  Rng* dropout = mcfg.dropout > 0.0 ? &dropout_rng : nullptr;

  TrainResult result;
  for (long step = 1; step <= cfg.total_steps; ++step) {
    const Batch batch = batches.next();
    grads.set_zero();
    LossStats stats;
    for (const auto& grid : batch.grids) {
      if (grid.steps() < 2) continue;
      stats += accumulate_gradients(model, grid, grads, dropout);
    }
    if (stats.count == 0) continue;
    const double batch_loss = stats.loss();
    if (!std::isfinite(batch_loss)) {
      throw Error(ErrorCode::kNonFiniteLoss, "loss " + std::to_string(batch_loss) + " at step " +
                                                 std::to_string(step) + " (lr " +
                                                 std::to_string(lr_at(step, cfg)) + ")");
    }

    const double inv = 1.0 / static_cast<double>(stats.count);
    double norm_sq = 0.0;
    for (auto* t : g) {
      *t *= inv;
      norm_sq += t->squaredNorm();
    }
    const double norm = std::sqrt(norm_sq);
    if (!std::isfinite(norm)) {
      throw Error(ErrorCode::kNonFiniteLoss, "gradient norm not finite at step " + std::to_string(step));
    }
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
      const double s = cfg.grad_clip / norm;
      for (auto* t : g) *t *= s;
    }

    const double lr = lr_at(step, cfg);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i]->array() = cfg.beta1 * m[i]->array() + (1.0 - cfg.beta1) * g[i]->array();
      v[i]->array() = cfg.beta2 * v[i]->array() + (1.0 - cfg.beta2) * g[i]->array().square();
      params[i]->array() -=
          lr * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + cfg.epsilon);
    }

    TrainRecord rec;
    rec.step = step;
    rec.lr = lr;
    rec.loss = batch_loss;
    for (std::size_t d = 0; d < kNumFields; ++d) rec.field_loss[d] = stats.field_loss(d);
    result.trace.push_back(rec);
    if (on_step) on_step(rec);
  }
  if (!heldout.empty()) result.heldout = evaluate(model, heldout);
  return result;
}

void write_loss_trace_csv(const std::string& path, const std::vector<TrainRecord>& trace) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << "step,lr,loss";
  for (std::size_t d = 0; d < kNumFields; ++d) out << ",loss_" << field_name(d);
  out << '\n';
  out.precision(10);
  for (const auto& r : trace) {
    out << r.step << ',' << r.lr << ',' << r.loss;
    for (double f : r.field_loss) out << ',' << f;
    out << '\n';
  }
}

}  // namespace dpmusic
