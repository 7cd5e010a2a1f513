#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpmusic/delay_codec.hpp"
#include "dpmusic/midi_io.hpp"
#include "dpmusic/model.hpp"
#include "dpmusic/tokenizer.hpp"

namespace dpmusic {

struct TrainConfig {
  double lr_peak = 3e-4;
  int warmup_steps = 100;
  int batch_size = 16;
  int max_seq_len = 1024;
  int total_steps = 2000;
  std::uint64_t seed = 0;
  // Adam. Neither the betas, epsilon nor clipping come from a reference
  // setup; they are declared defaults.
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  bool augment = true;
  AugmentConfig augmentation;
  int log_every = 50;
};

// Linear warmup to lr_peak, then inverse square root decay.
double lr_at(long step, const TrainConfig& cfg);

struct Batch {
  std::vector<TokenGrid> grids;
  std::vector<int> transpositions;
  std::size_t epoch = 0;
  // Longest grid; shorter grids are implicitly right-padded: trailing pad
  // rows carry no loss and, by causality, cannot change earlier logits.
  std::size_t steps = 0;
};

// Deterministic batch stream: per-epoch shuffle and per-draw transposition
// are derived from the seed only.
class BatchStream {
 public:
  BatchStream(std::vector<std::vector<CompoundToken>> pieces, const TrainConfig& cfg,
              const DelaySchedule& schedule, const FieldVocabulary& vocab);

  Batch next();
  std::size_t epoch() const { return epoch_; }
  std::size_t size() const { return pieces_.size(); }

  // DP-encodes and truncates one piece without augmentation.
  TokenGrid encode(const std::vector<CompoundToken>& piece) const;

 private:
  void reshuffle();

  std::vector<std::vector<CompoundToken>> pieces_;
  TrainConfig cfg_;
  DelaySchedule schedule_;
  FieldVocabulary vocab_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::uint64_t draws_ = 0;
};

std::vector<CompoundToken> load_token_file(const std::string& path);
std::vector<std::vector<CompoundToken>> load_token_files(const std::vector<std::string>& paths);

struct TrainRecord {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::array<double, kNumFields> field_loss{};
};

struct EvalResult {
  double loss = 0.0;
  std::array<double, kNumFields> field_accuracy{};
  std::array<double, kNumFields> field_loss{};

  double min_accuracy() const;
};

// Teacher-forced loss and per-field argmax accuracy, dropout off.
EvalResult evaluate(const Model& model, const std::vector<TokenGrid>& grids);

struct TrainResult {
  std::vector<TrainRecord> trace;
  EvalResult heldout;
};

using TrainCallback = std::function<void(const TrainRecord&)>;

// Adam under lr_at; single-threaded and deterministic given the seed.
// `heldout` (may be empty) is scored once training ends.
TrainResult train(Model& model, BatchStream& batches, const TrainConfig& cfg,
                  const std::vector<TokenGrid>& heldout = {}, const TrainCallback& on_step = {});

// CSV columns: step,lr,loss,loss_type,loss_beat,...,loss_instrument
void write_loss_trace_csv(const std::string& path, const std::vector<TrainRecord>& trace);

}  // namespace dpmusic
