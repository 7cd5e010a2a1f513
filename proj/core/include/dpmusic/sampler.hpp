#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dpmusic/delay_codec.hpp"
#include "dpmusic/model.hpp"
#include "dpmusic/random.hpp"
#include "dpmusic/tokenizer.hpp"

namespace dpmusic {

struct SamplingConfig {
  std::array<int, kNumFields> top_k = {10, 10, 10, 10, 10, 10};  // <= 0 keeps all
  double temperature = 1.0;
  // Withhold end-of-song until it is the only grammatical option, so every
  // piece runs to the step budget. For throughput measurement.
  bool ignore_eos = false;
};

// Running constraint state while decoding a delay-scheduled grid. Tracks
// the partially decoded events so each field can be masked against the
// grammar phase, the event's own type, and the last emitted beat.
class DecodeState {
 public:
  DecodeState(const FieldVocabulary& vocab, const DelaySchedule& schedule, SamplingConfig sampling,
              std::uint64_t seed, std::size_t max_steps = 1024);

  // Fixes (and commits) the first events; their fields are forced, never
  // sampled. Call on a fresh state.
  void set_prompt(std::span<const CompoundToken> prompt);

  // 1-based step that the next sample_step call produces.
  std::size_t step() const { return step_; }
  void set_step(std::size_t step) { step_ = step; }

  GrammarPhase phase() const { return phase_; }
  // Last emitted non-null beat index, 0 before any note.
  int last_beat() const { return last_beat_; }
  bool finished() const;
  std::size_t max_steps() const { return max_steps_; }
  void set_max_steps(std::size_t steps) { max_steps_ = steps; }
  std::size_t prompt_events() const { return prompt_.size(); }
  // Event index carrying end-of-song, 0 while none has been emitted.
  std::size_t end_event() const { return end_event_; }
  // Events 1..typed_events() have a committed type.
  std::size_t typed_events() const { return typed_events_; }

  const std::vector<CompoundToken>& events() const { return events_; }
  bool known(std::size_t event, std::size_t d) const {
    return event >= 1 && event <= known_.size() && known_[event - 1][d];
  }

  const FieldVocabulary& vocab() const { return *vocab_; }
  const DelaySchedule& schedule() const { return schedule_; }
  const SamplingConfig& sampling() const { return sampling_; }
  Rng& rng() { return rng_; }

  // Records field d of event i (1-based) and advances grammar/beat state.
  void commit(std::size_t event, std::size_t d, int value);

 private:
  const FieldVocabulary* vocab_;
  DelaySchedule schedule_;
  SamplingConfig sampling_;
  Rng rng_;
  std::size_t max_steps_;
  std::vector<CompoundToken> prompt_;
  std::vector<CompoundToken> events_;
  std::vector<std::array<bool, kNumFields>> known_;
  GrammarPhase phase_ = GrammarPhase::kExpectStart;
  int last_beat_ = 0;
  std::size_t end_event_ = 0;
  std::size_t typed_events_ = 0;
  std::size_t step_ = 1;
};

// Produces grid row state.step(): pads where the staircase mandates them,
// prompt values where fixed, otherwise masked top-k samples. Advances the
// state by one step.
std::array<int, kNumFields> sample_step(const StepLogits& logits, DecodeState& state);

enum class DecodeMode {
  kFullPrefix,   // re-run the whole prefix every step
  kIncremental,  // key/value cache
};

struct Generation {
  TokenGrid grid;
  std::size_t prompt_events = 0;
  std::size_t generated_steps = 0;
  std::size_t generated_notes = 0;
};

// Continues `prompt_grid` (dp_encode of a token prefix; may be empty) until
// end-of-song plus its delayed-field flush. Values are restricted so that
// the type grammar can still be completed within `max_steps` rows. When
// `type` is not the earliest field, cells of events past end-of-song may
// already have been emitted; they are reset to pads in the returned grid.
Generation generate(const Model& model, const TokenGrid& prompt_grid, DecodeState& state,
                    DecodeMode mode = DecodeMode::kIncremental);

}  // namespace dpmusic
