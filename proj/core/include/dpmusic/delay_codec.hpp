#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpmusic/tokenizer.hpp"

namespace dpmusic {

// Per-field step offsets: field d of event i is emitted at step i + delay[d].
struct DelaySchedule {
  std::array<int, kNumFields> delays{};

  static DelaySchedule uniform() { return {{0, 1, 2, 3, 4, 5}}; }
  static DelaySchedule zero() { return {}; }

  int delay(std::size_t d) const { return delays[d]; }
  int max_delay() const;
  void validate() const;
  std::uint16_t hash16() const;
  std::string to_string() const;

  // Field processing order within one step: ascending (delay, field).
  std::array<std::size_t, kNumFields> field_order() const;

  friend bool operator==(const DelaySchedule&, const DelaySchedule&) = default;
};

DelaySchedule parse_schedule(const std::string& text);

// T x K matrix of field indices, row-major. Rows are 0-based in storage;
// the public formulas use 1-based steps and events.
class TokenGrid {
 public:
  TokenGrid() = default;
  TokenGrid(std::size_t steps, DelaySchedule schedule)
      : steps_(steps), schedule_(schedule), cells_(steps * kNumFields, 0) {}

  std::size_t steps() const { return steps_; }
  const DelaySchedule& schedule() const { return schedule_; }

  int cell(std::size_t row, std::size_t d) const { return cells_[row * kNumFields + d]; }
  int& cell(std::size_t row, std::size_t d) { return cells_[row * kNumFields + d]; }

  std::span<const int, kNumFields> row(std::size_t r) const {
    return std::span<const int, kNumFields>(cells_.data() + r * kNumFields, kNumFields);
  }
  std::span<int, kNumFields> row(std::size_t r) {
    return std::span<int, kNumFields>(cells_.data() + r * kNumFields, kNumFields);
  }

  void append_row(std::span<const int, kNumFields> values);
  // Keeps the first `steps` rows.
  void truncate(std::size_t steps);

  const std::vector<int>& cells() const { return cells_; }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;

 private:
  std::size_t steps_ = 0;
  DelaySchedule schedule_;
  std::vector<int> cells_;
};

// Rows = N + max delay, including N = 0 (all-pad flush rows).
TokenGrid dp_encode(std::span<const CompoundToken> tokens, const DelaySchedule& schedule,
                    const FieldVocabulary& vocab);

std::vector<CompoundToken> dp_decode(const TokenGrid& grid, const FieldVocabulary& vocab);

// Event (1-based) whose field d occupies step t (1-based); may be out of
// [1, N] for pad cells.
inline long event_at(const DelaySchedule& s, long step, std::size_t d) {
  return step - s.delay(d);
}

struct EventField {
  long event;
  std::size_t field;

  friend auto operator<=>(const EventField&, const EventField&) = default;
};

// Context stated for predicting cell (t, d) of event i = t - delay[d]:
// the fields of event i with strictly smaller delay plus every field of
// events 1..i-1 (bounded by the grid's event count). Sorted.
std::vector<EventField> conditioning_context(const TokenGrid& grid, std::size_t step,
                                             std::size_t d);

// Cells a causal model can see when predicting any cell of step t: every
// (event, field) emitted at a step < t. Sorted.
std::vector<EventField> attention_reach(const DelaySchedule& schedule, std::size_t num_events,
                                        std::size_t step);

// Binary layout (little-endian):
//   u16 magic 0x4744 ("DG"), u16 K, u16 T, u16 schedule hash,
//   then T*K u16 cells, row-major.
std::vector<std::uint8_t> grid_to_binary(const TokenGrid& grid);
TokenGrid grid_from_binary(std::span<const std::uint8_t> bytes, const DelaySchedule& schedule);

}  // namespace dpmusic
