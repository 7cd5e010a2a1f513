#pragma once

#include <vector>

#include "dpmusic/random.hpp"
#include "dpmusic/tokenizer.hpp"

namespace dpmusic::bench {

// Dense random piece with `notes` notes over 16 instruments; up to about
// 2500 notes fit the default beat range.
inline std::vector<CompoundToken> random_piece(int notes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NoteEvent> events;
  int tick = 0;
  for (int i = 0; i < notes; ++i) {
    tick += static_cast<int>(rng.uniform_int(0, 2));
    events.push_back({tick / 12, tick % 12, static_cast<int>(rng.uniform_int(36, 96)),
                      static_cast<int>(rng.uniform_int(1, 24)), static_cast<int>(rng.uniform_int(0, 15))});
  }
  sort_canonical(events);
  return encode_events(events, FieldVocabulary());
}

}  // namespace dpmusic::bench
