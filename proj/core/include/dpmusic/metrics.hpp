#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dpmusic/midi_io.hpp"

namespace dpmusic {

constexpr int kBarLength = 48;  // 4 beats at 12 ticks per beat

// Shannon entropy in bits of the 12-bin pitch-class histogram. Drums
// count like any other instrument.
double pitch_class_entropy(std::span<const NoteEvent> events);

// Best in-scale fraction over the 12 major and 12 natural-minor scales.
double scale_consistency(std::span<const NoteEvent> events);

// 1 minus the mean normalized Hamming distance between the onset patterns
// of consecutive bars. Bars run from tick 0 to the end of the last note.
double groove_consistency(std::span<const NoteEvent> events, int bar_length = kBarLength);

// Bars spanned from tick 0 to the latest note end.
std::size_t bar_count(std::span<const NoteEvent> events, int bar_length = kBarLength);

struct MetricReport {
  std::string name;
  double pitch_class_entropy = 0.0;
  double scale_consistency = 0.0;
  double groove_consistency = 0.0;
  std::size_t n_notes = 0;
  std::size_t n_bars = 0;
};

// groove_consistency is NaN for pieces under two bars.
MetricReport evaluate_piece(std::span<const NoteEvent> events, int bar_length = kBarLength);

// Per-piece rows followed by "mean" and "std" rows (population std). NaN
// cells are written empty and left out of the footer.
std::string metrics_to_csv(const std::vector<MetricReport>& reports);

}  // namespace dpmusic
