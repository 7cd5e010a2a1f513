#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dpmusic {

// One quantized note. Onset is beat * resolution + position.
struct NoteEvent {
  int beat = 0;
  int position = 0;
  int pitch = 0;
  int duration = 1;
  int instrument = 0;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct QuantizationConfig {
  int resolution = 12;
  int max_beat = 256;
  int max_duration = 384;
};

struct AugmentConfig {
  int transpose_low = -5;
  int transpose_high = 6;
  std::uint64_t seed = 0;
};

inline constexpr int kDrumInstrument = 128;
inline constexpr int kNumInstruments = 129;

inline int onset(const NoteEvent& e, int resolution = 12) {
  return e.beat * resolution + e.position;
}

// Canonical corpus order: (onset, instrument, pitch, duration).
bool canonical_less(const NoteEvent& a, const NoteEvent& b);
void sort_canonical(std::vector<NoteEvent>& events);

// Maps a General MIDI program (0-127) and channel to an instrument class.
// Channel 9 is the percussion channel and maps to kDrumInstrument.
int instrument_class(int program, int channel);

struct ParseStats {
  std::size_t notes_seen = 0;
  std::size_t dropped_beyond_max_beat = 0;
  std::size_t clamped_duration = 0;
  std::size_t unmatched_note_on = 0;
};

std::vector<NoteEvent> parse_midi(std::span<const std::uint8_t> bytes,
                                  const QuantizationConfig& cfg,
                                  ParseStats* stats = nullptr);

std::vector<std::uint8_t> write_midi(const std::vector<NoteEvent>& events,
                                     const QuantizationConfig& cfg);

struct TransposeResult {
  std::vector<NoteEvent> events;
  std::size_t dropped = 0;
};

TransposeResult transpose(const std::vector<NoteEvent>& events, int semitones);

// Uniform integer in [low, high] from a seeded stream.
int draw_transposition(const AugmentConfig& cfg, std::uint64_t draw_index);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
};

DatasetSplit split_dataset(const std::vector<std::string>& piece_ids,
                           const SplitRatios& ratios, std::uint64_t seed);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace dpmusic
