#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpmusic/delay_codec.hpp"
#include "dpmusic/model.hpp"
#include "dpmusic/sampler.hpp"
#include "dpmusic/tokenizer.hpp"

namespace dpmusic {

// Decode step counts for N notes with K fields.
struct ComplexityRow {
  long parallel = 0;   // N
  long delay = 0;      // N + K - 1
  long flattened = 0;  // N * K
};

ComplexityRow complexity_table(long notes, int fields = kNumFields);

struct BenchOptions {
  std::size_t max_steps = 1024;
  std::uint64_t seed = 0;
  DecodeMode mode = DecodeMode::kFullPrefix;
  int repeats = 1;
  std::size_t warmup = 2;  // leading prompts generated but not timed
  SamplingConfig sampling;
};

struct BenchResult {
  std::string scheme;
  std::string mode;
  std::size_t pieces = 0;           // timed pieces per repeat
  std::size_t notes_generated = 0;  // summed over timed pieces and repeats
  double wall_seconds = 0.0;        // generation loop only
  double nps = 0.0;                 // mean of per-piece notes/second
  double nps_cv = 0.0;              // across repeats, 0 for a single repeat
  std::size_t grid_steps = 0;       // summed over timed pieces and repeats

  double aggregate_nps() const { return wall_seconds > 0.0 ? notes_generated / wall_seconds : 0.0; }
};

// Times generate() on each prompt with the schedule swapped into a model
// sharing `params`. Prompts, seeds and parameters are identical across
// calls that differ only in `schedule`.
BenchResult measure_nps(const ModelConfig& config, const ModelParams& params,
                        const DelaySchedule& schedule,
                        std::span<const std::vector<CompoundToken>> prompts,
                        const BenchOptions& options, const std::string& scheme);

std::string bench_to_markdown(const std::vector<BenchResult>& results, long notes_for_complexity);
std::string bench_to_csv(const std::vector<BenchResult>& results);

const char* decode_mode_name(DecodeMode mode);

}  // namespace dpmusic
