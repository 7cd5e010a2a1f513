#include "dpmusic/delay_codec.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "dpmusic/error.hpp"

namespace dpmusic {

namespace {

constexpr std::uint16_t kGridMagic = 0x4744;

void put_u16le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

std::uint16_t get_u16le(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

}  // namespace

int DelaySchedule::max_delay() const { return *std::max_element(delays.begin(), delays.end()); }

void DelaySchedule::validate() const {
  for (std::size_t d = 0; d < kNumFields; ++d) {
    if (delays[d] < 0) {
      throw Error(ErrorCode::kInvalidSchedule,
                  "negative delay for field " + std::string(field_name(d)));
    }
  }
}

std::uint16_t DelaySchedule::hash16() const {
  std::uint32_t h = 2166136261u;
  for (int v : delays) {
    h ^= static_cast<std::uint32_t>(v);
    h *= 16777619u;
  }
  return static_cast<std::uint16_t>((h >> 16) ^ (h & 0xFFFF));
}

std::string DelaySchedule::to_string() const {
  std::string s;
  for (std::size_t d = 0; d < kNumFields; ++d) {
    if (d) s += ',';
    s += std::to_string(delays[d]);
  }
  return s;
}

std::array<std::size_t, kNumFields> DelaySchedule::field_order() const {
  std::array<std::size_t, kNumFields> order{};
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return delays[a] < delays[b]; });
  return order;
}

DelaySchedule parse_schedule(const std::string& text) {
  if (text == "uniform" || text == "dp") return DelaySchedule::uniform();
  if (text == "zero" || text == "parallel") return DelaySchedule::zero();
  DelaySchedule s;
  std::stringstream in(text);
  std::string item;
  std::size_t d = 0;
  while (std::getline(in, item, ',')) {
    if (d >= kNumFields) throw Error(ErrorCode::kInvalidSchedule, "more than 6 delays in '" + text + "'");
    try {
      std::size_t used = 0;
      s.delays[d] = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidSchedule, "bad delay '" + item + "'");
    }
    ++d;
  }
  if (d != kNumFields) {
    throw Error(ErrorCode::kInvalidSchedule, "delay undefined for field " + std::string(field_name(d)));
  }
  s.validate();
  return s;
}

void TokenGrid::append_row(std::span<const int, kNumFields> values) {
  cells_.insert(cells_.end(), values.begin(), values.end());
  ++steps_;
}

void TokenGrid::truncate(std::size_t steps) {
  if (steps >= steps_) return;
  steps_ = steps;
  cells_.resize(steps * kNumFields);
}

TokenGrid dp_encode(std::span<const CompoundToken> tokens, const DelaySchedule& schedule,
                    const FieldVocabulary& vocab) {
  schedule.validate();
  const std::size_t n = tokens.size();
  const std::size_t steps = n + static_cast<std::size_t>(schedule.max_delay());
  TokenGrid grid(steps, schedule);
  for (std::size_t t = 1; t <= steps; ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const long i = event_at(schedule, static_cast<long>(t), d);
      grid.cell(t - 1, d) = (i >= 1 && i <= static_cast<long>(n))
                                ? tokens[static_cast<std::size_t>(i - 1)][d]
                                : vocab.pad_id(d);
    }
  }
  return grid;
}

std::vector<CompoundToken> dp_decode(const TokenGrid& grid, const FieldVocabulary& vocab) {
  const auto& schedule = grid.schedule();
  schedule.validate();
  const auto max_delay = static_cast<std::size_t>(schedule.max_delay());
  if (grid.steps() < max_delay) {
    throw Error(ErrorCode::kMalformedGrid, "grid has " + std::to_string(grid.steps()) +
                                               " steps, fewer than the flush length " +
                                               std::to_string(max_delay));
  }
  const std::size_t n = grid.steps() - max_delay;
  std::vector<CompoundToken> tokens(n);
  for (std::size_t t = 1; t <= grid.steps(); ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const long i = event_at(schedule, static_cast<long>(t), d);
      const int v = grid.cell(t - 1, d);
      const bool mandated = i >= 1 && i <= static_cast<long>(n);
      if (mandated == (v == vocab.pad_id(d))) {
        throw Error(ErrorCode::kMalformedGrid,
                    std::string(mandated ? "pad in value" : "value in pad") + " cell [" +
                        std::to_string(t) + "][" + std::string(field_name(d)) + "]");
      }
      if (mandated) tokens[static_cast<std::size_t>(i - 1)][d] = v;
    }
  }
  return tokens;
}

std::vector<EventField> conditioning_context(const TokenGrid& grid, std::size_t step,
                                             std::size_t d) {
  if (step < 1 || step > grid.steps() || d >= kNumFields) {
    throw Error(ErrorCode::kOutOfRange, "cell [" + std::to_string(step) + "][" +
                                            std::to_string(d) + "] outside grid");
  }
  const auto& s = grid.schedule();
  const long n = static_cast<long>(grid.steps()) - s.max_delay();
  const long i = event_at(s, static_cast<long>(step), d);
  std::vector<EventField> ctx;
  for (long j = 1; j < i && j <= n; ++j) {
    for (std::size_t f = 0; f < kNumFields; ++f) ctx.push_back({j, f});
  }
  if (i >= 1 && i <= n) {
    for (std::size_t f = 0; f < kNumFields; ++f) {
      if (s.delay(f) < s.delay(d)) ctx.push_back({i, f});
    }
  }
  std::sort(ctx.begin(), ctx.end());
  return ctx;
}

std::vector<EventField> attention_reach(const DelaySchedule& schedule, std::size_t num_events,
                                        std::size_t step) {
  std::vector<EventField> reach;
  for (long j = 1; j <= static_cast<long>(num_events); ++j) {
    for (std::size_t f = 0; f < kNumFields; ++f) {
      if (j + schedule.delay(f) < static_cast<long>(step)) reach.push_back({j, f});
    }
  }
  return reach;
}

std::vector<std::uint8_t> grid_to_binary(const TokenGrid& grid) {
  if (grid.steps() > 0xFFFF) throw Error(ErrorCode::kVocabOverflow, "grid exceeds 65535 steps");
  std::vector<std::uint8_t> out;
  out.reserve(8 + grid.cells().size() * 2);
  put_u16le(out, kGridMagic);
  put_u16le(out, kNumFields);
  put_u16le(out, static_cast<std::uint32_t>(grid.steps()));
  put_u16le(out, grid.schedule().hash16());
  for (int v : grid.cells()) {
    if (v < 0 || v > 0xFFFF) throw Error(ErrorCode::kVocabOverflow, "cell value exceeds u16");
    put_u16le(out, static_cast<std::uint32_t>(v));
  }
  return out;
}

TokenGrid grid_from_binary(std::span<const std::uint8_t> bytes, const DelaySchedule& schedule) {
  if (bytes.size() < 8) throw Error(ErrorCode::kBadFormat, "grid file shorter than its header");
  if (get_u16le(bytes, 0) != kGridMagic) throw Error(ErrorCode::kBadFormat, "bad grid magic");
  if (get_u16le(bytes, 2) != kNumFields) throw Error(ErrorCode::kBadFormat, "grid field count is not 6");
  const std::size_t steps = get_u16le(bytes, 4);
  if (get_u16le(bytes, 6) != schedule.hash16()) {
    throw Error(ErrorCode::kCheckpointMismatch,
                "grid was encoded with a different delay schedule than " + schedule.to_string());
  }
  if (bytes.size() != 8 + steps * kNumFields * 2) {
    throw Error(ErrorCode::kBadFormat, "grid payload size does not match header");
  }
  TokenGrid grid(steps, schedule);
  for (std::size_t r = 0; r < steps; ++r) {
    for (std::size_t d = 0; d < kNumFields; ++d) {
      grid.cell(r, d) = get_u16le(bytes, 8 + (r * kNumFields + d) * 2);
    }
  }
  return grid;
}

}  // namespace dpmusic
