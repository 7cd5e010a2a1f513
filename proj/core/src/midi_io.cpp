#include "dpmusic/midi_io.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>

#include "dpmusic/error.hpp"
#include "dpmusic/random.hpp"

namespace dpmusic {

namespace {

constexpr int kPercussionChannel = 9;
constexpr std::uint8_t kDefaultVelocity = 64;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  std::uint8_t peek() const {
    if (done()) throw Error(ErrorCode::kMalformedFile, "unexpected end of data");
    return bytes_[pos_];
  }

  std::uint16_t u16be() {
    need(2);
    const auto v = static_cast<std::uint16_t>((bytes_[pos_] << 8) | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32be() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }

  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return v;
    }
    throw Error(ErrorCode::kMalformedFile, "variable-length quantity longer than 4 bytes");
  }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw Error(ErrorCode::kMalformedFile,
                  "truncated data at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

enum class RawKind { kNoteOn, kNoteOff, kProgram };

struct RawEvent {
  std::uint64_t tick;
  int track;
  std::size_t seq;
  RawKind kind;
  int channel;
  int data1;
};

int data_bytes_for(std::uint8_t status) {
  switch (status & 0xF0) {
    case 0xC0:
    case 0xD0:
      return 1;
    default:
      return 2;
  }
}

void parse_track(std::span<const std::uint8_t> chunk, int track, std::vector<RawEvent>& out) {
  ByteReader in(chunk);
  std::uint64_t tick = 0;
  std::uint8_t running = 0;
  std::size_t seq = 0;
  while (!in.done()) {
    tick += in.vlq();
    std::uint8_t status = in.peek();
    if (status & 0x80) {
      in.u8();
    } else if (running != 0) {
      status = running;
    } else {
      throw Error(ErrorCode::kMalformedFile, "data byte without running status");
    }

    if (status == 0xFF) {
      const std::uint8_t type = in.u8();
      const std::uint32_t len = in.vlq();
      in.skip(len);
      if (type == 0x2F) break;
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      in.skip(in.vlq());
      running = 0;
      continue;
    }
    if (status >= 0xF0) {
      throw Error(ErrorCode::kMalformedFile, "unexpected system message in track");
    }
    running = status;

    const int channel = status & 0x0F;
    const int d1 = in.u8() & 0x7F;
    const int d2 = data_bytes_for(status) == 2 ? (in.u8() & 0x7F) : 0;
    switch (status & 0xF0) {
      case 0x90:
        out.push_back({tick, track, seq++, d2 > 0 ? RawKind::kNoteOn : RawKind::kNoteOff,
                       channel, d1});
        break;
      case 0x80:
        out.push_back({tick, track, seq++, RawKind::kNoteOff, channel, d1});
        break;
      case 0xC0:
        out.push_back({tick, track, seq++, RawKind::kProgram, channel, d1});
        break;
      default:
        break;
    }
  }
}

// Nearest grid tick, ties toward the later tick.
std::int64_t quantize(std::uint64_t ticks, int resolution, int ppq) {
  const auto num = 2 * static_cast<std::int64_t>(ticks) * resolution + ppq;
  return num / (2 * static_cast<std::int64_t>(ppq));
}

void put_u16be(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7F));
  while (n > 0) out.push_back(buf[--n]);
}

void put_chunk(std::vector<std::uint8_t>& out, const char* id, const std::vector<std::uint8_t>& body) {
  out.insert(out.end(), id, id + 4);
  put_u32be(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
}

struct TrackMessage {
  std::uint32_t tick;
  int order;  // 0 = note-off, 1 = program, 2 = note-on
  std::size_t seq;
  std::uint8_t bytes[3];
  int size;
};

std::vector<std::uint8_t> encode_track(std::vector<TrackMessage> messages) {
  std::stable_sort(messages.begin(), messages.end(), [](const auto& a, const auto& b) {
    return std::tie(a.tick, a.order, a.seq) < std::tie(b.tick, b.order, b.seq);
  });
  std::vector<std::uint8_t> body;
  std::uint32_t last = 0;
  for (const auto& m : messages) {
    put_vlq(body, m.tick - last);
    last = m.tick;
    body.insert(body.end(), m.bytes, m.bytes + m.size);
  }
  put_vlq(body, 0);
  body.insert(body.end(), {0xFF, 0x2F, 0x00});
  return body;
}

void check_bounds(const NoteEvent& e, const QuantizationConfig& cfg) {
  const bool ok = e.beat >= 0 && e.beat < cfg.max_beat && e.position >= 0 &&
                  e.position < cfg.resolution && e.pitch >= 0 && e.pitch <= 127 &&
                  e.duration >= 1 && e.duration < cfg.max_duration && e.instrument >= 0 &&
                  e.instrument < kNumInstruments;
  if (!ok) {
    throw Error(ErrorCode::kVocabOverflow,
                "note (beat " + std::to_string(e.beat) + ", pos " + std::to_string(e.position) +
                    ", pitch " + std::to_string(e.pitch) + ", dur " +
                    std::to_string(e.duration) + ", inst " + std::to_string(e.instrument) +
                    ") outside configured bounds");
  }
}

}  // namespace

bool canonical_less(const NoteEvent& a, const NoteEvent& b) {
  // position < resolution, so (beat, position) orders like onset.
  return std::tie(a.beat, a.position, a.instrument, a.pitch, a.duration) <
         std::tie(b.beat, b.position, b.instrument, b.pitch, b.duration);
}

void sort_canonical(std::vector<NoteEvent>& events) {
  std::stable_sort(events.begin(), events.end(), canonical_less);
}

int instrument_class(int program, int channel) {
  if (channel == kPercussionChannel) return kDrumInstrument;
  return std::clamp(program, 0, 127);
}

std::vector<NoteEvent> parse_midi(std::span<const std::uint8_t> bytes,
                                  const QuantizationConfig& cfg, ParseStats* stats) {
  ByteReader in(bytes);
  if (in.remaining() < 14) throw Error(ErrorCode::kMalformedFile, "file too short for header");
  const auto id = in.take(4);
  if (!std::equal(id.begin(), id.end(), "MThd")) {
    throw Error(ErrorCode::kMalformedFile, "missing MThd header");
  }
  const std::uint32_t header_len = in.u32be();
  if (header_len < 6) throw Error(ErrorCode::kMalformedFile, "header chunk shorter than 6 bytes");
  const std::uint16_t format = in.u16be();
  in.u16be();  // track count; the chunk walk below is authoritative
  const std::uint16_t division = in.u16be();
  in.skip(header_len - 6);
  if (format == 2) throw Error(ErrorCode::kUnsupportedFormat, "SMF format 2");
  if (format > 2) throw Error(ErrorCode::kMalformedFile, "unknown SMF format " + std::to_string(format));
  if (division & 0x8000) throw Error(ErrorCode::kUnsupportedFormat, "SMPTE time division");
  if (division == 0) throw Error(ErrorCode::kMalformedFile, "zero ticks per quarter note");
  const int ppq = division;

  std::vector<RawEvent> raw;
  int track = 0;
  while (!in.done()) {
    if (in.remaining() < 8) throw Error(ErrorCode::kMalformedFile, "truncated chunk header");
    const auto chunk_id = in.take(4);
    const std::uint32_t len = in.u32be();
    if (len > in.remaining()) {
      throw Error(ErrorCode::kMalformedFile, "chunk length " + std::to_string(len) +
                                                 " exceeds file size");
    }
    const auto body = in.take(len);
    if (std::equal(chunk_id.begin(), chunk_id.end(), "MTrk")) parse_track(body, track++, raw);
  }

  std::stable_sort(raw.begin(), raw.end(), [](const RawEvent& a, const RawEvent& b) {
    return std::tie(a.tick, a.track, a.seq) < std::tie(b.tick, b.track, b.seq);
  });

  struct Open {
    std::uint64_t tick;
    int instrument;
  };
  std::array<int, 16> program{};
  std::map<std::tuple<int, int, int>, std::deque<Open>> open;
  std::vector<NoteEvent> events;
  ParseStats local;
  for (const auto& ev : raw) {
    switch (ev.kind) {
      case RawKind::kProgram:
        program[ev.channel] = ev.data1;
        break;
      case RawKind::kNoteOn:
        open[{ev.track, ev.channel, ev.data1}].push_back(
            {ev.tick, instrument_class(program[ev.channel], ev.channel)});
        break;
      case RawKind::kNoteOff: {
        auto it = open.find({ev.track, ev.channel, ev.data1});
        if (it == open.end() || it->second.empty()) break;
        const Open start = it->second.front();
        it->second.pop_front();
        ++local.notes_seen;
        const auto on = quantize(start.tick, cfg.resolution, ppq);
        auto dur = quantize(ev.tick - start.tick, cfg.resolution, ppq);
        dur = std::max<std::int64_t>(dur, 1);
        if (dur >= cfg.max_duration) {
          dur = cfg.max_duration - 1;
          ++local.clamped_duration;
        }
        const auto beat = on / cfg.resolution;
        if (beat >= cfg.max_beat) {
          ++local.dropped_beyond_max_beat;
          break;
        }
        events.push_back({static_cast<int>(beat), static_cast<int>(on % cfg.resolution),
                          ev.data1, static_cast<int>(dur), start.instrument});
        break;
      }
    }
  }
  for (const auto& [key, q] : open) local.unmatched_note_on += q.size();
  if (stats) *stats = local;
  if (events.empty()) throw Error(ErrorCode::kEmptyPiece, "no notes after quantization");
  sort_canonical(events);
  return events;
}

std::vector<std::uint8_t> write_midi(const std::vector<NoteEvent>& events,
                                     const QuantizationConfig& cfg) {
  if (events.empty()) throw Error(ErrorCode::kEmptyPiece, "nothing to write");
  for (const auto& e : events) check_bounds(e, cfg);

  std::vector<NoteEvent> sorted = events;
  sort_canonical(sorted);
  std::map<int, std::vector<NoteEvent>> by_instrument;
  for (const auto& e : sorted) by_instrument[e.instrument].push_back(e);

  const int ticks_per_step = 40;
  const int ppq = cfg.resolution * ticks_per_step;
  if (ppq > 0x7FFF) throw Error(ErrorCode::kVocabOverflow, "resolution too large for SMF division");

  std::size_t melodic = 0;
  for (const auto& [inst, notes] : by_instrument) melodic += inst != kDrumInstrument;
  const bool shared_channels = melodic > 15;

  std::vector<std::vector<std::uint8_t>> tracks;
  {
    std::vector<std::uint8_t> conductor;
    // 4/4 time signature and 120 bpm; neither affects re-parsing.
    conductor.insert(conductor.end(), {0x00, 0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08});
    conductor.insert(conductor.end(), {0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20});
    conductor.insert(conductor.end(), {0x00, 0xFF, 0x2F, 0x00});
    tracks.push_back(std::move(conductor));
  }

  int next_channel = 0;
  for (const auto& [inst, notes] : by_instrument) {
    int channel = kPercussionChannel;
    if (inst != kDrumInstrument) {
      channel = next_channel;
      next_channel = (next_channel + 1) % 16;
      if (next_channel == kPercussionChannel) ++next_channel;
    }
    const auto ch = static_cast<std::uint8_t>(channel);
    const auto program_change = [&](std::uint32_t tick, std::size_t seq) {
      return TrackMessage{tick, 1, seq, {static_cast<std::uint8_t>(0xC0 | ch),
                                         static_cast<std::uint8_t>(inst), 0}, 2};
    };
    std::vector<TrackMessage> messages;
    if (inst != kDrumInstrument) messages.push_back(program_change(0, 0));
    std::size_t seq = 1;
    for (const auto& n : notes) {
      const auto on = static_cast<std::uint32_t>(onset(n, cfg.resolution) * ticks_per_step);
      const auto off = on + static_cast<std::uint32_t>(n.duration * ticks_per_step);
      const auto key = static_cast<std::uint8_t>(n.pitch);
      if (shared_channels && inst != kDrumInstrument) {
        // Program precedes its note-on at the same tick.
        messages.push_back({on, 2, seq++, {static_cast<std::uint8_t>(0xC0 | ch),
                                           static_cast<std::uint8_t>(inst), 0}, 2});
      }
      messages.push_back({on, 2, seq++, {static_cast<std::uint8_t>(0x90 | ch), key,
                                         kDefaultVelocity}, 3});
      messages.push_back({off, 0, seq++, {static_cast<std::uint8_t>(0x80 | ch), key,
                                          kDefaultVelocity}, 3});
    }
    tracks.push_back(encode_track(std::move(messages)));
  }

  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> header;
  put_u16be(header, 1);
  put_u16be(header, static_cast<std::uint16_t>(tracks.size()));
  put_u16be(header, static_cast<std::uint16_t>(ppq));
  put_chunk(out, "MThd", header);
  for (const auto& t : tracks) put_chunk(out, "MTrk", t);
  return out;
}

TransposeResult transpose(const std::vector<NoteEvent>& events, int semitones) {
  TransposeResult result;
  result.events.reserve(events.size());
  for (auto e : events) {
    e.pitch += semitones;
    if (e.pitch < 0 || e.pitch > 127) {
      ++result.dropped;
      continue;
    }
    result.events.push_back(e);
  }
  return result;
}

int draw_transposition(const AugmentConfig& cfg, std::uint64_t draw_index) {
  if (cfg.transpose_low > cfg.transpose_high) {
    throw Error(ErrorCode::kOutOfRange, "transpose_low > transpose_high");
  }
  Rng rng(mix_seed(cfg.seed, draw_index));
  return static_cast<int>(rng.uniform_int(cfg.transpose_low, cfg.transpose_high));
}

DatasetSplit split_dataset(const std::vector<std::string>& piece_ids, const SplitRatios& ratios,
                           std::uint64_t seed) {
  if (piece_ids.size() < 10) {
    throw Error(ErrorCode::kTooFewPieces,
                "need at least 10 pieces, got " + std::to_string(piece_ids.size()));
  }
  if (std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9 || ratios.train < 0 ||
      ratios.valid < 0 || ratios.test < 0) {
    throw Error(ErrorCode::kOutOfRange, "split ratios must be non-negative and sum to 1");
  }
  std::vector<std::string> ids = piece_ids;
  Rng rng(seed);
  rng.shuffle(ids);

  const double n = static_cast<double>(ids.size());
  // The epsilon guards products like 0.1 * 30 landing just below an integer.
  const auto n_valid = static_cast<std::size_t>(std::floor(ratios.valid * n + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n + 1e-9));
  const std::size_t n_train = ids.size() - n_valid - n_test;

  DatasetSplit split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.valid.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                     ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), ids.end());
  return split;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

}  // namespace dpmusic
