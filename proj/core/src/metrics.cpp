#include "dpmusic/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "dpmusic/error.hpp"

namespace dpmusic {

namespace {

void require_notes(std::span<const NoteEvent> events) {
  if (events.empty()) throw Error(ErrorCode::kEmptyPiece, "metric needs at least one note");
}

std::array<std::size_t, 12> pitch_class_histogram(std::span<const NoteEvent> events) {
  std::array<std::size_t, 12> counts{};
  for (const auto& e : events) ++counts[static_cast<std::size_t>(e.pitch % 12)];
  return counts;
}

constexpr std::array<int, 7> kMajor = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<int, 7> kMinor = {0, 2, 3, 5, 7, 8, 10};

}  // namespace

double pitch_class_entropy(std::span<const NoteEvent> events) {
  require_notes(events);
  const auto counts = pitch_class_histogram(events);
  const auto n = static_cast<double>(events.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

double scale_consistency(std::span<const NoteEvent> events) {
  require_notes(events);
  const auto counts = pitch_class_histogram(events);
  std::size_t best = 0;
  for (const auto* scale : {&kMajor, &kMinor}) {
    for (int root = 0; root < 12; ++root) {
      std::size_t in = 0;
      for (int step : *scale) in += counts[static_cast<std::size_t>((root + step) % 12)];
      best = std::max(best, in);
    }
  }
  return static_cast<double>(best) / static_cast<double>(events.size());
}

std::size_t bar_count(std::span<const NoteEvent> events, int bar_length) {
  if (bar_length < 1) throw Error(ErrorCode::kOutOfRange, "bar_length must be >= 1");
  long end = 0;
  for (const auto& e : events) end = std::max(end, static_cast<long>(onset(e, 12)) + e.duration);
  if (end <= 0) return 0;
  return static_cast<std::size_t>((end - 1) / bar_length + 1);
}

double groove_consistency(std::span<const NoteEvent> events, int bar_length) {
  const std::size_t bars = bar_count(events, bar_length);
  if (bars < 2) {
    throw Error(ErrorCode::kTooShort, "groove consistency needs at least 2 bars, got " +
                                          std::to_string(bars));
  }
  const auto len = static_cast<std::size_t>(bar_length);
  std::vector<char> grid(bars * len, 0);
  for (const auto& e : events) grid[static_cast<std::size_t>(onset(e, 12))] = 1;
  std::size_t distance = 0;
  for (std::size_t b = 0; b + 1 < bars; ++b) {
    for (std::size_t k = 0; k < len; ++k) distance += grid[b * len + k] != grid[(b + 1) * len + k];
  }
  return 1.0 - static_cast<double>(distance) / static_cast<double>(len * (bars - 1));
}

MetricReport evaluate_piece(std::span<const NoteEvent> events, int bar_length) {
  MetricReport r;
  r.pitch_class_entropy = pitch_class_entropy(events);
  r.scale_consistency = scale_consistency(events);
  r.n_notes = events.size();
  r.n_bars = bar_count(events, bar_length);
  r.groove_consistency = r.n_bars >= 2 ? groove_consistency(events, bar_length)
                                       : std::numeric_limits<double>::quiet_NaN();
  return r;
}

std::string metrics_to_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  out.precision(10);
  out << "piece,pitch_class_entropy,scale_consistency,groove_consistency,n_notes,n_bars\n";
  const auto cell = [&](double v) -> std::ostream& {
    if (!std::isnan(v)) out << v;
    return out;
  };
  std::array<double, 5> sum{}, sq{};
  std::array<std::size_t, 5> defined{};
  for (const auto& r : reports) {
    const std::array<double, 5> v = {r.pitch_class_entropy, r.scale_consistency,
                                     r.groove_consistency, static_cast<double>(r.n_notes),
                                     static_cast<double>(r.n_bars)};
    out << r.name;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out << ',';
      cell(v[i]);
      if (std::isnan(v[i])) continue;
      sum[i] += v[i];
      sq[i] += v[i] * v[i];
      ++defined[i];
    }
    out << '\n';
  }
  if (reports.empty()) return out.str();
  // Undefined entries (groove of a piece under two bars) are left out.
  std::array<double, 5> mean{};
  out << "mean";
  for (std::size_t i = 0; i < sum.size(); ++i) {
    mean[i] = defined[i] ? sum[i] / static_cast<double>(defined[i]) : std::nan("");
    out << ',';
    cell(mean[i]);
  }
  out << "\nstd";
  for (std::size_t i = 0; i < sum.size(); ++i) {
    out << ',';
    cell(defined[i] ? std::sqrt(std::max(0.0, sq[i] / static_cast<double>(defined[i]) - mean[i] * mean[i]))
                    : std::nan(""));
  }
  out << '\n';
  return out.str();
}

}  // namespace dpmusic
