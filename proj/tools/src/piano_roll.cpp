#include <algorithm>
#include <sstream>

#include "commands.hpp"
#include "dpmusic/metrics.hpp"

namespace dpmusic::cli {

namespace {

constexpr double kTickWidth = 2.0;
constexpr double kKeyHeight = 6.0;
constexpr double kMargin = 32.0;

std::string color_of(int instrument) {
  if (instrument == kDrumInstrument) return "#555555";
  std::ostringstream c;
  c << "hsl(" << (instrument * 47) % 360 << ",65%,45%)";
  return c.str();
}

}  // namespace

std::string piano_roll_svg(const std::vector<NoteEvent>& events, int resolution, int shade_ticks) {
  int low = 60, high = 72, end = std::max(shade_ticks, 1);
  if (!events.empty()) {
    low = 127;
    high = 0;
  }
  for (const auto& e : events) {
    low = std::min(low, e.pitch);
    high = std::max(high, e.pitch);
    end = std::max(end, onset(e, resolution) + e.duration);
  }
  low = std::max(0, low - 2);
  high = std::min(127, high + 2);
  const int bar = 4 * resolution;
  end = (end + bar - 1) / bar * bar;

  const double roll_h = (high - low + 1) * kKeyHeight;
  const double width = kMargin + end * kTickWidth + 8.0;
  const double height = roll_h + kMargin;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (shade_ticks > 0) {
    svg << "<rect class=\"prompt\" x=\"" << kMargin << "\" y=\"0\" width=\"" << shade_ticks * kTickWidth
        << "\" height=\"" << roll_h << "\" fill=\"#cfcfcf\" fill-opacity=\"0.6\"/>\n";
  }
  for (int t = 0, b = 1; t <= end; t += bar, ++b) {
    const double x = kMargin + t * kTickWidth;
    svg << "<line x1=\"" << x << "\" y1=\"0\" x2=\"" << x << "\" y2=\"" << roll_h
        << "\" stroke=\"#999\" stroke-width=\"0.5\"/>\n";
    if (t < end) {
      svg << "<text x=\"" << x + 2 << "\" y=\"" << roll_h + 14 << "\" font-size=\"10\">" << b << "</text>\n";
    }
  }
  for (int p = low; p <= high; ++p) {
    if (p % 12 != 0) continue;
    svg << "<text x=\"2\" y=\"" << (high - p + 1) * kKeyHeight << "\" font-size=\"9\">C" << p / 12 - 1
        << "</text>\n";
  }
  for (const auto& e : events) {
    svg << "<rect x=\"" << kMargin + onset(e, resolution) * kTickWidth << "\" y=\""
        << (high - e.pitch) * kKeyHeight << "\" width=\"" << std::max(1.0, e.duration * kTickWidth)
        << "\" height=\"" << kKeyHeight - 1 << "\" fill=\"" << color_of(e.instrument) << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace dpmusic::cli
