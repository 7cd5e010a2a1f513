#include "dpmusic/bench.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "dpmusic/error.hpp"
#include "dpmusic/random.hpp"

namespace dpmusic {

ComplexityRow complexity_table(long notes, int fields) {
  if (notes < 0 || fields < 1) throw Error(ErrorCode::kOutOfRange, "complexity_table needs N >= 0, K >= 1");
  return {notes, notes + fields - 1, notes * fields};
}

const char* decode_mode_name(DecodeMode mode) {
  return mode == DecodeMode::kIncremental ? "incremental" : "full-prefix";
}

BenchResult measure_nps(const ModelConfig& config, const ModelParams& params,
                        const DelaySchedule& schedule,
                        std::span<const std::vector<CompoundToken>> prompts,
                        const BenchOptions& options, const std::string& scheme) {
  ModelConfig cfg = config;
  cfg.schedule = schedule;
  const Model model(cfg, params);

  BenchResult result;
  result.scheme = scheme;
  result.mode = decode_mode_name(options.mode);
  const std::size_t timed = prompts.size() > options.warmup ? prompts.size() - options.warmup : 0;
  result.pieces = timed;

  std::vector<double> repeat_nps;
  for (int rep = 0; rep < std::max(options.repeats, 1); ++rep) {
    double nps_sum = 0.0;
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      const TokenGrid prompt = dp_encode(prompts[p], schedule, cfg.vocab);
      DecodeState state(cfg.vocab, schedule, options.sampling, mix_seed(options.seed, p),
                        options.max_steps);
      const auto start = std::chrono::steady_clock::now();
      const Generation gen = generate(model, prompt, state, options.mode);
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      if (p < options.warmup) continue;
      const double secs = elapsed.count();
      result.notes_generated += gen.generated_notes;
      result.wall_seconds += secs;
      result.grid_steps += gen.grid.steps();
      if (gen.generated_notes > 0 && secs > 0.0) nps_sum += gen.generated_notes / secs;
    }
    repeat_nps.push_back(timed > 0 ? nps_sum / static_cast<double>(timed) : 0.0);
  }

  double mean = 0.0;
  for (double v : repeat_nps) mean += v;
  mean /= static_cast<double>(repeat_nps.size());
  double var = 0.0;
  for (double v : repeat_nps) var += (v - mean) * (v - mean);
  var /= static_cast<double>(repeat_nps.size());
  result.nps = mean;
  result.nps_cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  return result;
}

std::string bench_to_markdown(const std::vector<BenchResult>& results, long notes_for_complexity) {
  const auto c = complexity_table(notes_for_complexity);
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "| Scheme | Mode | Complexity | Steps (N=" << notes_for_complexity
      << ") | NPS | CV | Notes | Seconds |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : results) {
    const bool parallel = r.scheme.find("zero") != std::string::npos ||
                          r.scheme.find("parallel") != std::string::npos;
    out << "| " << r.scheme << " | " << r.mode << " | "
        << (parallel ? "O(N^2)" : "O((N+(K-1))^2)") << " | " << (parallel ? c.parallel : c.delay)
        << " | " << r.nps << " | " << r.nps_cv << " | " << r.notes_generated << " | "
        << r.wall_seconds << " |\n";
  }
  return out.str();
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string bench_to_csv(const std::vector<BenchResult>& results) {
  std::ostringstream out;
  out.precision(10);
  out << "scheme,mode,pieces,notes_generated,wall_seconds,nps,nps_cv,grid_steps\n";
  for (const auto& r : results) {
    out << csv_field(r.scheme) << ',' << csv_field(r.mode) << ',' << r.pieces << ',' << r.notes_generated << ','
        << r.wall_seconds << ',' << r.nps << ',' << r.nps_cv << ',' << r.grid_steps << '\n';
  }
  return out.str();
}

}  // namespace dpmusic
