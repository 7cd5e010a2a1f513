#include "commands.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <json.hpp>

#include "dpmusic/bench.hpp"
#include "dpmusic/checkpoint.hpp"
#include "dpmusic/delay_codec.hpp"
#include "dpmusic/metrics.hpp"
#include "dpmusic/sampler.hpp"
#include "dpmusic/tokenizer.hpp"
#include "dpmusic/training.hpp"

namespace dpmusic::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidSchedule:
    case ErrorCode::kOutOfRange:
      return kExitUsage;
    case ErrorCode::kPadLeak:
    case ErrorCode::kNoFeasibleValue:
    case ErrorCode::kEmptyGrid:
    case ErrorCode::kUnsortedInput:
    case ErrorCode::kNonFiniteLoss:
      return kExitInternal;
    default:
      return kExitData;
  }
}

std::vector<NoteEvent> truncate_prompt(const std::vector<NoteEvent>& events, int bars, int resolution) {
  if (bars < 1) throw Error(ErrorCode::kOutOfRange, "--bars must be >= 1");
  const int bar = 4 * resolution;
  const auto spanned = bar_count(events, bar);
  if (spanned < static_cast<std::size_t>(bars)) {
    throw Error(ErrorCode::kPromptTooShort, "prompt spans " + std::to_string(spanned) + " bar(s), need " +
                                                std::to_string(bars));
  }
  std::vector<NoteEvent> out;
  for (const auto& e : events) {
    if (onset(e, resolution) < bars * bar) out.push_back(e);
  }
  if (out.empty()) {
    throw Error(ErrorCode::kPromptTooShort, "no note starts in the first " + std::to_string(bars) + " bar(s)");
  }
  return out;
}

namespace {

void setup_logging() {
  auto log = spdlog::get("dpmusic");
  if (!log) log = spdlog::stderr_color_mt("dpmusic");
  log->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* env = std::getenv("DPMUSIC_LOG_LEVEL");
  log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
  spdlog::set_default_logger(log);
}

// Everything a subcommand may read from the config file or flags.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> schedule;
  std::optional<int> resolution, max_beat, max_duration;
  std::optional<int> layers, heads, d_model, d_ff, model_max_steps;
  std::optional<double> dropout;
  bool tie_embeddings = false;
  std::optional<int> steps, batch_size, warmup, max_seq_len, log_every;
  std::optional<double> lr, grad_clip;
  bool no_augment = false;
  std::optional<std::string> top_k;
  std::optional<double> temperature;
  std::optional<int> max_steps;
};

struct Resolved {
  std::uint64_t seed = 0;
  QuantizationConfig quant;
  ModelConfig model;
  TrainConfig train;
  SamplingConfig sampling;
  int max_steps = 1024;
};

std::array<int, kNumFields> parse_top_k(const json& j) {
  std::array<int, kNumFields> k{};
  if (j.is_number_integer()) {
    k.fill(j.get<int>());
  } else if (j.is_array() && j.size() == kNumFields) {
    for (std::size_t d = 0; d < kNumFields; ++d) k[d] = j[d].get<int>();
  } else {
    throw Error(ErrorCode::kOutOfRange, "top_k must be one integer or " + std::to_string(kNumFields));
  }
  return k;
}

std::array<int, kNumFields> parse_top_k(const std::string& text) {
  json j = json::array();
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      j.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kOutOfRange, "bad --top-k value '" + text + "'");
    }
  }
  return parse_top_k(j.size() == 1 ? j[0] : j);
}

template <typename T>
void take(const json& section, const char* key, T& target) {
  if (section.contains(key)) target = section.at(key).get<T>();
}

template <typename T, typename U>
void take(const std::optional<T>& flag, U& target) {
  if (flag) target = static_cast<U>(*flag);
}

Resolved resolve(const std::string& config_path, const Overrides& o) {
  Resolved r;
  std::string schedule = DelaySchedule::uniform().to_string();
  if (!config_path.empty()) {
    json j;
    try {
      std::ifstream in(config_path);
      if (!in) throw Error(ErrorCode::kIo, "cannot read config " + config_path);
      j = json::parse(in);
      take(j, "seed", r.seed);
      take(j, "schedule", schedule);
      if (j.contains("quantization")) {
        const auto& q = j["quantization"];
        take(q, "resolution", r.quant.resolution);
        take(q, "max_beat", r.quant.max_beat);
        take(q, "max_duration", r.quant.max_duration);
      }
      if (j.contains("model")) {
        const auto& m = j["model"];
        take(m, "layers", r.model.layers);
        take(m, "heads", r.model.heads);
        take(m, "d_model", r.model.d_model);
        take(m, "d_ff", r.model.d_ff);
        take(m, "dropout", r.model.dropout);
        take(m, "max_steps", r.model.max_steps);
        take(m, "tie_embeddings", r.model.tie_embeddings);
      }
      if (j.contains("train")) {
        const auto& t = j["train"];
        take(t, "lr_peak", r.train.lr_peak);
        take(t, "warmup_steps", r.train.warmup_steps);
        take(t, "batch_size", r.train.batch_size);
        take(t, "max_seq_len", r.train.max_seq_len);
        take(t, "total_steps", r.train.total_steps);
        take(t, "beta1", r.train.beta1);
        take(t, "beta2", r.train.beta2);
        take(t, "epsilon", r.train.epsilon);
        take(t, "grad_clip", r.train.grad_clip);
        take(t, "augment", r.train.augment);
        take(t, "transpose_low", r.train.augmentation.transpose_low);
        take(t, "transpose_high", r.train.augmentation.transpose_high);
        take(t, "log_every", r.train.log_every);
      }
      if (j.contains("sampling")) {
        const auto& s = j["sampling"];
        if (s.contains("top_k")) r.sampling.top_k = parse_top_k(s["top_k"]);
        take(s, "temperature", r.sampling.temperature);
        take(s, "max_steps", r.max_steps);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kBadFormat, config_path + ": " + e.what());
    }
  }
  take(o.seed, r.seed);
  take(o.schedule, schedule);
  take(o.resolution, r.quant.resolution);
  take(o.max_beat, r.quant.max_beat);
  take(o.max_duration, r.quant.max_duration);
  take(o.layers, r.model.layers);
  take(o.heads, r.model.heads);
  take(o.d_model, r.model.d_model);
  take(o.d_ff, r.model.d_ff);
  take(o.dropout, r.model.dropout);
  take(o.model_max_steps, r.model.max_steps);
  if (o.tie_embeddings) r.model.tie_embeddings = true;
  take(o.steps, r.train.total_steps);
  take(o.batch_size, r.train.batch_size);
  take(o.warmup, r.train.warmup_steps);
  take(o.max_seq_len, r.train.max_seq_len);
  take(o.log_every, r.train.log_every);
  take(o.lr, r.train.lr_peak);
  take(o.grad_clip, r.train.grad_clip);
  if (o.no_augment) r.train.augment = false;
  if (o.top_k) r.sampling.top_k = parse_top_k(*o.top_k);
  take(o.temperature, r.sampling.temperature);
  take(o.max_steps, r.max_steps);

  if (r.quant.resolution < 1 || r.quant.max_beat < 1 || r.quant.max_duration < 2) {
    throw Error(ErrorCode::kOutOfRange, "quantization values must be positive");
  }
  if (r.max_steps < 1) throw Error(ErrorCode::kOutOfRange, "max_steps must be >= 1");
  r.model.schedule = parse_schedule(schedule);
  r.model.vocab = FieldVocabulary(r.quant);
  r.model.validate();
  r.train.seed = r.seed;
  r.train.augmentation.seed = r.seed;
  return r;
}

json sampling_json(const SamplingConfig& s, int max_steps) {
  return {{"top_k", s.top_k}, {"temperature", s.temperature}, {"ignore_eos", s.ignore_eos}, {"max_steps", max_steps}};
}

json resolved_json(const Resolved& r) {
  const auto& t = r.train;
  return {{"seed", r.seed},
          {"model", json::parse(model_config_to_json(r.model))},
          {"train",
           {{"lr_peak", t.lr_peak},
            {"warmup_steps", t.warmup_steps},
            {"batch_size", t.batch_size},
            {"max_seq_len", t.max_seq_len},
            {"total_steps", t.total_steps},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"epsilon", t.epsilon},
            {"grad_clip", t.grad_clip},
            {"augment", t.augment},
            {"transpose_low", t.augmentation.transpose_low},
            {"transpose_high", t.augmentation.transpose_high},
            {"log_every", t.log_every}}},
          {"sampling", sampling_json(r.sampling, r.max_steps)}};
}

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

bool is_midi(const fs::path& p) {
  const auto ext = lower_extension(p);
  return ext == ".mid" || ext == ".midi";
}

bool is_tokens(const fs::path& p) {
  const auto ext = lower_extension(p);
  return ext == ".dpt" || ext == ".txt";
}

// Files named directly plus matching files inside named directories,
// sorted by path.
std::vector<fs::path> collect_files(const std::vector<std::string>& inputs, bool (*accept)(const fs::path&)) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file() && accept(entry.path())) out.push_back(entry.path());
      }
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw Error(ErrorCode::kIo, in + ": no such file or directory");
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool is_piece(const fs::path& p) { return is_midi(p) || is_tokens(p); }

template <typename F>
auto with_path(const fs::path& path, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.message());
  }
}

std::vector<CompoundToken> load_tokens(const fs::path& path) {
  return with_path(path, [&] {
    const auto bytes = read_file_bytes(path.string());
    if (lower_extension(path) == ".txt") {
      return tokens_from_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
    return tokens_from_binary(bytes);
  });
}

void save_tokens(const fs::path& path, const std::vector<CompoundToken>& tokens) {
  if (lower_extension(path) == ".txt") {
    const auto text = tokens_to_text(tokens);
    write_file_bytes(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  } else {
    write_file_bytes(path.string(), tokens_to_binary(tokens));
  }
}

std::vector<NoteEvent> load_events(const fs::path& path, const FieldVocabulary& vocab) {
  if (is_midi(path)) {
    return with_path(path, [&] { return parse_midi(read_file_bytes(path.string()), vocab.quantization()); });
  }
  const auto tokens = load_tokens(path);
  return with_path(path, [&] { return decode_events(tokens, vocab); });
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

// ---- subcommands ----------------------------------------------------------

int cmd_tokenize(const std::vector<std::string>& inputs, const std::string& out_dir, bool skip_bad,
                 const Resolved& r) {
  const auto files = collect_files(inputs, is_midi);
  if (files.empty()) throw Error(ErrorCode::kEmptyCorpus, "no MIDI files found");
  fs::create_directories(out_dir);
  const FieldVocabulary& vocab = r.model.vocab;

  json pieces = json::array();
  json skipped = json::array();
  std::set<std::string> used;
  std::vector<std::string> ids;
  ParseStats totals;
  for (const auto& file : files) {
    std::string id = file.stem().string();
    for (int k = 2; used.count(id); ++k) id = file.stem().string() + "_" + std::to_string(k);
    try {
      ParseStats stats;
      const auto events = parse_midi(read_file_bytes(file.string()), r.quant, &stats);
      const auto tokens = encode_events(events, vocab);
      const fs::path target = fs::path(out_dir) / (id + ".dpt");
      write_file_bytes(target.string(), tokens_to_binary(tokens));
      pieces.push_back({{"id", id},
                        {"source", file.string()},
                        {"file", target.filename().string()},
                        {"tokens", tokens.size()},
                        {"notes", events.size()},
                        {"dropped_beyond_max_beat", stats.dropped_beyond_max_beat},
                        {"clamped_duration", stats.clamped_duration},
                        {"unmatched_note_on", stats.unmatched_note_on}});
      totals.notes_seen += stats.notes_seen;
      totals.dropped_beyond_max_beat += stats.dropped_beyond_max_beat;
      totals.clamped_duration += stats.clamped_duration;
      totals.unmatched_note_on += stats.unmatched_note_on;
      used.insert(id);
      ids.push_back(id);
      spdlog::debug("{}: {} notes, {} tokens", file.string(), events.size(), tokens.size());
    } catch (const Error& e) {
      if (!skip_bad || e.code() == ErrorCode::kIo) throw Error(e.code(), file.string() + ": " + e.message());
      spdlog::warn("skipping {}: {}", file.string(), e.what());
      skipped.push_back({{"source", file.string()}, {"error", e.what()}});
    }
  }

  json manifest{{"n", ids.size()},
                {"quantization",
                 {{"resolution", r.quant.resolution},
                  {"max_beat", r.quant.max_beat},
                  {"max_duration", r.quant.max_duration}}},
                {"pieces", pieces},
                {"skipped", skipped},
                {"totals",
                 {{"notes_seen", totals.notes_seen},
                  {"dropped_beyond_max_beat", totals.dropped_beyond_max_beat},
                  {"clamped_duration", totals.clamped_duration},
                  {"unmatched_note_on", totals.unmatched_note_on}}}};
  if (ids.size() >= 10) {
    const auto split = split_dataset(ids, SplitRatios{}, r.seed);
    manifest["split"] = {{"seed", r.seed}, {"train", split.train}, {"valid", split.valid}, {"test", split.test}};
  }
  write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
  spdlog::info("tokenized {} piece(s), skipped {}, manifest {}", ids.size(), skipped.size(),
               (fs::path(out_dir) / "manifest.json").string());
  if (ids.empty()) spdlog::warn("no piece could be tokenized");
  return kExitOk;
}

int cmd_detokenize(const std::string& input, const std::string& output, const Resolved& r) {
  const auto tokens = load_tokens(input);
  const auto events = with_path(input, [&] { return decode_events(tokens, r.model.vocab); });
  if (lower_extension(output) == ".txt") {
    save_tokens(output, tokens);
  } else {
    write_file_bytes(output, write_midi(events, r.quant));
  }
  spdlog::info("{}: {} tokens, {} notes -> {}", input, tokens.size(), events.size(), output);
  return kExitOk;
}

std::string grid_text(const TokenGrid& grid) {
  std::ostringstream out;
  out << "# schedule " << grid.schedule().to_string() << ", " << grid.steps() << " steps\n";
  for (std::size_t t = 0; t < grid.steps(); ++t) {
    for (std::size_t d = 0; d < kNumFields; ++d) out << (d ? " " : "") << grid.cell(t, d);
    out << '\n';
  }
  return out.str();
}

int cmd_dp_encode(const std::string& input, const std::string& output, const Resolved& r) {
  const auto tokens = load_tokens(input);
  const auto grid = with_path(input, [&] { return dp_encode(tokens, r.model.schedule, r.model.vocab); });
  if (lower_extension(output) == ".txt") {
    write_text(output, grid_text(grid));
  } else {
    write_file_bytes(output, grid_to_binary(grid));
  }
  spdlog::info("{}: {} tokens -> {} grid steps under {}", input, tokens.size(), grid.steps(),
               r.model.schedule.to_string());
  return kExitOk;
}

int cmd_dp_decode(const std::string& input, const std::string& output, const Resolved& r) {
  const auto grid =
      with_path(input, [&] { return grid_from_binary(read_file_bytes(input), r.model.schedule); });
  const auto tokens = with_path(input, [&] { return dp_decode(grid, r.model.vocab); });
  save_tokens(output, tokens);
  spdlog::info("{}: {} grid steps -> {} tokens", input, grid.steps(), tokens.size());
  return kExitOk;
}

struct DataSet {
  std::vector<std::string> train;
  std::vector<std::string> valid;
};

// A manifest selects its train/valid split when present; a directory or
// file list trains on everything it names.
DataSet resolve_data(const std::vector<std::string>& inputs) {
  DataSet data;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (lower_extension(p) != ".json") {
      for (const auto& f : collect_files({in}, is_tokens)) data.train.push_back(f.string());
      continue;
    }
    json manifest;
    try {
      std::ifstream stream(p);
      if (!stream) throw Error(ErrorCode::kIo, "cannot read " + in);
      manifest = json::parse(stream);
      std::map<std::string, std::string> files;
      for (const auto& piece : manifest.at("pieces")) {
        files[piece.at("id").get<std::string>()] = (p.parent_path() / piece.at("file").get<std::string>()).string();
      }
      if (manifest.contains("split")) {
        for (const auto& id : manifest["split"]["train"]) data.train.push_back(files.at(id.get<std::string>()));
        for (const auto& id : manifest["split"]["valid"]) data.valid.push_back(files.at(id.get<std::string>()));
      } else {
        for (const auto& [id, file] : files) data.train.push_back(file);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kBadFormat, in + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw Error(ErrorCode::kBadFormat, in + ": split names an unknown piece");
    }
  }
  return data;
}

int cmd_train(const std::vector<std::string>& inputs, const std::string& checkpoint, const std::string& loss_csv,
              const Resolved& r) {
  spdlog::info("resolved config: {}", resolved_json(r).dump());
  const DataSet data = resolve_data(inputs);
  if (data.train.empty()) throw Error(ErrorCode::kEmptyCorpus, "no training token files");
  const auto corpus = load_token_files(data.train);
  const auto valid = load_token_files(data.valid);

  Model model = Model::initialized(r.model, r.seed);
  BatchStream stream(corpus, r.train, r.model.schedule, r.model.vocab);
  std::vector<TokenGrid> heldout;
  for (const auto& piece : valid) {
    auto grid = stream.encode(piece);
    if (grid.steps() >= 2) heldout.push_back(std::move(grid));
  }
  spdlog::info("{} training piece(s), {} validation piece(s), {} parameters", corpus.size(), heldout.size(),
               model.params().parameter_count());

  const auto every = std::max(1, r.train.log_every);
  const auto result = train(model, stream, r.train, heldout, [&](const TrainRecord& rec) {
    if (rec.step == 1 || rec.step % every == 0 || rec.step == r.train.total_steps) {
      spdlog::info("step {:>6}  lr {:.3e}  loss {:.4f}", rec.step, rec.lr, rec.loss);
    }
  });
  save_checkpoint(checkpoint, model);
  if (!loss_csv.empty()) write_loss_trace_csv(loss_csv, result.trace);
  if (!heldout.empty()) {
    std::string acc;
    for (std::size_t d = 0; d < kNumFields; ++d) {
      acc += fmt::format(" {}={:.3f}", field_name(d), result.heldout.field_accuracy[d]);
    }
    spdlog::info("validation loss {:.4f}, accuracy{}", result.heldout.loss, acc);
  }
  spdlog::info("checkpoint written to {}", checkpoint);
  return kExitOk;
}

DecodeMode parse_mode(const std::string& name) {
  if (name == "incremental") return DecodeMode::kIncremental;
  if (name == "full-prefix") return DecodeMode::kFullPrefix;
  throw Error(ErrorCode::kOutOfRange, "unknown decode mode '" + name + "'");
}

Model load_model(const std::string& path, const std::optional<std::string>& schedule) {
  Model model = with_path(path, [&] { return load_checkpoint(path); });
  if (schedule && !(parse_schedule(*schedule) == model.config().schedule)) {
    throw Error(ErrorCode::kCheckpointMismatch, "checkpoint was trained with schedule " +
                                                    model.config().schedule.to_string() + ", not " + *schedule);
  }
  return model;
}

// Token prefix for a prompt piece: its first bars without end-of-song.
std::vector<CompoundToken> prompt_prefix(const std::vector<NoteEvent>& events, int bars,
                                         const FieldVocabulary& vocab) {
  auto tokens = encode_events(truncate_prompt(events, bars, vocab.quantization().resolution), vocab);
  tokens.pop_back();
  return tokens;
}

struct GenerateArgs {
  std::string checkpoint;
  std::string prompt;
  std::string output;
  std::string roll;
  std::string tokens_out;
  int bars = 2;
  std::string mode = "incremental";
};

int cmd_generate(const GenerateArgs& a, const Overrides& o, const Resolved& r) {
  const Model model = load_model(a.checkpoint, o.schedule);
  const auto& cfg = model.config();
  const auto& vocab = cfg.vocab;
  spdlog::info("resolved config: {}", json{{"seed", r.seed},
                                           {"model", json::parse(model_config_to_json(cfg))},
                                           {"sampling", sampling_json(r.sampling, r.max_steps)},
                                           {"bars", a.bars},
                                           {"mode", a.mode}}
                                          .dump());

  std::vector<CompoundToken> prefix;
  int shade = 0;
  if (!a.prompt.empty()) {
    const auto events = load_events(a.prompt, vocab);
    prefix = with_path(a.prompt, [&] { return prompt_prefix(events, a.bars, vocab); });
    shade = a.bars * 4 * vocab.quantization().resolution;
  }
  const TokenGrid prompt_grid = prefix.empty() ? TokenGrid() : dp_encode(prefix, cfg.schedule, vocab);
  DecodeState state(vocab, cfg.schedule, r.sampling, r.seed, static_cast<std::size_t>(r.max_steps));
  const auto gen = generate(model, prompt_grid, state, parse_mode(a.mode));
  const auto tokens = dp_decode(gen.grid, vocab);
  const auto verdict = validate_grammar(tokens);
  if (!verdict.ok) throw std::logic_error("generated sequence breaks the grammar: " + verdict.reason);
  const auto events = decode_events(tokens, vocab);

  write_file_bytes(a.output, write_midi(events, vocab.quantization()));
  const std::string roll = a.roll.empty() ? fs::path(a.output).replace_extension(".svg").string() : a.roll;
  write_text(roll, piano_roll_svg(events, vocab.quantization().resolution, shade));
  if (!a.tokens_out.empty()) save_tokens(a.tokens_out, tokens);
  spdlog::info("{} prompt events, {} new notes in {} grid steps -> {} (roll {})", gen.prompt_events,
               gen.generated_notes, gen.grid.steps(), a.output, roll);
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& inputs, const std::string& output, const Resolved& r) {
  const auto files = collect_files(inputs, is_piece);
  if (files.empty()) throw Error(ErrorCode::kEmptyCorpus, "no pieces to evaluate");
  std::vector<MetricReport> reports;
  for (const auto& f : files) {
    const auto events = load_events(f, r.model.vocab);
    auto report = with_path(f, [&] { return evaluate_piece(events, 4 * r.quant.resolution); });
    report.name = f.stem().string();
    reports.push_back(report);
  }
  const auto csv = metrics_to_csv(reports);
  if (output.empty() || output == "-") {
    std::cout << csv;
  } else {
    write_text(output, csv);
  }
  spdlog::info("evaluated {} piece(s)", reports.size());
  return kExitOk;
}

struct BenchArgs {
  std::string checkpoint;
  std::vector<std::string> prompts;
  std::string markdown;
  std::string csv;
  std::string mode = "incremental";
  int bars = 2;
  int repeats = 3;
  int warmup = 2;
  bool ignore_eos = false;
};

int cmd_bench(const BenchArgs& a, const Overrides& o, const Resolved& r) {
  const Model model =
      a.checkpoint.empty() ? Model::initialized(r.model, r.seed) : load_model(a.checkpoint, std::nullopt);
  if (a.checkpoint.empty()) spdlog::info("no checkpoint given; timing randomly initialised parameters");
  ModelConfig cfg = model.config();
  cfg.dropout = 0.0;
  const DelaySchedule dp = o.schedule ? parse_schedule(*o.schedule) : cfg.schedule;

  std::vector<std::vector<CompoundToken>> prompts;
  for (const auto& f : collect_files(a.prompts, is_piece)) {
    const auto events = load_events(f, cfg.vocab);
    prompts.push_back(with_path(f, [&] { return prompt_prefix(events, a.bars, cfg.vocab); }));
  }
  if (prompts.empty()) throw Error(ErrorCode::kEmptyCorpus, "no prompt pieces");
  if (a.warmup < 0 || static_cast<std::size_t>(a.warmup) >= prompts.size()) {
    throw Error(ErrorCode::kOutOfRange, "need more prompts than --warmup");
  }
  if (prompts.size() - static_cast<std::size_t>(a.warmup) < 20) {
    spdlog::warn("only {} timed prompt(s); 20 or more give stable numbers", prompts.size() - a.warmup);
  }

  BenchOptions opt;
  opt.max_steps = static_cast<std::size_t>(r.max_steps);
  opt.seed = r.seed;
  opt.repeats = a.repeats;
  opt.warmup = static_cast<std::size_t>(a.warmup);
  opt.sampling = r.sampling;
  opt.sampling.ignore_eos = a.ignore_eos;
  spdlog::info("resolved config: {}", json{{"seed", r.seed},
                                           {"model", json::parse(model_config_to_json(cfg))},
                                           {"delay_schedule", dp.to_string()},
                                           {"sampling", sampling_json(opt.sampling, r.max_steps)},
                                           {"prompts", prompts.size()},
                                           {"warmup", a.warmup},
                                           {"repeats", a.repeats},
                                           {"mode", a.mode}}
                                          .dump());

  std::vector<DecodeMode> modes;
  if (a.mode == "both") {
    modes = {DecodeMode::kIncremental, DecodeMode::kFullPrefix};
  } else {
    modes = {parse_mode(a.mode)};
  }
  std::vector<BenchResult> results;
  for (const auto mode : modes) {
    opt.mode = mode;
    results.push_back(measure_nps(cfg, model.params(), dp, prompts, opt, "delay " + dp.to_string()));
    results.push_back(measure_nps(cfg, model.params(), DelaySchedule::zero(), prompts, opt, "zero delay"));
    const auto& d = results[results.size() - 2];
    const auto& z = results.back();
    spdlog::info("{}: delay {:.1f} NPS, zero delay {:.1f} NPS, ratio {:.3f}", decode_mode_name(mode), d.nps, z.nps,
                 z.nps > 0 ? d.nps / z.nps : 0.0);
  }
  const auto& z = results[1];
  const long typical =
      z.pieces > 0 ? std::lround(static_cast<double>(z.notes_generated) / (z.pieces * std::max(1, a.repeats))) : 0;
  const auto md = bench_to_markdown(results, typical);
  std::cout << md;
  if (!a.markdown.empty()) write_text(a.markdown, md);
  if (!a.csv.empty()) write_text(a.csv, bench_to_csv(results));
  return kExitOk;
}

int cmd_plot(const std::string& input, const std::string& output, int shade_bars, const Resolved& r) {
  const auto events = load_events(input, r.model.vocab);
  write_text(output, piano_roll_svg(events, r.quant.resolution, shade_bars * 4 * r.quant.resolution));
  spdlog::info("{}: {} notes -> {}", input, events.size(), output);
  return kExitOk;
}

void add_model_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--layers", o.layers, "Transformer layers");
  cmd->add_option("--heads", o.heads, "Attention heads");
  cmd->add_option("--d-model", o.d_model, "Model width");
  cmd->add_option("--d-ff", o.d_ff, "Feed-forward width");
  cmd->add_option("--dropout", o.dropout, "Dropout rate");
  cmd->add_option("--model-max-steps", o.model_max_steps, "Longest grid the model accepts");
  cmd->add_flag("--tie-embeddings", o.tie_embeddings, "Share input embeddings with output heads");
}

void add_sampling_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--top-k", o.top_k, "Top-k per field: one value or six comma-separated");
  cmd->add_option("--temperature", o.temperature, "Softmax temperature");
  cmd->add_option("--max-steps", o.max_steps, "Grid step budget");
}

}  // namespace

int run(int argc, const char* const* argv) {
  setup_logging();
  CLI::App app{"Delay-pattern compound-token music toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  Overrides o;
  app.add_option("--config", config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed for every random choice");
  app.add_option("--schedule", o.schedule, "Per-field delays, e.g. 0,1,2,3,4,5");
  app.add_option("--resolution", o.resolution, "Ticks per beat");
  app.add_option("--max-beat", o.max_beat, "Beats kept per piece");
  app.add_option("--max-duration", o.max_duration, "Duration vocabulary size");

  std::vector<std::string> inputs;
  std::string input, output, loss_csv;
  bool skip_bad = false;
  int shade_bars = 0;
  GenerateArgs gen;
  BenchArgs bench;

  auto* tokenize = app.add_subcommand("tokenize", "MIDI files or directories to token files plus manifest.json");
  tokenize->add_option("inputs", inputs, "MIDI files or directories")->required();
  tokenize->add_option("-o,--out", output, "Output directory")->required();
  tokenize->add_flag("--skip-bad", skip_bad, "Skip unreadable pieces instead of failing");

  auto* detokenize = app.add_subcommand("detokenize", "Token file to MIDI");
  detokenize->add_option("input", input, "Token file (.dpt binary or .txt)")->required();
  detokenize->add_option("-o,--out", output, "Output .mid (or .txt for token text)")->required();

  auto* encode = app.add_subcommand("dp-encode", "Token file to delay-scheduled grid");
  encode->add_option("input", input, "Token file")->required();
  encode->add_option("-o,--out", output, "Output grid (.dpg binary, .txt text)")->required();

  auto* decode = app.add_subcommand("dp-decode", "Delay-scheduled grid back to tokens");
  decode->add_option("input", input, "Grid file (.dpg)")->required();
  decode->add_option("-o,--out", output, "Output token file (.dpt or .txt)")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model on token files");
  train_cmd->add_option("data", inputs, "Token directories, files, or a manifest.json")->required();
  train_cmd->add_option("-o,--out", output, "Checkpoint path")->required();
  train_cmd->add_option("--loss-csv", loss_csv, "Write the per-step loss trace here");
  train_cmd->add_option("--steps", o.steps, "Optimizer steps");
  train_cmd->add_option("--batch-size", o.batch_size, "Pieces per step");
  train_cmd->add_option("--lr", o.lr, "Peak learning rate");
  train_cmd->add_option("--warmup", o.warmup, "Warmup steps");
  train_cmd->add_option("--max-seq-len", o.max_seq_len, "Grid rows kept per piece");
  train_cmd->add_option("--grad-clip", o.grad_clip, "Global gradient norm limit (<= 0 disables)");
  train_cmd->add_option("--log-every", o.log_every, "Steps between log lines");
  train_cmd->add_flag("--no-augment", o.no_augment, "Disable random transposition");
  add_model_flags(train_cmd, o);

  auto* generate_cmd = app.add_subcommand("generate", "Continue a prompt with a trained model");
  generate_cmd->add_option("-c,--checkpoint", gen.checkpoint, "Checkpoint")->required();
  generate_cmd->add_option("-p,--prompt", gen.prompt, "Prompt MIDI or token file; omitted starts from scratch");
  generate_cmd->add_option("-o,--out", gen.output, "Output MIDI")->required();
  generate_cmd->add_option("--bars", gen.bars, "Prompt bars kept (4/4)")->capture_default_str();
  generate_cmd->add_option("--roll", gen.roll, "Piano-roll SVG (default: output with .svg)");
  generate_cmd->add_option("--tokens-out", gen.tokens_out, "Also write the decoded tokens");
  generate_cmd->add_option("--mode", gen.mode, "incremental or full-prefix")->capture_default_str();
  add_sampling_flags(generate_cmd, o);

  auto* eval = app.add_subcommand("eval", "Per-piece metrics CSV with mean and std rows");
  eval->add_option("inputs", inputs, "MIDI or token files or directories")->required();
  eval->add_option("-o,--out", output, "CSV path (default stdout)");

  auto* bench_cmd = app.add_subcommand("bench", "Notes per second, delay schedule against zero delay");
  bench_cmd->add_option("-c,--checkpoint", bench.checkpoint, "Checkpoint (default: random desk model)");
  bench_cmd->add_option("-p,--prompts", bench.prompts, "Prompt MIDI or token files or directories")->required();
  bench_cmd->add_option("--bars", bench.bars, "Prompt bars kept (4/4)")->capture_default_str();
  bench_cmd->add_option("--repeats", bench.repeats, "Timing repeats")->capture_default_str();
  bench_cmd->add_option("--warmup", bench.warmup, "Leading prompts left untimed")->capture_default_str();
  bench_cmd->add_option("--mode", bench.mode, "incremental, full-prefix or both")->capture_default_str();
  bench_cmd->add_flag("--ignore-eos", bench.ignore_eos, "Decode every piece to the step budget");
  bench_cmd->add_option("--markdown", bench.markdown, "Also write the markdown table here");
  bench_cmd->add_option("--csv", bench.csv, "Write raw results as CSV");
  add_sampling_flags(bench_cmd, o);
  add_model_flags(bench_cmd, o);

  auto* plot = app.add_subcommand("plot", "Piano-roll SVG of a MIDI or token file");
  plot->add_option("input", input, "MIDI or token file")->required();
  plot->add_option("-o,--out", output, "SVG path")->required();
  plot->add_option("--shade-bars", shade_bars, "Shade the first bars (e.g. a prompt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    const Resolved r = resolve(config_path, o);
    if (*tokenize) return cmd_tokenize(inputs, output, skip_bad, r);
    if (*detokenize) return cmd_detokenize(input, output, r);
    if (*encode) return cmd_dp_encode(input, output, r);
    if (*decode) return cmd_dp_decode(input, output, r);
    if (*train_cmd) return cmd_train(inputs, output, loss_csv, r);
    if (*generate_cmd) return cmd_generate(gen, o, r);
    if (*eval) return cmd_eval(inputs, output, r);
    if (*bench_cmd) return cmd_bench(bench, o, r);
    if (*plot) return cmd_plot(input, output, shade_bars, r);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace dpmusic::cli
