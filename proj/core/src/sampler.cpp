#include "dpmusic/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "dpmusic/error.hpp"

namespace dpmusic {

namespace {

constexpr std::size_t kTypeField = static_cast<std::size_t>(Field::kType);
constexpr std::size_t kBeatField = static_cast<std::size_t>(Field::kBeat);
constexpr std::size_t kInstrumentField = static_cast<std::size_t>(Field::kInstrument);

// Bitmask over TokenType values.
using TypeSet = unsigned;

constexpr TypeSet bit(TokenType t) { return 1u << static_cast<unsigned>(t); }

constexpr TypeSet kAnyType = bit(TokenType::kStartOfSong) | bit(TokenType::kInstrument) |
                             bit(TokenType::kStartOfNotes) | bit(TokenType::kNote) |
                             bit(TokenType::kEndOfSong);

// Token types under which field d may hold `value`.
TypeSet types_for(std::size_t d, int value) {
  if (d == kTypeField) return 1u << static_cast<unsigned>(value);
  const bool instrument_field = d == kInstrumentField;
  if (value == kNullIndex) {
    TypeSet s = bit(TokenType::kStartOfSong) | bit(TokenType::kStartOfNotes) | bit(TokenType::kEndOfSong);
    if (!instrument_field) s |= bit(TokenType::kInstrument);
    return s;
  }
  return bit(TokenType::kNote) | (instrument_field ? bit(TokenType::kInstrument) : 0u);
}

TypeSet known_types(const DecodeState& state, std::size_t event) {
  if (event > state.events().size()) return kAnyType;
  TypeSet s = kAnyType;
  for (std::size_t f = 0; f < kNumFields; ++f) {
    if (state.known(event, f)) s &= types_for(f, state.events()[event - 1][f]);
  }
  return s;
}

constexpr unsigned phase_bit(GrammarPhase p) { return 1u << static_cast<unsigned>(p); }

// Whether some assignment of types to the events without one yet, with
// event `event` further limited to `extra`, still yields a grammatical
// sequence ending by the last event that fits before max_steps. Events
// after end-of-song are discarded, so they constrain nothing.
bool feasible(const DecodeState& state, std::size_t event, TypeSet extra) {
  const long last_fit = static_cast<long>(state.max_steps()) - state.schedule().max_delay();
  const long first = static_cast<long>(state.typed_events()) + 1;
  const long last = static_cast<long>(std::max(state.events().size(), event));
  constexpr unsigned kEnded = phase_bit(GrammarPhase::kEnded);
  unsigned phases = phase_bit(state.phase());
  for (long j = first; j <= last; ++j) {
    TypeSet allowed = known_types(state, static_cast<std::size_t>(j));
    if (j == static_cast<long>(event)) allowed &= extra;
    unsigned next = phases & kEnded;
    for (auto p : {GrammarPhase::kExpectStart, GrammarPhase::kHeader, GrammarPhase::kNotes}) {
      if (!(phases & phase_bit(p))) continue;
      for (TokenType t : allowed_types(p)) {
        if (allowed & bit(t)) next |= phase_bit(advance_phase(p, t));
      }
    }
    if (j >= last_fit) next &= kEnded;
    phases = next;
    if (!phases) return false;
  }
  if (phases & kEnded) return true;
  for (auto p : {GrammarPhase::kExpectStart, GrammarPhase::kHeader, GrammarPhase::kNotes}) {
    if ((phases & phase_bit(p)) && tokens_to_finish(p) <= last_fit - last) return true;
  }
  return false;
}

int sample_masked(const RowVector& logits, const std::vector<int>& allowed, int top_k,
                  double temperature, Rng& rng) {
  std::vector<std::pair<double, int>> cand;
  cand.reserve(allowed.size());
  for (int v : allowed) cand.emplace_back(logits(v), v);
  const auto by_score = [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  };
  const std::size_t k = top_k <= 0 ? cand.size() : std::min<std::size_t>(cand.size(), top_k);
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), by_score);
  if (k == 1 || temperature <= 0.0) return cand.front().second;

  const double top = cand.front().first;
  std::vector<double> weights(k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    weights[j] = std::exp((cand[j].first - top) / temperature);
    total += weights[j];
  }
  double u = rng.uniform() * total;
  for (std::size_t j = 0; j < k; ++j) {
    u -= weights[j];
    if (u < 0.0) return cand[j].second;
  }
  return cand[k - 1].second;
}

int choose_value(const StepLogits& logits, DecodeState& state, std::size_t event, std::size_t d) {
  const auto& vocab = state.vocab();
  std::vector<int> allowed;

  if (d == kTypeField) {
    for (TokenType type : allowed_types(state.phase())) {
      if (feasible(state, event, bit(type))) allowed.push_back(static_cast<int>(type));
    }
    const int eos = static_cast<int>(TokenType::kEndOfSong);
    if (state.sampling().ignore_eos && allowed.size() > 1) std::erase(allowed, eos);
  } else {
    bool real_ok = true;
    if (state.known(event, kTypeField)) {
      const TokenType type = state.events()[event - 1].type();
      const bool valued = type == TokenType::kNote ||
                          (type == TokenType::kInstrument && d == kInstrumentField);
      if (!valued) return kNullIndex;
    } else {
      if (feasible(state, event, types_for(d, kNullIndex))) allowed.push_back(kNullIndex);
      real_ok = feasible(state, event, types_for(d, vocab.first_value(d)));
    }
    if (real_ok) {
      int lower = vocab.first_value(d);
      if (d == kBeatField) lower = std::max(lower, state.last_beat());
      for (int v = lower; v <= vocab.last_value(d); ++v) allowed.push_back(v);
    }
  }
  if (allowed.empty()) {
    throw Error(ErrorCode::kNoFeasibleValue, "no feasible " + std::string(field_name(d)) +
                                                 " for event " + std::to_string(event) +
                                                 " at step " + std::to_string(state.step()));
  }
  const RowVector& z = logits.fields[d];
  if (z.size() != vocab.size(d)) {
    throw Error(ErrorCode::kOutOfRange, "missing logits for " + std::string(field_name(d)));
  }
  const auto& sampling = state.sampling();
  return sample_masked(z, allowed, sampling.top_k[d], sampling.temperature, state.rng());
}

}  // namespace

DecodeState::DecodeState(const FieldVocabulary& vocab, const DelaySchedule& schedule,
                         SamplingConfig sampling, std::uint64_t seed, std::size_t max_steps)
    : vocab_(&vocab), schedule_(schedule), sampling_(sampling), rng_(seed), max_steps_(max_steps) {
  schedule_.validate();
}

void DecodeState::set_prompt(std::span<const CompoundToken> prompt) {
  prompt_.assign(prompt.begin(), prompt.end());
  for (std::size_t i = 0; i < prompt_.size(); ++i) {
    for (std::size_t d = 0; d < kNumFields; ++d) commit(i + 1, d, prompt_[i][d]);
  }
}

bool DecodeState::finished() const {
  return end_event_ > 0 && step_ > end_event_ + static_cast<std::size_t>(schedule_.max_delay());
}

void DecodeState::commit(std::size_t event, std::size_t d, int value) {
  if (events_.size() < event) {
    events_.resize(event);
    known_.resize(event, std::array<bool, kNumFields>{});
  }
  events_[event - 1][d] = value;
  known_[event - 1][d] = true;
  if (d == kTypeField) {
    const auto type = static_cast<TokenType>(value);
    phase_ = advance_phase(phase_, type);
    typed_events_ = std::max(typed_events_, event);
    if (type == TokenType::kEndOfSong && end_event_ == 0) end_event_ = event;
  } else if (d == kBeatField && value != kNullIndex) {
    last_beat_ = std::max(last_beat_, value);
  }
}

std::array<int, kNumFields> sample_step(const StepLogits& logits, DecodeState& state) {
  const auto& schedule = state.schedule();
  const auto& vocab = state.vocab();
  const long t = static_cast<long>(state.step());
  std::array<int, kNumFields> row{};
  for (std::size_t d : schedule.field_order()) {
    const long i = event_at(schedule, t, d);
    if (i < 1 || (state.end_event() > 0 && i > static_cast<long>(state.end_event()))) {
      row[d] = vocab.pad_id(d);
      continue;
    }
    const auto event = static_cast<std::size_t>(i);
    if (event <= state.prompt_events()) {
      row[d] = state.events()[event - 1][d];
      continue;
    }
    row[d] = choose_value(logits, state, event, d);
    state.commit(event, d, row[d]);
  }
  state.set_step(state.step() + 1);
  return row;
}

namespace {

bool step_fully_determined(const DecodeState& state) {
  const auto& schedule = state.schedule();
  const long t = static_cast<long>(state.step());
  for (std::size_t d = 0; d < kNumFields; ++d) {
    const long i = event_at(schedule, t, d);
    const bool pad = i < 1 || (state.end_event() > 0 && i > static_cast<long>(state.end_event()));
    if (!pad && i > static_cast<long>(state.prompt_events())) return false;
  }
  return true;
}

}  // namespace

Generation generate(const Model& model, const TokenGrid& prompt_grid, DecodeState& state,
                    DecodeMode mode) {
  const auto& schedule = state.schedule();
  const auto& vocab = state.vocab();
  if (!(schedule == model.config().schedule)) {
    throw Error(ErrorCode::kCheckpointMismatch, "decode schedule differs from the model's");
  }
  if (prompt_grid.steps() > 0 && !(prompt_grid.schedule() == schedule)) {
    throw Error(ErrorCode::kCheckpointMismatch, "prompt grid uses a different delay schedule");
  }
  const auto flush = static_cast<std::size_t>(schedule.max_delay());
  const std::size_t max_steps =
      std::min(state.max_steps(), static_cast<std::size_t>(model.config().max_steps));
  state.set_max_steps(max_steps);

  std::vector<CompoundToken> prompt;
  if (prompt_grid.steps() > 0) prompt = dp_decode(prompt_grid, vocab);
  if (prompt.empty()) prompt.push_back(make_structural_token(TokenType::kStartOfSong));

  GrammarPhase phase = GrammarPhase::kExpectStart;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (!type_allowed(phase, prompt[i].type())) {
      throw Error(ErrorCode::kGrammarViolation, "prompt token " + std::to_string(i) +
                                                    " breaks the type grammar");
    }
    phase = advance_phase(phase, prompt[i].type());
  }
  if (prompt.size() + flush > max_steps) {
    throw Error(ErrorCode::kSequenceTooLong, "prompt does not fit in max_steps");
  }

  state.set_prompt(prompt);
  state.set_step(1);

  Generation out;
  out.prompt_events = prompt.size();
  out.grid = TokenGrid(0, schedule);
  std::optional<IncrementalState> cache;
  if (mode == DecodeMode::kIncremental) cache.emplace(model);
  StepLogits next;
  while (!state.finished() && state.step() <= max_steps) {
    StepLogits logits;
    if (!step_fully_determined(state)) {
      logits = mode == DecodeMode::kIncremental
                   ? next
                   : forward(model, out.grid, out.grid.steps()).at(out.grid.steps() - 1);
    }
    const auto row = sample_step(logits, state);
    out.grid.append_row(row);
    if (cache && !state.finished()) next = cache->push(row);
  }

  if (state.end_event() > 0) {
    for (std::size_t r = 0; r < out.grid.steps(); ++r) {
      for (std::size_t d = 0; d < kNumFields; ++d) {
        if (event_at(schedule, static_cast<long>(r + 1), d) > static_cast<long>(state.end_event())) {
          out.grid.cell(r, d) = vocab.pad_id(d);
        }
      }
    }
  }
  out.generated_steps = out.grid.steps() - std::min(out.grid.steps(), prompt.size());
  const std::size_t kept = state.end_event() > 0 ? state.end_event() : state.events().size();
  for (std::size_t i = prompt.size(); i < kept; ++i) {
    if (state.events()[i].type() == TokenType::kNote) ++out.generated_notes;
  }
  return out;
}

}  // namespace dpmusic
