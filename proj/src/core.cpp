#include "critloop/core.hpp"

#include <algorithm>
#include <cctype>

#include "critloop/critique_format.hpp"

namespace critloop {

void Query::validate() const {
  if (id.empty()) throw InvariantError("query: empty id");
  if (gold_answer.empty()) throw InvariantError("query " + id + ": empty gold_answer");
  if (difficulty && (*difficulty < 1 || *difficulty > 5))
    throw InvariantError("query " + id + ": difficulty must be in [1,5]");
}

std::vector<std::string> segment_steps(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    bool blank = std::all_of(line.begin(), line.end(),
                             [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; });
    if (!blank) out.emplace_back(line);
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return out;
}

ReasoningPath ReasoningPath::from_text(std::string_view text, Provenance provenance, GenParams params) {
  return from_steps(segment_steps(text), provenance, std::move(params));
}

ReasoningPath ReasoningPath::from_steps(std::vector<std::string> steps, Provenance provenance,
                                        GenParams params) {
  ReasoningPath p;
  p.steps_.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].find('\n') != std::string::npos)
      throw InvariantError("reasoning step contains a newline");
    p.steps_.push_back(Step{static_cast<int>(i), std::move(steps[i])});
  }
  p.provenance_ = provenance;
  p.params_ = std::move(params);
  p.final_answer_ = extract_answer(p.text());
  return p;
}

std::string ReasoningPath::text() const {
  std::string out;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (i) out += '\n';
    out += steps_[i].text;
  }
  return out;
}

std::vector<std::string> ReasoningPath::step_texts(std::size_t begin, std::size_t end) const {
  std::vector<std::string> out;
  end = std::min(end, steps_.size());
  for (std::size_t i = begin; i < end; ++i) out.push_back(steps_[i].text);
  return out;
}

Critique Critique::make(std::vector<StepVerdict> verdicts, std::optional<int> first_error,
                        std::string feedback, std::vector<std::string> step_feedback) {
  if (!step_feedback.empty() && step_feedback.size() != verdicts.size())
    throw InvariantError("critique: step_feedback size differs from verdict count");
  if (first_error) {
    int k = *first_error;
    if (k < 0 || static_cast<std::size_t>(k) >= verdicts.size())
      throw InvariantError("critique: first_error_index out of range");
    for (int i = 0; i < k; ++i)
      if (verdicts[static_cast<std::size_t>(i)] != StepVerdict::correct)
        throw InvariantError("critique: steps before the first error must be correct");
    if (verdicts[static_cast<std::size_t>(k)] != StepVerdict::incorrect)
      throw InvariantError("critique: first error step must be incorrect");
  } else {
    for (auto v : verdicts)
      if (v != StepVerdict::correct)
        throw InvariantError("critique: a correct verdict requires every step correct");
  }
  Critique c;
  c.verdicts_ = std::move(verdicts);
  c.first_error_ = first_error;
  c.feedback_ = std::move(feedback);
  c.step_feedback_ = std::move(step_feedback);
  return c;
}

Critique Critique::all_correct(std::size_t steps, std::string feedback) {
  return make(std::vector<StepVerdict>(steps, StepVerdict::correct), std::nullopt, std::move(feedback));
}

Critique Critique::flawed_at(std::size_t steps, int k, std::string feedback, std::string step_note) {
  std::vector<StepVerdict> v(steps, StepVerdict::not_evaluated);
  for (int i = 0; i < k && static_cast<std::size_t>(i) < steps; ++i) v[static_cast<std::size_t>(i)] = StepVerdict::correct;
  if (k >= 0 && static_cast<std::size_t>(k) < steps) v[static_cast<std::size_t>(k)] = StepVerdict::incorrect;
  std::vector<std::string> notes;
  if (!step_note.empty()) {
    notes.assign(steps, {});
    if (k >= 0 && static_cast<std::size_t>(k) < steps) notes[static_cast<std::size_t>(k)] = std::move(step_note);
  }
  return make(std::move(v), k, std::move(feedback), std::move(notes));
}

std::string Critique::feedback_for_step(std::size_t i) const {
  if (i < step_feedback_.size() && !step_feedback_[i].empty()) return step_feedback_[i];
  if (first_error_ && static_cast<std::size_t>(*first_error_) == i) return feedback_;
  return {};
}

void RefinementRecord::validate() const {
  if (refined_path.provenance() != Provenance::refinement)
    throw InvariantError("refinement record: refined path provenance must be refinement");
  if (round_index < 1) throw InvariantError("refinement record: round_index must be >= 1");
}

InteractionHistory append_round(const InteractionHistory& history, Critique critique,
                                ReasoningPath refinement, int round_index) {
  if (round_index != static_cast<int>(history.rounds.size()) + 1)
    throw InvariantError("append_round: round " + std::to_string(round_index) + " appended to a history of " +
                         std::to_string(history.rounds.size()) + " rounds");
  InteractionHistory next = history;
  next.rounds.push_back(Round{std::move(critique), std::move(refinement)});
  return next;
}

std::vector<ContextSegment> context_view(const InteractionHistory& history, ContextRole role,
                                         ContextMode mode, const Critique* current) {
  if (role == ContextRole::refinement && current == nullptr)
    throw std::invalid_argument("context_view: refinement view needs the current critique");
  std::vector<ContextSegment> out;
  out.push_back({SegmentKind::query, history.query.text});
  if (mode == ContextMode::full) {
    out.push_back({SegmentKind::response, history.initial.text()});
    for (const auto& r : history.rounds) {
      out.push_back({SegmentKind::critique, format_critique(r.critique)});
      out.push_back({SegmentKind::response, r.refinement.text()});
    }
  } else {
    out.push_back({SegmentKind::response, history.latest().text()});
  }
  if (role == ContextRole::refinement) out.push_back({SegmentKind::critique, format_critique(*current)});
  return out;
}

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N], const char* what) {
  for (const auto& [value, name] : table)
    if (name == s) return value;
  throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(s));
}

template <typename E, std::size_t N>
std::string name_of(E v, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [value, name] : table)
    if (value == v) return std::string(name);
  return "?";
}

constexpr std::pair<QuerySource, std::string_view> kSources[] = {
    {QuerySource::gsm8k_like, "gsm8k-like"}, {QuerySource::math_like, "math-like"}, {QuerySource::custom, "custom"}};
constexpr std::pair<Provenance, std::string_view> kProvenances[] = {
    {Provenance::sampled, "sampled"},       {Provenance::rg1, "rg1"}, {Provenance::rg2, "rg2"},
    {Provenance::rg3, "rg3"},               {Provenance::refinement, "refinement"},
    {Provenance::self_talk, "self-talk"}};
constexpr std::pair<StepVerdict, std::string_view> kVerdicts[] = {
    {StepVerdict::correct, "correct"}, {StepVerdict::incorrect, "incorrect"},
    {StepVerdict::not_evaluated, "not-evaluated"}};
constexpr std::pair<OverallVerdict, std::string_view> kOverall[] = {{OverallVerdict::correct, "correct"},
                                                                     {OverallVerdict::flawed, "flawed"}};
constexpr std::pair<SegmentKind, std::string_view> kSegments[] = {
    {SegmentKind::query, "query"}, {SegmentKind::response, "response"}, {SegmentKind::critique, "critique"}};
constexpr std::pair<ContextMode, std::string_view> kModes[] = {{ContextMode::full, "full"},
                                                                {ContextMode::truncated, "truncated"}};

}  // namespace

std::string to_string(QuerySource v) { return name_of(v, kSources); }
std::string to_string(Provenance v) { return name_of(v, kProvenances); }
std::string to_string(StepVerdict v) { return name_of(v, kVerdicts); }
std::string to_string(OverallVerdict v) { return name_of(v, kOverall); }
std::string to_string(SegmentKind v) { return name_of(v, kSegments); }
std::string to_string(ContextMode v) { return name_of(v, kModes); }
QuerySource parse_query_source(std::string_view s) { return parse_enum(s, kSources, "query source"); }
Provenance parse_provenance(std::string_view s) { return parse_enum(s, kProvenances, "provenance"); }
StepVerdict parse_step_verdict(std::string_view s) { return parse_enum(s, kVerdicts, "step verdict"); }
SegmentKind parse_segment_kind(std::string_view s) { return parse_enum(s, kSegments, "segment kind"); }
ContextMode parse_context_mode(std::string_view s) { return parse_enum(s, kModes, "context mode"); }

}  // namespace critloop
