#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "critloop/answer.hpp"

namespace critloop {

inline constexpr int kSchemaVersion = 1;

/// Bad configuration or input data (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a value would violate a domain-type invariant.
class InvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class QuerySource { gsm8k_like, math_like, custom };

struct Query {
  std::string id;
  std::string text;
  std::string gold_answer;
  QuerySource source = QuerySource::custom;
  std::optional<int> difficulty;  // 1 (easiest) .. 5

  /// Throws InvariantError on empty gold answer or out-of-range difficulty.
  void validate() const;
};

struct Step {
  int index = 0;
  std::string text;
  friend bool operator==(const Step&, const Step&) = default;
};

enum class Provenance { sampled, rg1, rg2, rg3, refinement, self_talk };

struct GenParams {
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::string backend_id;
  friend bool operator==(const GenParams&, const GenParams&) = default;
};

/// Splits a response into steps: one per non-blank line.
std::vector<std::string> segment_steps(std::string_view text);

/// An ordered list of steps with the final answer extracted from them.
/// The answer is always derived, never supplied, so it cannot drift from the text.
class ReasoningPath {
 public:
  ReasoningPath() = default;

  static ReasoningPath from_text(std::string_view text, Provenance provenance, GenParams params = {});
  static ReasoningPath from_steps(std::vector<std::string> steps, Provenance provenance,
                                  GenParams params = {});

  const std::vector<Step>& steps() const noexcept { return steps_; }
  std::size_t size() const noexcept { return steps_.size(); }
  const std::optional<Answer>& final_answer() const noexcept { return final_answer_; }
  Provenance provenance() const noexcept { return provenance_; }
  const GenParams& gen_params() const noexcept { return params_; }

  /// Steps joined with '\n'.
  std::string text() const;
  /// Steps [begin, end) as strings.
  std::vector<std::string> step_texts(std::size_t begin = 0, std::size_t end = SIZE_MAX) const;

  friend bool operator==(const ReasoningPath& a, const ReasoningPath& b) {
    return a.steps_ == b.steps_ && a.provenance_ == b.provenance_ && a.params_ == b.params_;
  }

 private:
  std::vector<Step> steps_;
  std::optional<Answer> final_answer_;
  Provenance provenance_ = Provenance::sampled;
  GenParams params_;
};

enum class StepVerdict { correct, incorrect, not_evaluated };
enum class OverallVerdict { correct, flawed };

/// Step-level judgement of a reasoning path.
///
/// Invariants (checked by make()): flawed iff first_error_index is set; steps
/// before the first error are correct and the first error step is incorrect;
/// not_evaluated only appears after the first error; a correct critique marks
/// every step correct. step_feedback is either empty or one entry per verdict.
class Critique {
 public:
  Critique() = default;

  static Critique make(std::vector<StepVerdict> verdicts, std::optional<int> first_error_index,
                       std::string feedback, std::vector<std::string> step_feedback = {});

  /// Every step correct.
  static Critique all_correct(std::size_t steps, std::string feedback = {});
  /// Steps before k correct, k incorrect, the rest not evaluated.
  static Critique flawed_at(std::size_t steps, int k, std::string feedback,
                            std::string step_note = {});

  const std::vector<StepVerdict>& step_verdicts() const noexcept { return verdicts_; }
  const std::optional<int>& first_error_index() const noexcept { return first_error_; }
  const std::string& feedback() const noexcept { return feedback_; }
  const std::vector<std::string>& step_feedback() const noexcept { return step_feedback_; }
  OverallVerdict overall_verdict() const noexcept {
    return first_error_ ? OverallVerdict::flawed : OverallVerdict::correct;
  }
  bool flawed() const noexcept { return first_error_.has_value(); }

  /// Feedback attached to step i: its own note, or the overall feedback for the first error.
  std::string feedback_for_step(std::size_t i) const;

  friend bool operator==(const Critique&, const Critique&) = default;

 private:
  std::vector<StepVerdict> verdicts_;
  std::optional<int> first_error_;
  std::string feedback_;
  std::vector<std::string> step_feedback_;
};

struct RefinementRecord {
  std::string query_id;
  ReasoningPath base_path;
  Critique critique;
  ReasoningPath refined_path;
  int round_index = 1;

  void validate() const;
};

struct Round {
  Critique critique;
  ReasoningPath refinement;
  friend bool operator==(const Round&, const Round&) = default;
};

/// (x, y_0, c_1, y_1, ...). Round 0 is the initial response; rounds are 1-based.
struct InteractionHistory {
  Query query;
  ReasoningPath initial;
  std::vector<Round> rounds;

  /// y_{i-1} for the next round i.
  const ReasoningPath& latest() const noexcept {
    return rounds.empty() ? initial : rounds.back().refinement;
  }
};

/// Returns a new history with (critique, refinement) as round `round_index`.
/// Throws InvariantError unless round_index == rounds.size() + 1.
InteractionHistory append_round(const InteractionHistory& history, Critique critique,
                                ReasoningPath refinement, int round_index);

enum class SegmentKind { query, response, critique };

struct ContextSegment {
  SegmentKind kind;
  std::string text;
  friend bool operator==(const ContextSegment&, const ContextSegment&) = default;
};

enum class ContextRole { critique, refinement };
enum class ContextMode { full, truncated };

/// Segments shown to the critic (role=critique) or the actor (role=refinement)
/// for the next round i = rounds.size() + 1. Full mode is the whole history;
/// truncated mode is (x, y_{i-1}) for critique and (x, y_{i-1}, c_i) for
/// refinement. `current` is c_i and is required for role=refinement.
std::vector<ContextSegment> context_view(const InteractionHistory& history, ContextRole role,
                                         ContextMode mode, const Critique* current = nullptr);

std::string to_string(QuerySource v);
std::string to_string(Provenance v);
std::string to_string(StepVerdict v);
std::string to_string(OverallVerdict v);
std::string to_string(SegmentKind v);
std::string to_string(ContextMode v);
QuerySource parse_query_source(std::string_view s);
Provenance parse_provenance(std::string_view s);
StepVerdict parse_step_verdict(std::string_view s);
SegmentKind parse_segment_kind(std::string_view s);
ContextMode parse_context_mode(std::string_view s);

}  // namespace critloop
