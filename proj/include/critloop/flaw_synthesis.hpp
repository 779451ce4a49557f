#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "critloop/core.hpp"
#include "critloop/gateway.hpp"
#include "critloop/prompts.hpp"
#include "critloop/serialize.hpp"

namespace critloop {

/// How much the annotator is told about a flaw. Each level carries the
/// fields of the one before it.
enum class HintLevel { none, reference_only, reference_start_step, location_detail };

std::string to_string(HintLevel h);
HintLevel parse_hint_level(std::string_view s);

struct FlawRecord {
  std::string query_id;
  ReasoningPath flawed_path;
  std::optional<ReasoningPath> reference_path;
  HintLevel hint = HintLevel::none;
  std::optional<int> error_start_step;
  std::optional<std::string> error_type;
  std::optional<std::string> error_detail;

  /// Field presence per hint level. Throws InvariantError.
  void validate() const;
};

json to_json(const FlawRecord& r);
FlawRecord flaw_from_json(const json& j);

/// Throws InvariantError unless reward(query, record.flawed_path) == 0.
void check_storable(const Query& q, const FlawRecord& r);

struct SynthContext {
  Gateway& gateway;
  const PromptLibrary& prompts;
  std::string actor_id;
  std::uint64_t seed = 0;
  int max_tokens = 1024;
};

inline constexpr double kExplorationTemperature = 0.7;

struct Rg1Result {
  std::vector<FlawRecord> flawed;
  std::vector<ReasoningPath> correct;
};

/// Samples `budget` responses and splits them by reward.
Rg1Result rg1_sample(const SynthContext& ctx, const Query& q, int budget,
                     double temperature = kExplorationTemperature);

struct ScheduleEntry {
  int step = 0;
  double temperature = 1.0;
  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

/// Steps floor(n/3) .. n-1, each tried at every temperature, temperatures ascending.
std::vector<ScheduleEntry> rg2_default_schedule(std::size_t steps, const std::vector<double>& temperatures = {0.7, 1.0, 1.3});

struct Rg2Outcome {
  std::optional<FlawRecord> record;
  int attempts = 0;
  std::vector<ReasoningPath> correct;  // continuations that stayed correct
};

/// Resamples from each scheduled step, keeping the prefix, until the answer breaks.
Rg2Outcome rg2_error_location(const SynthContext& ctx, const Query& q, const ReasoningPath& correct_path,
                              const std::vector<ScheduleEntry>& schedule);

const std::vector<std::string>& default_taxonomy();

struct Rg3Outcome {
  std::optional<FlawRecord> record;
  int attempts = 0;
  std::vector<ReasoningPath> correct;
};

Rg3Outcome rg3_inject_mistake(const SynthContext& ctx, const Query& q, const ReasoningPath& correct_path,
                              const std::vector<std::string>& taxonomy, int max_attempts = 16);

enum class FlawStrategy { rg1, rg2, rg3 };
FlawStrategy parse_flaw_strategy(std::string_view s);
std::string to_string(FlawStrategy s);

struct CorrectPath {
  std::string query_id;
  ReasoningPath path;
};

struct FlawSynthesisOutput {
  std::vector<FlawRecord> flaws;
  std::vector<CorrectPath> correct;
  int queries_without_reference = 0;  // rg2/rg3: no correct sample to start from
};

/// Stage driver. For rg2/rg3 the reference is the first correct path among
/// `budget` samples. Output order follows `queries`.
FlawSynthesisOutput synthesize_flaws(const SynthContext& ctx, const std::vector<Query>& queries,
                                     FlawStrategy strategy, int budget, int threads,
                                     const std::vector<std::string>& taxonomy = default_taxonomy());

json to_json(const CorrectPath& c);
CorrectPath correct_path_from_json(const json& j);

}  // namespace critloop
