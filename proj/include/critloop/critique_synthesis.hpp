#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "critloop/core.hpp"
#include "critloop/flaw_synthesis.hpp"
#include "critloop/gateway.hpp"
#include "critloop/prompts.hpp"
#include "critloop/serialize.hpp"

namespace critloop {

enum class CritiqueStrategy { holistic, incremental };
std::string to_string(CritiqueStrategy s);
CritiqueStrategy parse_critique_strategy(std::string_view s);

struct CritiqueCandidate {
  std::string query_id;
  ReasoningPath target_path;
  HintLevel hint = HintLevel::none;
  Critique critique;
  std::string annotator_backend_id;
  CritiqueStrategy strategy = CritiqueStrategy::holistic;

  void validate() const;
};

json to_json(const CritiqueCandidate& c);
CritiqueCandidate candidate_from_json(const json& j);

/// What the annotator is told about the target path.
struct HintInfo {
  HintLevel level = HintLevel::none;
  std::optional<ReasoningPath> reference;
  std::optional<int> start_step;
  std::optional<std::string> error_type;
  std::optional<std::string> error_detail;
};

HintInfo hint_of(const FlawRecord& r);

/// Instruction sentence plus the extra sections sent for a hint.
std::string hint_instruction(const HintInfo& h);
std::vector<Section> hint_sections(const HintInfo& h);

struct AnnotateContext {
  Gateway& gateway;
  const PromptLibrary& prompts;
  std::string annotator_id;
  std::uint64_t seed = 0;
  int max_tokens = 1024;
};

/// Annotation that could not be parsed. `reason` is logged.
struct AnnotationOutcome {
  std::optional<CritiqueCandidate> candidate;
  std::string failure;
  int calls = 0;
};

AnnotationOutcome critique_holistic(const AnnotateContext& ctx, const Query& q, const ReasoningPath& path,
                                    const HintInfo& hint);
/// One call per step; stops at the first incorrect step.
AnnotationOutcome critique_incremental(const AnnotateContext& ctx, const Query& q, const ReasoningPath& path,
                                       const HintInfo& hint);

enum class Retention { keep, discard };

/// Correct path: keep iff every verdict is correct. Throws std::invalid_argument
/// if the target path does not earn reward 1.
Retention validate_correct_path_critique(const Query& q, const CritiqueCandidate& c);

/// Flawed path: keep iff the critique also says flawed.
Retention cross_check_flawed(const Query& q, const CritiqueCandidate& c);

enum class FilterMode { soft, hard };
std::string to_string(FilterMode m);
FilterMode parse_filter_mode(std::string_view s);

struct FilterVerdict {
  int k = 10;
  int successes = 0;
  FilterMode mode = FilterMode::soft;
  double tau = 0.3;
  bool retained = false;
  int failed_samples = 0;  // backend errors, counted as unsuccessful
};

/// Soft: successes/k > tau. Hard: successes >= 1.
bool filter_decision(int successes, int k, FilterMode mode, double tau);

struct RefineContext {
  Gateway& gateway;
  const PromptLibrary& prompts;
  std::string refiner_id;
  std::uint64_t seed = 0;
  double temperature = kExplorationTemperature;
  int max_tokens = 1024;
};

/// k separate refinements of (query, path, critique), scored by reward.
FilterVerdict mc_filter(const RefineContext& ctx, const Query& q, const CritiqueCandidate& c, int k = 10,
                        double tau = 0.3, FilterMode mode = FilterMode::soft);

struct DatasetStats {
  std::size_t queries = 0;
  std::size_t golden_paths = 0;  // queries with at least one correct response in the set
  std::size_t critiques = 0;
  std::size_t duplicates_dropped = 0;
};

json to_json(const DatasetStats& s);

/// Writes (query, response, critique) JSONL and `<file>.stats.json`. Rows
/// repeating (query_id, path hash, critique hash) are dropped.
DatasetStats emit_dataset(const std::vector<Query>& queries, const std::vector<CritiqueCandidate>& retained,
                          const std::filesystem::path& file);

}  // namespace critloop
