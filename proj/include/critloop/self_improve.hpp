#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "critloop/core.hpp"
#include "critloop/gateway.hpp"
#include "critloop/prompts.hpp"
#include "critloop/serialize.hpp"
#include "critloop/store.hpp"

namespace critloop {

struct LoopConfig {
  int T = 3;
  int N = 5;
  int L = 2;  // 0 gives the vanilla loop
  double temperature = 0.7;
  double beta = 1.0;
  std::string trainer_hook = "noop";  // command template; {artifact} is replaced by the path
  int refinements_per_critique = 1;
  double max_failure_fraction = 0.05;
  bool train_on_new_refinements = false;
  double lr = 2e-5;
  int epochs = 1;
  std::string base_checkpoint_id;  // defaults to the initial actor id

  void validate() const;
  json to_json() const;
};

struct IterationCounts {
  std::size_t sampled = 0;
  std::size_t correct_initial = 0;
  std::size_t incorrect_initial = 0;
  std::size_t critiques_issued = 0;
  std::size_t refinements_issued = 0;
  std::size_t refinements_correct = 0;
  std::size_t failures = 0;  // failed backend calls, excluded
  std::size_t duplicate_solutions = 0;  // exact repeats inside D_correct^t, dropped at assembly
};

struct IterationLedger {
  int t = 0;
  IterationCounts counts;
  std::array<std::size_t, 5> solutions_per_level{};
  std::array<double, 5> proportion_per_level{};  // share of D_correct^t at each difficulty
  std::vector<std::string> artifacts;
  std::string base_checkpoint_id;
  std::string actor_id;
  std::string query_set_hash;
};

json to_json(const IterationLedger& l);
IterationLedger ledger_from_json(const json& j);

struct Solution {
  std::string query_id;
  ReasoningPath path;
};

json to_json(const Solution& s);
Solution solution_from_json(const json& j);

/// Order-independent digest of the query ids, used to pair runs.
std::string query_set_hash(const std::vector<Query>& queries);

class IterationAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The stop flag was raised; partial results are on disk.
class Interrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainerFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExploreContext {
  Gateway& gateway;
  const PromptLibrary& prompts;
  std::string critic_id;
  std::uint64_t seed = 0;
  int threads = 1;
  int max_tokens = 1024;
  const std::atomic<bool>* stop = nullptr;
  /// Per-query results are appended here as they finish and reused on restart.
  std::optional<std::filesystem::path> partial_file;
};

struct ExploreResult {
  std::vector<Solution> correct;                // D_correct^t in query order; repeats are only counted
  std::vector<RefinementRecord> refinements;    // D_refine^t: correct refinements
  IterationLedger ledger;
};

/// Exploration step of iteration t with actor pi^{t-1}. Correct samples go
/// straight to D_correct^t; each incorrect sample gets L critiques and
/// refinements_per_critique refinements per critique.
ExploreResult explore(const ExploreContext& ctx, int t, const std::string& actor_id, const std::vector<Query>& queries,
                      const LoopConfig& config);

struct TrainingHeader {
  double beta = 1.0;
  std::string base_checkpoint_id;
  int iteration = 0;
  double lr = 2e-5;
  int epochs = 1;
};

struct TrainingArtifact {
  TrainingHeader header;
  std::vector<Solution> reasoning;              // D_reason u D_correct^t
  std::vector<RefinementRecord> refinement;     // D_refine (+ D_refine^t when enabled)
  std::vector<RefinementRecord> held_out;       // D_refine^t exported but not for training
  std::size_t duplicates_dropped = 0;
};

/// D_train^t = D_reason u D_correct^t, deduplicated on (query_id, text);
/// every D_correct^t path is re-checked to earn reward 1.
TrainingArtifact assemble_training_set(const std::vector<Query>& queries, const std::vector<Solution>& d_correct,
                                       const std::vector<Solution>& d_reason,
                                       const std::vector<RefinementRecord>& d_refine, TrainingHeader header);

std::vector<json> training_records(const std::vector<Query>& queries, const TrainingArtifact& a);

struct TrainerOutcome {
  std::string descriptor;  // last stdout line, or "noop"
  std::string actor_id;    // backend id for pi^t
};

/// Resolves a descriptor into a backend; returns nullptr when it cannot.
using BackendFactory = std::function<std::shared_ptr<Backend>(const std::string& descriptor)>;

/// Runs the hook with {artifact} substituted. "noop" (or an empty hook, or a
/// hook printing "noop" or the current id) keeps the current actor. A
/// non-zero exit raises TrainerFailed.
TrainerOutcome invoke_trainer(Gateway& gateway, const std::string& hook, const std::filesystem::path& artifact,
                              const std::string& current_actor, int t, const BackendFactory& factory);

/// Registers a descriptor printed by an earlier hook run as the actor for iteration t.
std::string register_trainer_descriptor(Gateway& gateway, const std::string& descriptor,
                                        const std::string& current_actor, int t, const BackendFactory& factory);

/// Per iteration and level: proportion in the critique run minus proportion in the baseline.
std::vector<std::array<double, 5>> tail_narrowing_report(const std::vector<IterationLedger>& ledgers,
                                                         const std::vector<IterationLedger>& baseline);

struct SelfImproveContext {
  Gateway& gateway;
  const PromptLibrary& prompts;
  std::string actor_id;
  std::string critic_id;
  std::uint64_t seed = 0;
  int threads = 1;
  int max_tokens = 1024;
  const std::atomic<bool>* stop = nullptr;
  BackendFactory factory;
};

struct SelfImproveResult {
  std::vector<IterationLedger> ledgers;
  std::string final_actor_id;
};

/// Algorithm driver over run stages explore-<t> and learn-<t>. Completed
/// stages are skipped; an interrupted exploration resumes from its partial file.
SelfImproveResult run_self_improve(const SelfImproveContext& ctx, RunManifest& manifest,
                                   const std::vector<Query>& queries, const LoopConfig& config,
                                   const std::vector<Solution>& d_reason = {},
                                   const std::vector<RefinementRecord>& d_refine = {});

}  // namespace critloop
