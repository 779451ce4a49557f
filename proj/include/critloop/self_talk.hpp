#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "critloop/core.hpp"
#include "critloop/gateway.hpp"
#include "critloop/prompts.hpp"
#include "critloop/serialize.hpp"

namespace critloop {

enum class SegmentRole { reasoning_step, reflection, transition };
std::string to_string(SegmentRole r);

struct ChainSegment {
  SegmentRole kind = SegmentRole::reasoning_step;
  std::string text;
  friend bool operator==(const ChainSegment&, const ChainSegment&) = default;
};

struct ThinkingChain {
  std::vector<ChainSegment> segments;
  bool clean = false;
  int iterations_used = 0;
  bool rigid_flag = false;  // smoothing failed twice, emitted as is
  bool smoothed = false;

  // Working state for refinement: the current reasoning path and its critique.
  std::vector<std::string> path;
  Critique critique;

  /// One line per segment; reflections are written as "Reflection: ...".
  std::string text() const;
};

/// Reasoning steps with a reflection after every step that has feedback.
/// With `affirmations`, correct steps without feedback get a short affirmation.
/// Throws std::invalid_argument when the verdict count differs from the step count.
ThinkingChain interleave_feedback(const ReasoningPath& path, const Critique& critique, bool affirmations = false);

struct SelfTalkContext {
  Gateway& gateway;
  const PromptLibrary& prompts;
  std::string actor_id;
  std::string critic_id;
  std::string smoother_id;
  std::uint64_t seed = 0;
  int threads = 1;
  int max_tokens = 1024;
  int max_iters = 4;
  double temperature = 0.7;
  bool affirmations = false;
};

/// Refines from the first wrong step and re-critiques the refined suffix until
/// a pass is clean or max_iters critic passes have been spent (the critique
/// already in the chain counts as pass 1). A clean input returns with
/// iterations_used 0. Chains still flawed at the budget come back with clean = false.
ThinkingChain iterate_until_clean(const SelfTalkContext& ctx, const Query& q, ThinkingChain chain);

/// One smoothing call; the answer must survive, else one retry with another
/// seed, else the rigid chain with rigid_flag set. Requires chain.clean.
ThinkingChain smooth(const SelfTalkContext& ctx, const Query& q, const ThinkingChain& chain);

/// reward(q, chain text) == 1.
bool verify_and_store(const ThinkingChain& chain, const Query& q);

enum class SelfTalkOutcome { stored, rejected, dropped, failed };
std::string to_string(SelfTalkOutcome o);

struct SelfTalkResult {
  Query query;
  SelfTalkOutcome outcome = SelfTalkOutcome::failed;
  std::optional<ThinkingChain> chain;
  std::string error;
};

/// Full pipeline per query: sample, critique, iterate, smooth, verify.
std::vector<SelfTalkResult> build_self_talk(const SelfTalkContext& ctx, const std::vector<Query>& queries);

/// Record {query_id, self_talk_text, iterations_used, rigid_flag}.
json to_json(const Query& q, const ThinkingChain& chain);

struct SelfTalkStats {
  std::size_t stored = 0, rejected = 0, dropped = 0, failed = 0;
};

/// Writes the stored records (only those with reward 1) and returns the tallies.
SelfTalkStats write_self_talk(const std::vector<SelfTalkResult>& results, const std::filesystem::path& file);

}  // namespace critloop
