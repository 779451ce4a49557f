#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "critloop/core.hpp"
#include "critloop/gateway.hpp"
#include "critloop/rng.hpp"

namespace critloop {

struct StochasticActorSpec {
  std::array<double, 5> accuracy{1, 1, 1, 1, 1};  // a[level-1]
  double dominant_mass = 0.5;                      // gamma
  int distractor_pool = 4;                         // m
  void validate() const;
};

struct StochasticCriticSpec {
  double d_flaw = 0.8;
  double d_correct = 0.8;
  double h = 0.3;
  double p_keep = 0.9;
  void validate() const;
};

/// Queries known to the simulated backends, looked up by id or by text.
class SimWorld {
 public:
  SimWorld() = default;
  explicit SimWorld(const std::vector<Query>& queries);
  void add(const Query& q);
  const Query* find(const std::string& id) const;
  const Query* find_by_text(const std::string& text) const;

 private:
  std::map<std::string, Query> by_id_;
  std::map<std::string, std::string> id_by_text_;
};

/// Level used for the accuracy table: difficulty, or 1 when unset.
int sim_level(const Query& q);

/// m wrong answers for q; index 0 is the dominant one. Never equivalent to gold.
std::vector<std::string> distractors(const Query& q, int m);

/// Draws an answer: gold with probability p_correct, otherwise a distractor
/// (dominant with mass gamma, the rest uniform).
std::string sample_answer(const Query& q, const StochasticActorSpec& spec, double p_correct, Rng& rng);

/// Canonical simulated solution text ending in "#### answer".
std::string sim_path_text(const std::string& answer, std::uint64_t tag);

/// Verdict drawn per the critic spec; a flawed verdict points at a uniformly drawn step.
Critique simulate_critique(const StochasticCriticSpec& spec, bool path_is_correct, std::size_t steps,
                           std::uint64_t seed);

struct RefineState {
  bool was_correct = false;
  bool was_flagged = false;
  std::string previous_answer;  // kept when a flawed path is not fixed
};

/// Refinement of a flagged path; throws std::logic_error if not flagged.
ReasoningPath simulate_refinement(const StochasticCriticSpec& critic, const StochasticActorSpec& actor,
                                  const Query& q, const RefineState& state, std::uint64_t seed);

struct SimActorOptions {
  // Per-attempt probability that a continuation / injection ends correct.
  // Unset means a[level].
  std::optional<double> continue_correct;
  std::optional<double> inject_correct;
};

/// Stochastic actor: reason, refine, continue, inject, refine-from-step, smooth.
class SimulatedActor : public Backend {
 public:
  SimulatedActor(std::shared_ptr<const SimWorld> world, StochasticActorSpec actor, StochasticCriticSpec refine,
                 SimActorOptions options = {});
  std::vector<std::string> generate(const GenerationRequest& req) override;
  std::string kind() const override { return "simulated-actor"; }

 private:
  std::string one(const GenerationRequest& req, const Query& q, int sample) const;

  std::shared_ptr<const SimWorld> world_;
  StochasticActorSpec actor_;
  StochasticCriticSpec refine_;
  SimActorOptions options_;
};

/// Stochastic critic: critique, critique-partial, step-verdict.
class SimulatedCritic : public Backend {
 public:
  SimulatedCritic(std::shared_ptr<const SimWorld> world, StochasticCriticSpec spec);
  std::vector<std::string> generate(const GenerationRequest& req) override;
  std::string kind() const override { return "simulated-critic"; }

 private:
  std::shared_ptr<const SimWorld> world_;
  StochasticCriticSpec spec_;
};

}  // namespace critloop
