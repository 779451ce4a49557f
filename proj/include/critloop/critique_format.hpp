#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "critloop/core.hpp"

namespace critloop {

// Machine-readable critique trailer shared by annotators, critics and the
// actor's view of a critique:
//
//   <critique>
//   verdicts: correct, correct, incorrect, not-evaluated
//   first_error: 2
//   step 2: the product 5*3 is 15, not 16
//   feedback: free text, may continue over
//   several lines
//   </critique>
//
// Step indices are 0-based. Only the last block in a reply is read; text
// around it is ignored. Either `verdicts` or `first_error` may be omitted and
// is then derived from the other.

class CritiqueParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string format_critique(const Critique& critique);

/// Parses a whole-path critique reply for a path of `steps` steps.
Critique parse_critique_reply(std::string_view reply, std::size_t steps);

struct StepJudgement {
  StepVerdict verdict = StepVerdict::correct;
  std::string feedback;
};

/// Single-step reply: `verdict: correct|incorrect` plus optional `feedback:`.
std::string format_step_judgement(const StepJudgement& judgement);
StepJudgement parse_step_reply(std::string_view reply);

/// True when `text` contains a critique block.
bool contains_critique_block(std::string_view text);

}  // namespace critloop
