#pragma once

#include <optional>
#include <string_view>

#include "critloop/answer.hpp"
#include "critloop/core.hpp"

namespace critloop {

std::optional<Answer> extract_final_answer(const ReasoningPath& path);

/// Parsed gold answer; ConfigError if it normalizes to nothing.
Answer gold_answer(const Query& query);

/// r(x, y): 1 iff the path's final answer is present and equivalent to gold.
int reward(const Query& query, const ReasoningPath& path);
int reward(const Query& query, std::string_view response_text);
int reward(const Answer& gold, const std::optional<Answer>& answer);

}  // namespace critloop
