#include "critloop/oracle.hpp"

namespace critloop {

std::optional<Answer> extract_final_answer(const ReasoningPath& path) { return path.final_answer(); }

Answer gold_answer(const Query& query) {
  Answer a = Answer::parse(query.gold_answer);
  if (a.empty()) throw ConfigError("query " + query.id + ": gold answer '" + query.gold_answer + "' is unparseable");
  return a;
}

int reward(const Answer& gold, const std::optional<Answer>& answer) {
  return answer && !answer->empty() && equivalent(gold, *answer) ? 1 : 0;
}

int reward(const Query& query, const ReasoningPath& path) { return reward(gold_answer(query), path.final_answer()); }

int reward(const Query& query, std::string_view response_text) {
  return reward(gold_answer(query), extract_answer(response_text));
}

}  // namespace critloop
