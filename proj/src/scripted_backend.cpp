#include "critloop/scripted_backend.hpp"

#include <chrono>
#include <fstream>
#include <thread>

#include "critloop/core.hpp"
#include "critloop/serialize.hpp"

namespace critloop {

ScriptedBackend ScriptedBackend::from_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open script table " + file.string());
  ScriptedBackend b;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = parse_line(line);
      ScriptRule r;
      const json& m = field(j, "match");
      if (m.is_string()) {
        r.hash = m.get<std::string>();
      } else if (m.is_object()) {
        if (m.contains("hash")) r.hash = str_field(m, "hash");
        if (m.contains("contains")) r.contains = str_field(m, "contains");
        if (m.contains("task")) r.task = parse_task(str_field(m, "task"));
      } else {
        throw SchemaError("'match' must be a string or an object");
      }
      r.completions = field(j, "completions").get<std::vector<std::string>>();
      if (r.completions.empty()) throw SchemaError("'completions' is empty");
      b.add_rule(std::move(r));
    } catch (const std::exception& e) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return b;
}

ScriptedBackend& ScriptedBackend::on_hash(std::string hash, std::vector<std::string> completions) {
  return add_rule(ScriptRule{std::move(hash), std::nullopt, std::nullopt, std::move(completions)});
}

ScriptedBackend& ScriptedBackend::on_contains(std::string needle, std::vector<std::string> completions,
                                              std::optional<Task> task) {
  return add_rule(ScriptRule{std::nullopt, std::move(needle), task, std::move(completions)});
}

ScriptedBackend& ScriptedBackend::on_task(Task task, std::vector<std::string> completions) {
  return add_rule(ScriptRule{std::nullopt, std::nullopt, task, std::move(completions)});
}

ScriptedBackend& ScriptedBackend::add_rule(ScriptRule rule) {
  if (rule.completions.empty()) throw std::invalid_argument("script rule without completions");
  rules_.push_back(std::move(rule));
  return *this;
}

ScriptedBackend& ScriptedBackend::set_handler(Handler h) {
  handler_ = std::move(h);
  return *this;
}

ScriptedBackend& ScriptedBackend::set_default(std::string completion) {
  default_ = std::move(completion);
  return *this;
}

ScriptedBackend& ScriptedBackend::set_latency_ms(int ms) {
  latency_ms_ = ms;
  return *this;
}

std::string ScriptedBackend::one(const GenerationRequest& req, const std::string& hash, const std::string& key,
                                 int sample) const {
  auto pick = [sample](const ScriptRule& r) { return r.completions[static_cast<std::size_t>(sample) % r.completions.size()]; };
  for (const auto& r : rules_)
    if (r.hash && *r.hash == hash && (!r.task || *r.task == req.task)) return pick(r);
  for (const auto& r : rules_) {
    if (r.hash) continue;
    if (r.task && *r.task != req.task) continue;
    if (r.contains && key.find(*r.contains) == std::string::npos) continue;
    return pick(r);
  }
  if (handler_)
    if (auto s = handler_(req, sample)) return *s;
  if (default_) return *default_;
  throw ScriptMiss("scripted backend: no rule for task " + to_string(req.task) + " prompt " + hash.substr(0, 12));
}

std::vector<std::string> ScriptedBackend::generate(const GenerationRequest& req) {
  if (latency_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms_));
  std::string key = prompt_key(req.messages);
  std::string hash = prompt_hash(req.messages);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(req.n));
  for (int i = 0; i < req.n; ++i) out.push_back(one(req, hash, key, i));
  return out;
}

}  // namespace critloop
