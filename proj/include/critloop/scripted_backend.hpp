#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "critloop/gateway.hpp"

namespace critloop {

/// No scripted rule matched the request.
class ScriptMiss : public BackendError {
 public:
  using BackendError::BackendError;
};

struct ScriptRule {
  std::optional<std::string> hash;      // prompt_hash of the messages
  std::optional<std::string> contains;  // substring of prompt_key
  std::optional<Task> task;
  std::vector<std::string> completions; // sample i gets completions[i % size]
};

/// Table-driven backend. Exact-hash rules win, then substring rules in
/// insertion order, then the handler, then the default completion.
class ScriptedBackend : public Backend {
 public:
  using Handler = std::function<std::optional<std::string>(const GenerationRequest&, int sample)>;

  ScriptedBackend() = default;

  /// JSONL lines of {match, completions}; match is a prompt hash string or
  /// an object {hash?, contains?, task?}.
  static ScriptedBackend from_jsonl(const std::filesystem::path& file);

  ScriptedBackend& on_hash(std::string hash, std::vector<std::string> completions);
  ScriptedBackend& on_contains(std::string needle, std::vector<std::string> completions,
                               std::optional<Task> task = std::nullopt);
  ScriptedBackend& on_task(Task task, std::vector<std::string> completions);
  ScriptedBackend& add_rule(ScriptRule rule);
  ScriptedBackend& set_handler(Handler h);
  ScriptedBackend& set_default(std::string completion);
  /// Sleep this long before answering each request.
  ScriptedBackend& set_latency_ms(int ms);

  std::vector<std::string> generate(const GenerationRequest& req) override;
  std::string kind() const override { return "scripted"; }

 private:
  std::string one(const GenerationRequest& req, const std::string& hash, const std::string& key, int sample) const;

  std::vector<ScriptRule> rules_;
  Handler handler_;
  std::optional<std::string> default_;
  int latency_ms_ = 0;
};

}  // namespace critloop
