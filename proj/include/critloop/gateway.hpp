#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace critloop {

struct Message {
  std::string role;  // system | user | assistant
  std::string text;
  friend bool operator==(const Message&, const Message&) = default;
};

/// What a request is for. Simulated and scripted backends route on it;
/// the HTTP backend ignores it.
enum class Task {
  reason,
  critique,
  refine,
  continue_from,
  inject,
  step_verdict,
  critique_partial,
  refine_from_step,
  smooth,
};

std::string to_string(Task t);
Task parse_task(std::string_view s);

struct GenerationRequest {
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  int n = 1;
  std::uint64_t seed = 0;
  std::string backend_id;
  Task task = Task::reason;
  std::string query_id;    // routing hint for simulated backends
  std::string request_id;  // caller-chosen key for aggregation and logs

  /// Throws std::invalid_argument on n < 1, negative temperature or no messages.
  void validate() const;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Retries exhausted or the backend refused the request outright.
class BackendUnavailable : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The wire reply could not be decoded into n completions.
class MalformedResponse : public BackendError {
 public:
  using BackendError::BackendError;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Exactly req.n completions, indexed by sample.
  virtual std::vector<std::string> generate(const GenerationRequest& req) = 0;
  virtual std::string kind() const = 0;
};

struct BackendStats {
  std::uint64_t requests = 0;
  std::uint64_t completions = 0;
  std::uint64_t failures = 0;
};

/// Registry of named backends. Thread-safe.
class Gateway {
 public:
  void register_backend(const std::string& id, std::shared_ptr<Backend> backend);
  /// Makes `alias` resolve to whatever `target` resolves to.
  void alias(const std::string& alias, const std::string& target);
  bool has(const std::string& id) const;
  std::shared_ptr<Backend> get(const std::string& id) const;
  std::vector<std::string> ids() const;

  /// Routes by req.backend_id. Throws ConfigError for an unknown id and
  /// MalformedResponse if the backend returns the wrong number of samples.
  std::vector<std::string> generate(const GenerationRequest& req);

  BackendStats stats(const std::string& id) const;

  /// When on, every request is copied into the log before dispatch.
  void set_recording(bool on);
  std::vector<GenerationRequest> request_log() const;
  void clear_log();

 private:
  std::string resolve(const std::string& id) const;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Backend>> backends_;
  std::map<std::string, std::string> aliases_;
  std::map<std::string, BackendStats> stats_;
  bool recording_ = false;
  std::vector<GenerationRequest> log_;
};

/// Concatenation used for prompt hashing: role 0x1f text 0x1e per message.
std::string prompt_key(const std::vector<Message>& messages);
/// sha256 hex of prompt_key.
std::string prompt_hash(const std::vector<Message>& messages);

}  // namespace critloop
