#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <string>

#include "critloop/gateway.hpp"

namespace critloop {

struct HttpBackendConfig {
  std::string endpoint;  // full URL, e.g. http://localhost:8000/v1/chat/completions
  std::string model;
  std::string api_key;
  int max_concurrency = 4;  // C
  int max_retries = 3;      // R: total attempts per wire request
  int backoff_base_ms = 250;
  int backoff_cap_ms = 8000;
  int timeout_s = 120;
};

/// Reads `<prefix>_ENDPOINT` and `<prefix>_API_KEY` over the config values when set.
HttpBackendConfig apply_env_overrides(HttpBackendConfig cfg, const std::string& prefix);

/// Sleep before attempt `attempt` (2-based): min(cap, base * 2^(attempt-2)).
std::chrono::milliseconds backoff_delay(const HttpBackendConfig& cfg, int attempt);

/// Chat-completions client. Retries connection errors, 408, 429 and 5xx;
/// anything else fails at once.
class HttpBackend : public Backend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpBackend(HttpBackendConfig cfg);

  std::vector<std::string> generate(const GenerationRequest& req) override;
  std::string kind() const override { return "http"; }

  /// Replaces the real sleep, for tests.
  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }
  int peak_in_flight() const { return peak_.load(); }
  long wire_attempts() const { return attempts_.load(); }

 private:
  std::vector<std::string> post(const GenerationRequest& req, int n);

  HttpBackendConfig cfg_;
  std::string base_url_;
  std::string path_;
  Sleeper sleeper_;

  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;
  std::atomic<int> peak_{0};
  std::atomic<long> attempts_{0};
};

}  // namespace critloop
