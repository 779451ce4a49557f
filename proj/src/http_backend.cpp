#include "critloop/http_backend.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "critloop/core.hpp"

namespace critloop {

namespace {

using nlohmann::json;

bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

struct Slot {
  std::mutex& mu;
  std::condition_variable& cv;
  int& in_flight;
  Slot(std::mutex& m, std::condition_variable& c, int& n, int cap, std::atomic<int>& peak) : mu(m), cv(c), in_flight(n) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return in_flight < cap; });
    ++in_flight;
    int p = peak.load();
    while (in_flight > p && !peak.compare_exchange_weak(p, in_flight)) {
    }
  }
  ~Slot() {
    {
      std::lock_guard lock(mu);
      --in_flight;
    }
    cv.notify_one();
  }
};

}  // namespace

HttpBackendConfig apply_env_overrides(HttpBackendConfig cfg, const std::string& prefix) {
  if (const char* e = std::getenv((prefix + "_ENDPOINT").c_str()); e && *e) cfg.endpoint = e;
  if (const char* k = std::getenv((prefix + "_API_KEY").c_str()); k && *k) cfg.api_key = k;
  return cfg;
}

std::chrono::milliseconds backoff_delay(const HttpBackendConfig& cfg, int attempt) {
  long long d = cfg.backoff_base_ms;
  for (int i = 2; i < attempt && d < cfg.backoff_cap_ms; ++i) d *= 2;
  return std::chrono::milliseconds(std::min<long long>(d, cfg.backoff_cap_ms));
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.max_concurrency < 1) throw ConfigError("http backend: max_concurrency must be >= 1");
  if (cfg_.max_retries < 1) throw ConfigError("http backend: max_retries must be >= 1");
  auto scheme = cfg_.endpoint.find("://");
  if (scheme == std::string::npos) throw ConfigError("http backend: endpoint '" + cfg_.endpoint + "' is not a URL");
  auto slash = cfg_.endpoint.find('/', scheme + 3);
  base_url_ = cfg_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
  sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::vector<std::string> HttpBackend::generate(const GenerationRequest& req) {
  std::vector<std::string> out;
  // Servers may cap n; ask again for the remainder, a bounded number of times.
  for (int round = 0; round < req.n && static_cast<int>(out.size()) < req.n; ++round) {
    auto got = post(req, req.n - static_cast<int>(out.size()));
    if (got.empty()) break;
    for (auto& s : got)
      if (static_cast<int>(out.size()) < req.n) out.push_back(std::move(s));
  }
  if (static_cast<int>(out.size()) != req.n)
    throw MalformedResponse("http backend: got " + std::to_string(out.size()) + " choices for n=" + std::to_string(req.n));
  return out;
}

std::vector<std::string> HttpBackend::post(const GenerationRequest& req, int n) {
  json body;
  body["model"] = cfg_.model;
  body["messages"] = json::array();
  for (const auto& m : req.messages) body["messages"].push_back({{"role", m.role}, {"content", m.text}});
  body["temperature"] = req.temperature;
  body["max_tokens"] = req.max_tokens;
  body["n"] = n;
  body["seed"] = req.seed;
  std::string payload = body.dump();

  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 1) sleeper_(backoff_delay(cfg_, attempt));
    attempts_++;
    httplib::Result res{nullptr, httplib::Error::Unknown};
    {
      Slot slot(slot_mu_, slot_cv_, in_flight_, cfg_.max_concurrency, peak_);
      httplib::Client cli(base_url_);
      cli.set_connection_timeout(cfg_.timeout_s, 0);
      cli.set_read_timeout(cfg_.timeout_s, 0);
      cli.set_write_timeout(cfg_.timeout_s, 0);
      res = cli.Post(path_, headers, payload, "application/json");
    }
    if (!res) {
      last_error = "connection error: " + httplib::to_string(res.error());
      continue;
    }
    if (transient_status(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendUnavailable("http backend: HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw MalformedResponse(std::string("http backend: reply is not JSON: ") + e.what());
    }
    if (!reply.contains("choices") || !reply["choices"].is_array())
      throw MalformedResponse("http backend: reply has no choices array");
    std::vector<std::string> out;
    for (const auto& c : reply["choices"]) {
      if (!c.contains("message") || !c["message"].contains("content") || !c["message"]["content"].is_string())
        throw MalformedResponse("http backend: choice without message.content");
      out.push_back(c["message"]["content"].get<std::string>());
    }
    return out;
  }
  throw BackendUnavailable("http backend: " + std::to_string(cfg_.max_retries) + " attempts failed, last: " + last_error);
}

}  // namespace critloop
