#include "critloop/gateway.hpp"

#include "critloop/core.hpp"
#include "critloop/hash.hpp"

namespace critloop {

namespace {

constexpr std::pair<Task, std::string_view> kTasks[] = {
    {Task::reason, "reason"},
    {Task::critique, "critique"},
    {Task::refine, "refine"},
    {Task::continue_from, "continue"},
    {Task::inject, "inject"},
    {Task::step_verdict, "step-verdict"},
    {Task::critique_partial, "critique-partial"},
    {Task::refine_from_step, "refine-from-step"},
    {Task::smooth, "smooth"},
};

}  // namespace

std::string to_string(Task t) {
  for (const auto& [v, name] : kTasks)
    if (v == t) return std::string(name);
  return "?";
}

Task parse_task(std::string_view s) {
  for (const auto& [v, name] : kTasks)
    if (name == s) return v;
  throw std::invalid_argument("unknown task: " + std::string(s));
}

void GenerationRequest::validate() const {
  if (n < 1) throw std::invalid_argument("generation request: n must be >= 1");
  if (temperature < 0) throw std::invalid_argument("generation request: negative temperature");
  if (messages.empty()) throw std::invalid_argument("generation request: no messages");
}

std::string prompt_key(const std::vector<Message>& messages) {
  std::string key;
  for (const auto& m : messages) {
    key += m.role;
    key += '\x1f';
    key += m.text;
    key += '\x1e';
  }
  return key;
}

std::string prompt_hash(const std::vector<Message>& messages) { return sha256_hex(prompt_key(messages)); }

void Gateway::register_backend(const std::string& id, std::shared_ptr<Backend> backend) {
  if (!backend) throw std::invalid_argument("gateway: null backend for " + id);
  std::lock_guard lock(mu_);
  aliases_.erase(id);
  backends_[id] = std::move(backend);
}

void Gateway::alias(const std::string& alias, const std::string& target) {
  std::lock_guard lock(mu_);
  std::string t = resolve(target);
  if (!backends_.count(t)) throw ConfigError("gateway: alias target '" + target + "' is not registered");
  if (alias == t) return;
  backends_.erase(alias);
  aliases_[alias] = t;
}

std::string Gateway::resolve(const std::string& id) const {
  std::string cur = id;
  for (int hops = 0; hops < 64; ++hops) {
    auto it = aliases_.find(cur);
    if (it == aliases_.end()) return cur;
    cur = it->second;
  }
  throw ConfigError("gateway: alias cycle at " + id);
}

bool Gateway::has(const std::string& id) const {
  std::lock_guard lock(mu_);
  return backends_.count(resolve(id)) > 0;
}

std::shared_ptr<Backend> Gateway::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = backends_.find(resolve(id));
  if (it == backends_.end()) throw ConfigError("gateway: no backend registered as '" + id + "'");
  return it->second;
}

std::vector<std::string> Gateway::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : backends_) out.push_back(id);
  for (const auto& [id, _] : aliases_) out.push_back(id);
  return out;
}

std::vector<std::string> Gateway::generate(const GenerationRequest& req) {
  req.validate();
  std::shared_ptr<Backend> backend;
  std::string id;
  {
    std::lock_guard lock(mu_);
    id = resolve(req.backend_id);
    auto it = backends_.find(id);
    if (it == backends_.end()) throw ConfigError("gateway: no backend registered as '" + req.backend_id + "'");
    backend = it->second;
    stats_[id].requests++;
    if (recording_) log_.push_back(req);
  }
  std::vector<std::string> out;
  try {
    out = backend->generate(req);
    if (out.size() != static_cast<std::size_t>(req.n))
      throw MalformedResponse("backend " + req.backend_id + " returned " + std::to_string(out.size()) +
                              " completions for n=" + std::to_string(req.n));
  } catch (...) {
    std::lock_guard lock(mu_);
    stats_[id].failures++;
    throw;
  }
  std::lock_guard lock(mu_);
  stats_[id].completions += out.size();
  return out;
}

BackendStats Gateway::stats(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = stats_.find(resolve(id));
  return it == stats_.end() ? BackendStats{} : it->second;
}

void Gateway::set_recording(bool on) {
  std::lock_guard lock(mu_);
  recording_ = on;
}

std::vector<GenerationRequest> Gateway::request_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

void Gateway::clear_log() {
  std::lock_guard lock(mu_);
  log_.clear();
}

}  // namespace critloop
