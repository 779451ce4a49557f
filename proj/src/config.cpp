#include "critloop/config.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "critloop/hash.hpp"
#include "critloop/http_backend.hpp"
#include "critloop/scripted_backend.hpp"
#include "critloop/simulated_backend.hpp"
#include "critloop/store.hpp"

namespace critloop {

namespace {

const std::set<std::string> kTopLevel{"seed", "threads", "max_tokens", "queries", "prompts",
                                      "backends", "roles", "stages", "run_id"};

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for '") + key + "'");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

void read_typed(RunConfig& c) {
  const json& r = c.raw;
  if (!r.is_object()) throw ConfigError("config: top level must be an object");
  for (auto it = r.begin(); it != r.end(); ++it)
    if (!kTopLevel.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "'");
  c.seed = get_or<std::uint64_t>(r, "seed", 0);
  c.threads = get_or<int>(r, "threads", 1);
  c.max_tokens = get_or<int>(r, "max_tokens", 1024);
  if (c.threads < 1) throw ConfigError("config: threads must be >= 1");
  if (c.max_tokens < 1) throw ConfigError("config: max_tokens must be >= 1");
  std::string q = get_or<std::string>(r, "queries", "");
  c.queries_file = q.empty() ? std::filesystem::path{} : resolve(c.base_dir, q);
  std::string p = get_or<std::string>(r, "prompts", "");
  c.prompts_dir = p.empty() ? std::nullopt : std::optional(resolve(c.base_dir, p));
  json roles = r.value("roles", json::object());
  c.roles.actor = get_or<std::string>(roles, "actor", "actor");
  c.roles.critic = get_or<std::string>(roles, "critic", "critic");
  c.roles.annotator = get_or<std::string>(roles, "annotator", c.roles.critic);
  c.roles.refiner = get_or<std::string>(roles, "refiner", c.roles.actor);
  c.roles.smoother = get_or<std::string>(roles, "smoother", c.roles.actor);
}

std::array<double, 5> accuracy_of(const json& spec) {
  if (!spec.contains("accuracy")) return {1, 1, 1, 1, 1};
  const json& a = spec.at("accuracy");
  if (a.is_number()) {
    double v = a.get<double>();
    return {v, v, v, v, v};
  }
  if (a.is_array() && a.size() == 5) return a.get<std::array<double, 5>>();
  throw ConfigError("config: accuracy must be a number or a list of 5 numbers");
}

StochasticCriticSpec critic_spec(const json& j) {
  StochasticCriticSpec s;
  double d = get_or<double>(j, "d", 0.8);
  s.d_flaw = get_or<double>(j, "d_flaw", d);
  s.d_correct = get_or<double>(j, "d_correct", d);
  s.h = get_or<double>(j, "h", s.h);
  s.p_keep = get_or<double>(j, "p_keep", s.p_keep);
  return s;
}

std::string env_prefix(const std::string& id) {
  std::string out = "CRITLOOP_";
  for (char c : id) out += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(c)) : '_';
  return out;
}

}  // namespace

json RunConfig::stage(const std::string& name) const {
  if (raw.contains("stages") && raw.at("stages").contains(name)) return raw.at("stages").at(name);
  return json::object();
}

void RunConfig::set_stage_value(const std::string& name, const std::string& key, json value) {
  raw["stages"][name][key] = std::move(value);
  read_typed(*this);
}

RunConfig config_from_json(json raw, const std::filesystem::path& base_dir) {
  RunConfig c;
  c.raw = std::move(raw);
  c.base_dir = base_dir;
  read_typed(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::string text;
  try {
    text = read_file(file);
  } catch (const std::exception& e) {
    throw ConfigError("config: cannot read " + file.string() + ": " + e.what());
  }
  json raw;
  try {
    raw = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + file.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(std::move(raw), file.has_parent_path() ? file.parent_path() : std::filesystem::path("."));
}

std::string config_hash(const RunConfig& cfg, const PromptLibrary& prompts) {
  json hashed = cfg.raw;
  hashed.erase("run_id");
  return sha256_hex(hashed.dump() + "\n" + prompts.fingerprint());
}

std::vector<Query> load_queries(const std::filesystem::path& file) {
  if (file.empty()) throw ConfigError("config: no queries file given");
  if (!std::filesystem::exists(file)) throw ConfigError("queries file not found: " + file.string());
  std::vector<Query> out;
  std::set<std::string> ids;
  try {
    for (const auto& j : read_jsonl(file)) {
      if (j.contains("schema_version")) check_record(j);
      Query q = query_from_json(j);
      if (!ids.insert(q.id).second) throw ConfigError("queries: duplicate id " + q.id);
      out.push_back(std::move(q));
    }
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("queries: ") + e.what());
  }
  return out;
}

PromptLibrary load_prompts(const RunConfig& cfg) {
  PromptLibrary lib;
  if (cfg.prompts_dir) {
    if (!std::filesystem::is_directory(*cfg.prompts_dir))
      throw ConfigError("prompts directory not found: " + cfg.prompts_dir->string());
    lib = PromptLibrary::load(*cfg.prompts_dir);
  }
  return lib;
}

std::shared_ptr<Backend> make_backend(const std::string& id, const json& spec, const std::vector<Query>& queries,
                                      const std::filesystem::path& base_dir) {
  if (!spec.is_object()) throw ConfigError("backend " + id + ": spec must be an object");
  std::string kind = get_or<std::string>(spec, "kind", "");
  try {
    if (kind == "simulated-actor" || kind == "simulated-critic") {
      auto world = std::make_shared<SimWorld>(queries);
      if (kind == "simulated-critic") return std::make_shared<SimulatedCritic>(world, critic_spec(spec));
      StochasticActorSpec a;
      a.accuracy = accuracy_of(spec);
      a.dominant_mass = get_or<double>(spec, "dominant_mass", a.dominant_mass);
      a.distractor_pool = get_or<int>(spec, "distractor_pool", a.distractor_pool);
      SimActorOptions o;
      if (spec.contains("continue_correct")) o.continue_correct = get_or<double>(spec, "continue_correct", 0);
      if (spec.contains("inject_correct")) o.inject_correct = get_or<double>(spec, "inject_correct", 0);
      return std::make_shared<SimulatedActor>(world, a, critic_spec(spec.value("critic", json::object())), o);
    }
    if (kind == "http") {
      HttpBackendConfig h;
      h.endpoint = get_or<std::string>(spec, "endpoint", "");
      h.model = get_or<std::string>(spec, "model", "");
      h.max_concurrency = get_or<int>(spec, "max_concurrency", h.max_concurrency);
      h.max_retries = get_or<int>(spec, "max_retries", h.max_retries);
      h.backoff_base_ms = get_or<int>(spec, "backoff_base_ms", h.backoff_base_ms);
      h.backoff_cap_ms = get_or<int>(spec, "backoff_cap_ms", h.backoff_cap_ms);
      h.timeout_s = get_or<int>(spec, "timeout_s", h.timeout_s);
      if (spec.contains("api_key")) throw ConfigError("backend " + id + ": put the API key in the environment");
      h = apply_env_overrides(h, get_or<std::string>(spec, "env_prefix", env_prefix(id)));
      if (h.endpoint.empty()) throw ConfigError("backend " + id + ": no endpoint");
      return std::make_shared<HttpBackend>(h);
    }
    if (kind == "scripted") {
      std::string file = get_or<std::string>(spec, "script", "");
      auto b = std::make_shared<ScriptedBackend>(file.empty() ? ScriptedBackend{}
                                                              : ScriptedBackend::from_jsonl(resolve(base_dir, file)));
      if (spec.contains("default")) b->set_default(get_or<std::string>(spec, "default", ""));
      b->set_latency_ms(get_or<int>(spec, "latency_ms", 0));
      return b;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("backend " + id + ": " + e.what());
  }
  throw ConfigError("backend " + id + ": unknown kind '" + kind + "'");
}

void build_gateway(const RunConfig& cfg, const std::vector<Query>& queries, Gateway& gateway) {
  json backends = cfg.raw.value("backends", json::object());
  if (!backends.is_object() || backends.empty()) throw ConfigError("config: no backends");
  std::vector<std::pair<std::string, std::string>> aliases;
  for (auto it = backends.begin(); it != backends.end(); ++it) {
    if (get_or<std::string>(it.value(), "kind", "") == "alias") {
      aliases.emplace_back(it.key(), get_or<std::string>(it.value(), "target", ""));
      continue;
    }
    gateway.register_backend(it.key(), make_backend(it.key(), it.value(), queries, cfg.base_dir));
  }
  for (const auto& [a, target] : aliases) {
    if (!gateway.has(target)) throw ConfigError("backend alias " + a + " points at unknown '" + target + "'");
    gateway.alias(a, target);
  }
  for (const auto& role : {cfg.roles.actor, cfg.roles.critic, cfg.roles.annotator, cfg.roles.refiner,
                           cfg.roles.smoother})
    if (!gateway.has(role)) throw ConfigError("config: role backend '" + role + "' is not defined");
}

BackendFactory descriptor_factory(const RunConfig& cfg, const std::vector<Query>& queries) {
  return [base = cfg.base_dir, queries](const std::string& descriptor) -> std::shared_ptr<Backend> {
    json spec = json::parse(descriptor, nullptr, false);
    if (spec.is_discarded() || !spec.is_object() || !spec.contains("kind")) return nullptr;
    return make_backend("trained", spec, queries, base);
  };
}

LoopConfig loop_config(const RunConfig& cfg) {
  json s = cfg.stage("self-improve");
  LoopConfig l;
  l.T = get_or<int>(s, "T", l.T);
  l.N = get_or<int>(s, "N", l.N);
  l.L = get_or<int>(s, "L", l.L);
  l.temperature = get_or<double>(s, "temperature", l.temperature);
  l.beta = get_or<double>(s, "beta", l.beta);
  l.trainer_hook = get_or<std::string>(s, "trainer_hook", l.trainer_hook);
  l.refinements_per_critique = get_or<int>(s, "refinements_per_critique", l.refinements_per_critique);
  l.max_failure_fraction = get_or<double>(s, "max_failure_fraction", l.max_failure_fraction);
  l.train_on_new_refinements = get_or<bool>(s, "train_on_new_refinements", l.train_on_new_refinements);
  l.lr = get_or<double>(s, "lr", l.lr);
  l.epochs = get_or<int>(s, "epochs", l.epochs);
  l.base_checkpoint_id = get_or<std::string>(s, "base_checkpoint_id", l.base_checkpoint_id);
  l.validate();
  return l;
}

ProtocolConfig protocol_config(const RunConfig& cfg) {
  json s = cfg.stage("test-time");
  ProtocolMode mode;
  try {
    mode = parse_protocol_mode(get_or<std::string>(s, "mode", "response-only"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  ProtocolConfig p = ProtocolConfig::for_mode(mode, get_or<int>(s, "K", 1));
  p.oracle_gated = get_or<bool>(s, "oracle_gated", p.oracle_gated);
  if (s.contains("context")) {
    try {
      p.context_mode = parse_context_mode(get_or<std::string>(s, "context", "full"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  p.temperature = get_or<double>(s, "temperature", p.temperature);
  p.rounds = get_or<int>(s, "rounds", p.rounds);
  p.early_exit = get_or<bool>(s, "early_exit", p.early_exit);
  p.validate();
  return p;
}

}  // namespace critloop
