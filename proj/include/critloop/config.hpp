#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "critloop/core.hpp"
#include "critloop/gateway.hpp"
#include "critloop/prompts.hpp"
#include "critloop/self_improve.hpp"
#include "critloop/serialize.hpp"
#include "critloop/test_time.hpp"

namespace critloop {

// Config file (JSON):
//   seed, threads, max_tokens      global settings
//   queries                        JSONL path, relative to the config file
//   prompts                        optional directory of template overrides
//   backends: {id: {kind, ...}}    kinds: simulated-actor, simulated-critic, http, scripted, alias
//   roles: {actor, critic, annotator, refiner, smoother}
//   stages: {synth-flaws, synth-critiques, filter, test-time, self-improve, self-talk}
// Unknown top-level keys are rejected.
struct RoleMap {
  std::string actor = "actor";
  std::string critic = "critic";
  std::string annotator = "critic";
  std::string refiner = "actor";
  std::string smoother = "actor";
};

struct RunConfig {
  json raw;  // the parsed file with CLI overrides folded in; this is what gets hashed
  std::filesystem::path base_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  int max_tokens = 1024;
  std::filesystem::path queries_file;
  std::optional<std::filesystem::path> prompts_dir;
  RoleMap roles;

  /// stages.<name>, or an empty object.
  json stage(const std::string& name) const;
  /// Sets stages.<name>.<key> and re-reads the typed fields.
  void set_stage_value(const std::string& name, const std::string& key, json value);
};

/// Throws ConfigError.
RunConfig load_config(const std::filesystem::path& file);
RunConfig config_from_json(json raw, const std::filesystem::path& base_dir);

/// sha256 over the canonical config dump and the prompt fingerprint.
std::string config_hash(const RunConfig& cfg, const PromptLibrary& prompts);

/// JSONL query file. A schema_version, when present, must match.
std::vector<Query> load_queries(const std::filesystem::path& file);

PromptLibrary load_prompts(const RunConfig& cfg);

/// Builds one backend from its spec. Simulated backends know `queries`.
std::shared_ptr<Backend> make_backend(const std::string& id, const json& spec, const std::vector<Query>& queries,
                                      const std::filesystem::path& base_dir);
/// Registers every configured backend and checks that each role resolves.
void build_gateway(const RunConfig& cfg, const std::vector<Query>& queries, Gateway& gateway);

/// Accepts descriptors that are JSON backend specs ({"kind": ...}).
BackendFactory descriptor_factory(const RunConfig& cfg, const std::vector<Query>& queries);

LoopConfig loop_config(const RunConfig& cfg);
ProtocolConfig protocol_config(const RunConfig& cfg);

}  // namespace critloop
