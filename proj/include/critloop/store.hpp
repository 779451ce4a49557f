#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "critloop/serialize.hpp"

namespace critloop {

namespace fs = std::filesystem;

/// Writes `content` to a sibling temp file, fsyncs it and renames it over `file`.
void write_file_atomic(const fs::path& file, const std::string& content);
std::string read_file(const fs::path& file);

/// One dump_line per record, each followed by '\n'.
std::string jsonl_text(const std::vector<json>& records);
void write_jsonl_atomic(const fs::path& file, const std::vector<json>& records);
/// Reads every non-blank line. Throws SchemaError naming the line on bad JSON.
std::vector<json> read_jsonl(const fs::path& file);
/// Like read_jsonl, but a torn final line (no trailing newline) is ignored.
std::vector<json> read_jsonl_tolerant(const fs::path& file);

/// Append-only JSONL writer; each append is flushed as a whole line.
class JsonlAppender {
 public:
  explicit JsonlAppender(const fs::path& file);
  void append(const json& record);

 private:
  std::mutex mu_;
  fs::path file_;
};

class ConfigDrift : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StageStatus { pending, running, done, failed };
std::string to_string(StageStatus s);
StageStatus parse_stage_status(std::string_view s);

struct ArtifactRef {
  std::string path;  // relative to the run directory
  std::string content_hash;
};

struct StageRecord {
  StageStatus status = StageStatus::pending;
  std::vector<ArtifactRef> artifacts;
  std::string started_at;
  std::string finished_at;
  int attempts = 0;
  std::string error;
  json counts = json::object();
};

/// Seeded, resumable record of a run, kept as manifest.json in the run directory.
class RunManifest {
 public:
  /// Opens or creates. An existing manifest with another config hash raises
  /// ConfigDrift. Stages left running or failed by an earlier process reset to pending.
  static RunManifest open(const fs::path& run_dir, const std::string& run_id, const std::string& config_hash,
                          std::uint64_t seed);

  const fs::path& dir() const { return dir_; }
  const std::string& run_id() const { return run_id_; }
  const std::string& config_hash() const { return config_hash_; }
  std::uint64_t seed() const { return seed_; }

  bool has(const std::string& stage) const;
  const StageRecord& stage(const std::string& stage) const;
  StageStatus status(const std::string& stage) const;
  const std::map<std::string, StageRecord>& stages() const { return stages_; }

  /// pending -> running. Throws StageError on any other starting state.
  void mark_running(const std::string& stage);
  /// running -> done. Artifacts are hashed now; they must exist.
  void mark_done(const std::string& stage, const std::vector<std::string>& artifact_paths, json counts = json::object());
  /// running -> failed.
  void mark_failed(const std::string& stage, const std::string& error);

  /// Re-hashes the artifacts of a done stage; false if any changed or vanished.
  bool verify(const std::string& stage) const;

  void save() const;
  json to_json() const;

 private:
  void transition(const std::string& stage, StageStatus from, StageStatus to);

  fs::path dir_;
  std::string run_id_;
  std::string config_hash_;
  std::uint64_t seed_ = 0;
  std::string created_at_;
  std::map<std::string, StageRecord> stages_;
};

/// Runs `body` as stage `name` if it is not already done; `upstream` stages
/// must be done. body returns the artifact paths (relative to the run dir)
/// and counts. A throwing body marks the stage failed and rethrows.
struct StageResult {
  std::vector<std::string> artifacts;
  json counts = json::object();
};

template <typename Body>
bool run_stage(RunManifest& m, const std::string& name, const std::vector<std::string>& upstream, Body&& body) {
  for (const auto& u : upstream)
    if (m.status(u) != StageStatus::done) throw StageError("stage " + name + ": upstream stage " + u + " is not done");
  if (m.has(name) && m.status(name) == StageStatus::done) return false;
  m.mark_running(name);
  StageResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    m.mark_failed(name, e.what());
    throw;
  }
  m.mark_done(name, r.artifacts, std::move(r.counts));
  return true;
}

std::string utc_timestamp();

}  // namespace critloop
