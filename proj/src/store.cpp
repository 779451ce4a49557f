#include "critloop/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "critloop/hash.hpp"

namespace critloop {

namespace {

void write_all(int fd, const std::string& content, const fs::path& file) {
  const char* p = content.data();
  std::size_t left = content.size();
  while (left > 0) {
    ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("write " + file.string() + ": " + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

constexpr std::pair<StageStatus, std::string_view> kStatuses[] = {
    {StageStatus::pending, "pending"},
    {StageStatus::running, "running"},
    {StageStatus::done, "done"},
    {StageStatus::failed, "failed"},
};

}  // namespace

void write_file_atomic(const fs::path& file, const std::string& content) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp." + std::to_string(::getpid());
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw std::runtime_error("open " + tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, content, tmp);
    if (::fsync(fd) != 0) throw std::runtime_error("fsync " + tmp.string() + ": " + std::strerror(errno));
  } catch (...) {
    ::close(fd);
    ::unlink(tmp.c_str());
    throw;
  }
  ::close(fd);
  fs::rename(tmp, file);
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string jsonl_text(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += dump_line(r);
    out += '\n';
  }
  return out;
}

void write_jsonl_atomic(const fs::path& file, const std::vector<json>& records) {
  write_file_atomic(file, jsonl_text(records));
}

namespace {

std::vector<json> read_lines(const fs::path& file, bool tolerant) {
  std::string text = read_file(file);
  std::vector<json> out;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    bool torn = eol == std::string::npos;
    std::string line = text.substr(pos, torn ? std::string::npos : eol - pos);
    pos = torn ? text.size() : eol + 1;
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (torn && tolerant) break;
    try {
      out.push_back(parse_line(line));
    } catch (const SchemaError& e) {
      throw SchemaError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<json> read_jsonl(const fs::path& file) { return read_lines(file, false); }
std::vector<json> read_jsonl_tolerant(const fs::path& file) { return read_lines(file, true); }

JsonlAppender::JsonlAppender(const fs::path& file) : file_(file) {
  if (file_.has_parent_path()) fs::create_directories(file_.parent_path());
}

void JsonlAppender::append(const json& record) {
  std::string line = dump_line(record) + "\n";
  std::lock_guard lock(mu_);
  int fd = ::open(file_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("open " + file_.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, line, file_);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

std::string to_string(StageStatus s) {
  for (const auto& [v, n] : kStatuses)
    if (v == s) return std::string(n);
  return "?";
}

StageStatus parse_stage_status(std::string_view s) {
  for (const auto& [v, n] : kStatuses)
    if (n == s) return v;
  throw SchemaError("unknown stage status: " + std::string(s));
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest RunManifest::open(const fs::path& run_dir, const std::string& run_id, const std::string& config_hash,
                              std::uint64_t seed) {
  RunManifest m;
  m.dir_ = run_dir;
  fs::path file = run_dir / "manifest.json";
  if (!fs::exists(file)) {
    fs::create_directories(run_dir);
    m.run_id_ = run_id;
    m.config_hash_ = config_hash;
    m.seed_ = seed;
    m.created_at_ = utc_timestamp();
    m.save();
    return m;
  }
  json j = parse_line(read_file(file));
  check_record(j);
  m.run_id_ = str_field(j, "run_id");
  m.config_hash_ = str_field(j, "config_hash");
  m.seed_ = field(j, "seed").get<std::uint64_t>();
  m.created_at_ = str_field(j, "created_at");
  if (m.config_hash_ != config_hash)
    throw ConfigDrift("run " + m.run_id_ + " was started with config " + m.config_hash_.substr(0, 12) +
                      ", resuming with " + config_hash.substr(0, 12));
  if (m.seed_ != seed) throw ConfigDrift("run " + m.run_id_ + " was started with another seed");
  for (const auto& [name, s] : field(j, "stages").items()) {
    StageRecord r;
    r.status = parse_stage_status(str_field(s, "status"));
    for (const auto& a : field(s, "artifacts")) r.artifacts.push_back({str_field(a, "path"), str_field(a, "content_hash")});
    r.started_at = str_field(s, "started_at");
    r.finished_at = str_field(s, "finished_at");
    r.attempts = static_cast<int>(int_field(s, "attempts"));
    r.error = str_field(s, "error");
    r.counts = field(s, "counts");
    // An interrupted or failed attempt is retried from scratch.
    if (r.status == StageStatus::running || r.status == StageStatus::failed) r.status = StageStatus::pending;
    m.stages_[name] = std::move(r);
  }
  return m;
}

bool RunManifest::has(const std::string& stage) const { return stages_.count(stage) > 0; }

const StageRecord& RunManifest::stage(const std::string& stage) const {
  auto it = stages_.find(stage);
  if (it == stages_.end()) throw StageError("unknown stage " + stage);
  return it->second;
}

StageStatus RunManifest::status(const std::string& stage) const {
  auto it = stages_.find(stage);
  return it == stages_.end() ? StageStatus::pending : it->second.status;
}

void RunManifest::transition(const std::string& stage, StageStatus from, StageStatus to) {
  StageStatus cur = status(stage);
  if (cur != from)
    throw StageError("stage " + stage + ": cannot go from " + to_string(cur) + " to " + to_string(to));
  stages_[stage].status = to;
}

void RunManifest::mark_running(const std::string& stage) {
  transition(stage, StageStatus::pending, StageStatus::running);
  auto& r = stages_[stage];
  r.attempts++;
  r.started_at = utc_timestamp();
  r.finished_at.clear();
  r.error.clear();
  r.artifacts.clear();
  save();
}

void RunManifest::mark_done(const std::string& stage, const std::vector<std::string>& artifact_paths, json counts) {
  std::vector<ArtifactRef> refs;
  for (const auto& p : artifact_paths) {
    fs::path full = dir_ / p;
    if (!fs::exists(full)) throw StageError("stage " + stage + ": artifact " + p + " was not written");
    refs.push_back({p, sha256_file(full)});
  }
  transition(stage, StageStatus::running, StageStatus::done);
  auto& r = stages_[stage];
  r.artifacts = std::move(refs);
  r.counts = std::move(counts);
  r.finished_at = utc_timestamp();
  save();
}

void RunManifest::mark_failed(const std::string& stage, const std::string& error) {
  transition(stage, StageStatus::running, StageStatus::failed);
  auto& r = stages_[stage];
  r.error = error;
  r.finished_at = utc_timestamp();
  save();
}

bool RunManifest::verify(const std::string& stage) const {
  const auto& r = this->stage(stage);
  if (r.status != StageStatus::done) return false;
  for (const auto& a : r.artifacts) {
    fs::path full = dir_ / a.path;
    if (!fs::exists(full) || sha256_file(full) != a.content_hash) return false;
  }
  return true;
}

json RunManifest::to_json() const {
  json stages = json::object();
  for (const auto& [name, r] : stages_) {
    json arts = json::array();
    for (const auto& a : r.artifacts) arts.push_back({{"path", a.path}, {"content_hash", a.content_hash}});
    stages[name] = {{"status", to_string(r.status)}, {"artifacts", arts},       {"started_at", r.started_at},
                    {"finished_at", r.finished_at},  {"attempts", r.attempts}, {"error", r.error},
                    {"counts", r.counts}};
  }
  return make_record({{"run_id", run_id_},
                      {"config_hash", config_hash_},
                      {"seed", seed_},
                      {"created_at", created_at_},
                      {"stages", stages}});
}

void RunManifest::save() const { write_file_atomic(dir_ / "manifest.json", to_json().dump(2) + "\n"); }

}  // namespace critloop
