#include <cstdlib>
#include <fstream>

#include "doctest.h"

#include "critloop/config.hpp"
#include "critloop/report.hpp"
#include "critloop/store.hpp"

using namespace critloop;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << s;
}

json minimal_config() {
  return json::parse(R"({
    "seed": 7,
    "queries": "queries.jsonl",
    "backends": {
      "actor": {"kind": "simulated-actor", "accuracy": [0.9, 0.7, 0.5, 0.3, 0.1]},
      "critic": {"kind": "simulated-critic", "d": 0.8, "h": 0.3}
    },
    "stages": {"test-time": {"mode": "parallel-K", "K": 4}, "self-improve": {"T": 2, "N": 3, "L": 1}}
  })");
}

}  // namespace

TEST_CASE("atomic writes and jsonl reading") {
  fs::path dir = fresh_dir("critloop_store_io");
  write_file_atomic(dir / "a.txt", "hello");
  CHECK(read_file(dir / "a.txt") == "hello");
  write_file_atomic(dir / "a.txt", "bye");
  CHECK(read_file(dir / "a.txt") == "bye");
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().filename() == "a.txt");

  std::vector<json> rows{make_record({{"b", 2}, {"a", 1}}), make_record({{"c", "x"}})};
  write_jsonl_atomic(dir / "r.jsonl", rows);
  CHECK(read_file(dir / "r.jsonl") == jsonl_text(rows));
  CHECK(read_jsonl(dir / "r.jsonl") == rows);

  write(dir / "torn.jsonl", jsonl_text(rows) + R"({"half":)");
  CHECK_THROWS_AS(read_jsonl(dir / "torn.jsonl"), SchemaError);
  CHECK(read_jsonl_tolerant(dir / "torn.jsonl").size() == 2);
  write(dir / "mid.jsonl", "{oops}\n" + jsonl_text(rows));
  CHECK_THROWS_AS(read_jsonl_tolerant(dir / "mid.jsonl"), SchemaError);

  JsonlAppender app(dir / "app.jsonl");
  app.append(rows[0]);
  app.append(rows[1]);
  CHECK(read_jsonl(dir / "app.jsonl") == rows);
  fs::remove_all(dir);
}

TEST_CASE("manifest state machine") {
  fs::path dir = fresh_dir("critloop_manifest");
  auto m = RunManifest::open(dir, "r1", "hash-a", 7);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK_THROWS_AS(m.mark_done("s", {}), StageError);
  m.mark_running("s");
  CHECK_THROWS_AS(m.mark_running("s"), StageError);
  write(dir / "out.txt", "artifact");
  m.mark_done("s", {"out.txt"}, {{"rows", 1}});
  CHECK(m.status("s") == StageStatus::done);
  CHECK(m.verify("s"));
  CHECK_THROWS_AS(m.mark_running("s"), StageError);
  CHECK_THROWS_AS(m.mark_failed("s", "x"), StageError);

  m.mark_running("missing-artifact");
  CHECK_THROWS(m.mark_done("missing-artifact", {"nope.txt"}));

  write(dir / "out.txt", "tampered");
  CHECK_FALSE(m.verify("s"));
  fs::remove_all(dir);
}

TEST_CASE("manifest reload: drift, seed and reset of unfinished stages") {
  fs::path dir = fresh_dir("critloop_manifest_reload");
  {
    auto m = RunManifest::open(dir, "r1", "hash-a", 7);
    m.mark_running("crashed");
    m.mark_running("broken");
    m.mark_failed("broken", "boom");
    m.mark_running("ok");
    write(dir / "ok.txt", "x");
    m.mark_done("ok", {"ok.txt"});
  }
  CHECK_THROWS_AS(RunManifest::open(dir, "r1", "hash-b", 7), ConfigDrift);
  CHECK_THROWS_AS(RunManifest::open(dir, "r1", "hash-a", 8), ConfigDrift);
  auto m = RunManifest::open(dir, "r1", "hash-a", 7);
  CHECK(m.status("crashed") == StageStatus::pending);
  CHECK(m.status("broken") == StageStatus::pending);
  CHECK(m.stage("broken").attempts == 1);
  CHECK(m.status("ok") == StageStatus::done);
  CHECK(m.stage("ok").artifacts.at(0).path == "ok.txt");
  fs::remove_all(dir);
}

TEST_CASE("run_stage is idempotent and checks upstream") {
  fs::path dir = fresh_dir("critloop_run_stage");
  auto m = RunManifest::open(dir, "r", "h", 1);
  int runs = 0;
  auto body = [&] {
    runs++;
    write_file_atomic(dir / "flaws.jsonl", "{}\n");
    return StageResult{{"flaws.jsonl"}, {{"n", 1}}};
  };
  CHECK_THROWS_AS(run_stage(m, "filter", {"synth-flaws"}, body), StageError);
  CHECK(run_stage(m, "synth-flaws", {}, body));
  std::string hash = m.stage("synth-flaws").artifacts[0].content_hash;
  CHECK_FALSE(run_stage(m, "synth-flaws", {}, body));
  CHECK(runs == 1);
  CHECK(m.stage("synth-flaws").artifacts[0].content_hash == hash);
  CHECK(m.stage("synth-flaws").counts["n"] == 1);

  CHECK_THROWS_AS(run_stage(m, "bad", {}, []() -> StageResult { throw std::runtime_error("nope"); }), std::runtime_error);
  CHECK(m.status("bad") == StageStatus::failed);
  CHECK(m.stage("bad").error == "nope");
  fs::remove_all(dir);
}

TEST_CASE("stage status names") {
  for (auto s : {StageStatus::pending, StageStatus::running, StageStatus::done, StageStatus::failed})
    CHECK(parse_stage_status(to_string(s)) == s);
  CHECK_THROWS(parse_stage_status("paused"));
}

TEST_CASE("reports are deterministic with declared columns") {
  EvalReport r;
  r.mode = "parallel-K";
  r.K = 10;
  r.maj_at_k = {{10, 0.5}, {1, 0.25}, {5, 1.0 / 3}};
  r.pass_at_k = {{1, 0.25}, {5, 0.5}, {10, 0.75}};
  CHECK(curve_csv(r) ==
        "mode,K,maj_at_k,pass_at_k\n"
        "parallel-K,1,0.250000,0.250000\n"
        "parallel-K,5,0.333333,0.500000\n"
        "parallel-K,10,0.500000,0.750000\n");

  EvalReport empty;
  CHECK(curve_csv(empty) == std::string(kCurveHeader) + "\n");
  CHECK(histogram_csv(empty) == std::string(kHistogramHeader) + "\n");
  CHECK(difficulty_csv(empty) == std::string(kDifficultyHeader) + "\n");
  CHECK(ledger_csv({}) == std::string(kLedgerHeader) + "\n");

  fs::path dir = fresh_dir("critloop_report");
  auto files = emit_report(r, dir / "a");
  emit_report(r, dir / "b");
  for (const auto& f : files) CHECK(read_file(f) == read_file(dir / "b" / f.filename()));
  CHECK(format_number(-0.0) == "0.000000");

  IterationLedger l;
  l.t = 1;
  l.actor_id = "actor";
  l.proportion_per_level = {0.5, 0.5, 0, 0, 0};
  auto lf = emit_ledgers({l}, {l}, dir / "l");
  CHECK(lf.size() == 3);
  CHECK(read_file(dir / "l" / "tail.csv") == "t,delta_l1,delta_l2,delta_l3,delta_l4,delta_l5\n"
                                               "1,0.000000,0.000000,0.000000,0.000000,0.000000\n");
  fs::remove_all(dir);
}

TEST_CASE("config parsing") {
  fs::path dir = fresh_dir("critloop_config");
  write(dir / "queries.jsonl", R"({"id":"a","text":"1+1?","gold_answer":"2","difficulty":1})"
                               "\n"
                               R"({"id":"b","text":"2+2?","gold_answer":"4"})"
                               "\n");
  auto cfg = config_from_json(minimal_config(), dir);
  CHECK(cfg.seed == 7);
  CHECK(cfg.threads == 1);
  CHECK(cfg.roles.annotator == "critic");
  CHECK(cfg.roles.smoother == "actor");
  auto qs = load_queries(cfg.queries_file);
  REQUIRE(qs.size() == 2);
  CHECK(qs[0].difficulty == 1);
  Gateway g;
  build_gateway(cfg, qs, g);
  CHECK(g.has("actor"));
  CHECK(protocol_config(cfg).K == 4);
  CHECK(loop_config(cfg).T == 2);

  auto prompts = load_prompts(cfg);
  std::string h = config_hash(cfg, prompts);
  CHECK(h == config_hash(config_from_json(minimal_config(), dir), prompts));
  cfg.set_stage_value("filter", "tau", 0.4);
  CHECK(config_hash(cfg, prompts) != h);

  // a prompt directory overrides the files it has and keeps the rest
  fs::create_directories(dir / "prompts");
  write(dir / "prompts" / "actor_reason.txt", "Solve: {problem}\n");
  json with_prompts = minimal_config();
  with_prompts["prompts"] = "prompts";
  auto overridden = load_prompts(config_from_json(with_prompts, dir));
  CHECK(overridden.get("actor_reason") == "Solve: {problem}");
  CHECK(overridden.get("actor_continue") == prompts.get("actor_continue"));
  CHECK(overridden.fingerprint() != prompts.fingerprint());

  write(dir / "c.json", minimal_config().dump());
  CHECK(load_config(dir / "c.json").queries_file == dir / "queries.jsonl");
  fs::remove_all(dir);
}

TEST_CASE("config errors") {
  fs::path dir = fresh_dir("critloop_config_err");
  auto with = [](const std::string& ptr, json v) {
    json j = minimal_config();
    j[json::json_pointer(ptr)] = std::move(v);
    return j;
  };
  CHECK_THROWS_AS(config_from_json(with("/extra", 1), dir), ConfigError);
  CHECK_THROWS_AS(config_from_json(with("/threads", 0), dir), ConfigError);
  CHECK_THROWS_AS(config_from_json(with("/seed", "seven"), dir), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), ConfigError);
  write(dir / "bad.json", "{not json");
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_queries(dir / "absent.jsonl"), ConfigError);
  write(dir / "dup.jsonl", R"({"id":"a","text":"t","gold_answer":"1"})"
                           "\n"
                           R"({"id":"a","text":"t","gold_answer":"1"})"
                           "\n");
  CHECK_THROWS_AS(load_queries(dir / "dup.jsonl"), ConfigError);

  Gateway g;
  auto key = config_from_json(with("/backends/critic", json{{"kind", "http"}, {"endpoint", "http://x"}, {"api_key", "k"}}), dir);
  CHECK_THROWS_AS(build_gateway(key, {}, g), ConfigError);
  Gateway g2;
  auto kind = config_from_json(with("/backends/critic", json{{"kind", "oracle"}}), dir);
  CHECK_THROWS_AS(build_gateway(kind, {}, g2), ConfigError);
  Gateway g3;
  auto role = config_from_json(with("/roles", json{{"critic", "judge"}}), dir);
  CHECK_THROWS_AS(build_gateway(role, {}, g3), ConfigError);
  Gateway g4;
  auto alias = config_from_json(with("/backends/judge", json{{"kind", "alias"}, {"target", "critic"}}), dir);
  CHECK_NOTHROW(build_gateway(alias, {}, g4));
  CHECK(g4.has("judge"));

  CHECK_THROWS_AS(protocol_config(config_from_json(with("/stages/test-time/mode", "best-of"), dir)), ConfigError);
  CHECK_THROWS_AS(loop_config(config_from_json(with("/stages/self-improve/N", 0), dir)), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("http endpoint and key come from the environment") {
  fs::path dir = fresh_dir("critloop_config_env");
  json j = minimal_config();
  j["backends"]["critic"] = {{"kind", "http"}, {"model", "m"}};
  auto cfg = config_from_json(j, dir);
  Gateway g;
  ::unsetenv("CRITLOOP_CRITIC_ENDPOINT");
  CHECK_THROWS_AS(build_gateway(cfg, {}, g), ConfigError);
  ::setenv("CRITLOOP_CRITIC_ENDPOINT", "http://127.0.0.1:1", 1);
  ::setenv("CRITLOOP_CRITIC_API_KEY", "secret", 1);
  Gateway g2;
  CHECK_NOTHROW(build_gateway(cfg, {}, g2));
  CHECK(g2.get("critic")->kind() == "http");
  ::unsetenv("CRITLOOP_CRITIC_ENDPOINT");
  ::unsetenv("CRITLOOP_CRITIC_API_KEY");
  fs::remove_all(dir);
}
