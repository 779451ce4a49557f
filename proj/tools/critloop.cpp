// critloop: command-line driver for the critique pipelines.
//
// Exit codes: 0 success, 2 configuration or data error, 3 backend failure,
// 4 interrupted but resumable (rerun the same command).

#include <csignal>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "critloop/config.hpp"
#include "critloop/critique_format.hpp"
#include "critloop/critique_synthesis.hpp"
#include "critloop/flaw_synthesis.hpp"
#include "critloop/hash.hpp"
#include "critloop/oracle.hpp"
#include "critloop/parallel.hpp"
#include "critloop/report.hpp"
#include "critloop/self_improve.hpp"
#include "critloop/self_talk.hpp"
#include "critloop/store.hpp"
#include "critloop/test_time.hpp"

using namespace critloop;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_sigint(int) {
  g_stop = true;
  std::signal(SIGINT, SIG_DFL);  // a second ^C kills
}

enum Exit { kOk = 0, kConfig = 2, kBackend = 3, kResumable = 4 };

void log(const std::string& msg) { std::cerr << "critloop: " << msg << "\n"; }

struct Session {
  RunConfig cfg;
  std::vector<Query> queries;
  PromptLibrary prompts;
  Gateway gateway;
  std::optional<RunManifest> manifest;
};

// Stage parameters are hashed separately so that one run directory can hold
// several subcommands; the global hash covers seed, backends, roles, queries and prompts.
std::string global_hash(const Session& s) {
  json g = s.cfg.raw;
  g.erase("stages");
  g.erase("run_id");
  std::string queries_sha = s.cfg.queries_file.empty() ? "" : sha256_file(s.cfg.queries_file);
  return sha256_hex(g.dump() + "\n" + s.prompts.fingerprint() + "\n" + queries_sha);
}

void check_stage_params(const RunManifest& m, const std::string& stage, const json& params) {
  fs::path file = m.dir() / "params" / (stage + ".json");
  std::string now = params.dump(2) + "\n";
  if (fs::exists(file)) {
    if (read_file(file) != now)
      throw ConfigDrift("stage " + stage + ": parameters differ from the earlier run recorded in " + file.string());
    return;
  }
  write_file_atomic(file, now);
}

void open_session(Session& s, const std::string& config_file, const std::string& run_dir) {
  s.cfg = load_config(config_file);
  s.queries = load_queries(s.cfg.queries_file);
  s.prompts = load_prompts(s.cfg);
  build_gateway(s.cfg, s.queries, s.gateway);
  std::string run_id = s.cfg.raw.value("run_id", std::string("run"));
  s.manifest = RunManifest::open(run_dir, run_id, global_hash(s), s.cfg.seed);
}

fs::path in_run(const Session& s, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : s.manifest->dir() / path;
}

std::string rel(const Session& s, const fs::path& p) {
  auto r = fs::relative(p, s.manifest->dir());
  return r.empty() || r.begin()->string() == ".." ? p.string() : r.string();
}

template <typename T, typename F>
std::vector<T> read_records(const fs::path& file, F&& from) {
  std::vector<T> out;
  for (const auto& j : read_jsonl(file)) {
    check_record(j);
    out.push_back(from(j));
  }
  return out;
}

const Query& find_query(const std::map<std::string, const Query*>& by_id, const std::string& id) {
  auto it = by_id.find(id);
  if (it == by_id.end()) throw ConfigError("record for unknown query " + id);
  return *it->second;
}

std::map<std::string, const Query*> index(const std::vector<Query>& queries) {
  std::map<std::string, const Query*> m;
  for (const auto& q : queries) m[q.id] = &q;
  return m;
}

std::vector<IterationLedger> read_ledgers(const fs::path& run_dir) {
  std::vector<IterationLedger> out;
  for (int t = 1;; ++t) {
    fs::path f = run_dir / ("iter" + std::to_string(t)) / "ledger.json";
    if (!fs::exists(f)) break;
    out.push_back(ledger_from_json(json::parse(read_file(f))));
  }
  return out;
}

// ---- subcommands -------------------------------------------------------

struct Common {
  std::string config;
  std::string run_dir = "run";
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "config file (JSON)")->required();
  app->add_option("--run-dir", c.run_dir, "run directory holding manifest.json and artifacts");
}

int synth_flaws(const Common& c, const std::string& strategy_name, int budget) {
  Session s;
  open_session(s, c.config, c.run_dir);
  json params = s.cfg.stage("synth-flaws");
  if (!strategy_name.empty()) params["strategy"] = strategy_name;
  if (budget > 0) params["budget"] = budget;
  FlawStrategy strategy = parse_flaw_strategy(params.value("strategy", std::string("rg1")));
  int n = params.value("budget", 8);
  if (n < 1) throw ConfigError("synth-flaws: budget must be >= 1");
  std::vector<std::string> taxonomy = params.value("taxonomy", default_taxonomy());
  check_stage_params(*s.manifest, "synth-flaws", params);
  fs::path out = in_run(s, c.out.empty() ? "flaws.jsonl" : c.out);
  fs::path correct = out;
  correct.replace_extension(".correct.jsonl");
  bool ran = run_stage(*s.manifest, "synth-flaws", {}, [&] {
    SynthContext ctx{s.gateway, s.prompts, s.cfg.roles.actor, s.cfg.seed, s.cfg.max_tokens};
    auto r = synthesize_flaws(ctx, s.queries, strategy, n, s.cfg.threads, taxonomy);
    std::vector<json> flaws, rights;
    auto by_id = index(s.queries);
    for (const auto& f : r.flaws) {
      check_storable(find_query(by_id, f.query_id), f);
      flaws.push_back(make_record(to_json(f)));
    }
    for (const auto& p : r.correct) rights.push_back(make_record(to_json(p)));
    write_jsonl_atomic(out, flaws);
    write_jsonl_atomic(correct, rights);
    return StageResult{{rel(s, out), rel(s, correct)},
                       {{"flaws", r.flaws.size()},
                        {"correct", r.correct.size()},
                        {"queries_without_reference", r.queries_without_reference}}};
  });
  s.manifest->save();
  log(ran ? "synth-flaws done" : "synth-flaws already done");
  std::cout << s.manifest->stage("synth-flaws").counts.dump() << "\n";
  return kOk;
}

int synth_critiques(const Common& c, const std::string& strategy_name, std::string flaws_file,
                    std::string correct_file) {
  Session s;
  open_session(s, c.config, c.run_dir);
  json params = s.cfg.stage("synth-critiques");
  if (!strategy_name.empty()) params["strategy"] = strategy_name;
  // "mix": incremental for correct paths and RG1/RG2 flaws, holistic where the hint carries the error detail
  std::string strategy_param = params.value("strategy", std::string("mix"));
  bool mix = strategy_param == "mix";
  CritiqueStrategy strategy = mix ? CritiqueStrategy::incremental : parse_critique_strategy(strategy_param);
  check_stage_params(*s.manifest, "synth-critiques", params);
  std::vector<std::string> upstream;
  if (flaws_file.empty()) {
    upstream.push_back("synth-flaws");
    flaws_file = "flaws.jsonl";
    if (correct_file.empty()) correct_file = "flaws.correct.jsonl";
  }
  fs::path out = in_run(s, c.out.empty() ? "candidates.jsonl" : c.out);
  bool ran = run_stage(*s.manifest, "synth-critiques", upstream, [&] {
    auto flaws = read_records<FlawRecord>(in_run(s, flaws_file), flaw_from_json);
    std::vector<CorrectPath> rights;
    if (!correct_file.empty())
      rights = read_records<CorrectPath>(in_run(s, correct_file), correct_path_from_json);
    auto by_id = index(s.queries);
    struct Item {
      const Query* q;
      ReasoningPath path;
      HintInfo hint;
      bool flawed;
    };
    std::vector<Item> items;
    for (const auto& f : flaws) items.push_back({&find_query(by_id, f.query_id), f.flawed_path, hint_of(f), true});
    for (const auto& p : rights) items.push_back({&find_query(by_id, p.query_id), p.path, HintInfo{}, false});
    std::vector<AnnotationOutcome> outcomes(items.size());
    AnnotateContext ctx{s.gateway, s.prompts, s.cfg.roles.annotator, s.cfg.seed, s.cfg.max_tokens};
    parallel_for(items.size(), s.cfg.threads, [&](std::size_t i) {
      const auto& it = items[i];
      CritiqueStrategy use = strategy;
      if (mix && it.flawed && it.hint.level == HintLevel::location_detail) use = CritiqueStrategy::holistic;
      outcomes[i] = use == CritiqueStrategy::holistic ? critique_holistic(ctx, *it.q, it.path, it.hint)
                                                      : critique_incremental(ctx, *it.q, it.path, it.hint);
    });
    std::vector<json> rows;
    std::size_t unparsed = 0, discarded = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& o = outcomes[i];
      if (!o.candidate) {
        unparsed++;
        log("annotation skipped for " + items[i].q->id + ": " + o.failure);
        continue;
      }
      Retention keep = items[i].flawed ? cross_check_flawed(*items[i].q, *o.candidate)
                                       : validate_correct_path_critique(*items[i].q, *o.candidate);
      if (keep == Retention::discard) {
        discarded++;
        continue;
      }
      rows.push_back(make_record(to_json(*o.candidate)));
    }
    write_jsonl_atomic(out, rows);
    return StageResult{{rel(s, out)},
                       {{"annotated", items.size()},
                        {"retained", rows.size()},
                        {"discarded", discarded},
                        {"unparsed", unparsed}}};
  });
  s.manifest->save();
  log(ran ? "synth-critiques done" : "synth-critiques already done");
  std::cout << s.manifest->stage("synth-critiques").counts.dump() << "\n";
  return kOk;
}

int filter(const Common& c, std::string candidates_file, int k, double tau, const std::string& mode_name) {
  Session s;
  open_session(s, c.config, c.run_dir);
  json params = s.cfg.stage("filter");
  if (k > 0) params["k"] = k;
  if (tau >= 0) params["tau"] = tau;
  if (!mode_name.empty()) params["mode"] = mode_name;
  int kk = params.value("k", 10);
  double t = params.value("tau", 0.3);
  FilterMode mode = parse_filter_mode(params.value("mode", std::string("soft")));
  if (kk < 1) throw ConfigError("filter: k must be >= 1");
  if (t < 0 || t > 1) throw ConfigError("filter: tau must be in [0,1]");
  check_stage_params(*s.manifest, "filter", params);
  std::vector<std::string> upstream;
  if (candidates_file.empty()) {
    upstream.push_back("synth-critiques");
    candidates_file = "candidates.jsonl";
  }
  fs::path out = in_run(s, c.out.empty() ? "dataset.jsonl" : c.out);
  fs::path verdicts_file = out;
  verdicts_file.replace_extension(".verdicts.jsonl");
  fs::path stats_file = out;
  stats_file += ".stats.json";
  bool ran = run_stage(*s.manifest, "filter", upstream, [&] {
    auto candidates = read_records<CritiqueCandidate>(in_run(s, candidates_file), candidate_from_json);
    auto by_id = index(s.queries);
    std::vector<std::optional<FilterVerdict>> verdicts(candidates.size());
    RefineContext ctx{s.gateway, s.prompts, s.cfg.roles.refiner, s.cfg.seed, kExplorationTemperature, s.cfg.max_tokens};
    parallel_for(candidates.size(), s.cfg.threads, [&](std::size_t i) {
      const Query& q = find_query(by_id, candidates[i].query_id);
      // critiques of correct paths were validated already; there is nothing to refine
      if (reward(q, candidates[i].target_path) == 1) return;
      verdicts[i] = mc_filter(ctx, q, candidates[i], kk, t, mode);
    });
    std::vector<CritiqueCandidate> retained;
    std::vector<json> vrows;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (!verdicts[i]) {
        retained.push_back(candidates[i]);
        continue;
      }
      const auto& v = *verdicts[i];
      vrows.push_back(make_record({{"query_id", candidates[i].query_id},
                                   {"index", i},
                                   {"k", v.k},
                                   {"successes", v.successes},
                                   {"failed_samples", v.failed_samples},
                                   {"mode", to_string(v.mode)},
                                   {"tau", v.tau},
                                   {"retained", v.retained}}));
      if (v.retained) retained.push_back(candidates[i]);
    }
    write_jsonl_atomic(verdicts_file, vrows);
    DatasetStats st = emit_dataset(s.queries, retained, out);
    json counts = to_json(st);
    counts["candidates"] = candidates.size();
    counts["filtered"] = vrows.size();
    return StageResult{{rel(s, out), rel(s, stats_file), rel(s, verdicts_file)}, counts};
  });
  s.manifest->save();
  log(ran ? "filter done" : "filter already done");
  std::cout << s.manifest->stage("filter").counts.dump() << "\n";
  return kOk;
}

struct TestTimeFlags {
  std::string mode;
  int K = 0;
  bool gated = false;
  int rounds = 0;
  std::string context;
};

int test_time(const Common& c, const TestTimeFlags& f) {
  Session s;
  open_session(s, c.config, c.run_dir);
  if (!f.mode.empty()) s.cfg.set_stage_value("test-time", "mode", f.mode);
  if (f.K > 0) s.cfg.set_stage_value("test-time", "K", f.K);
  if (f.gated) s.cfg.set_stage_value("test-time", "oracle_gated", true);
  if (f.rounds > 0) s.cfg.set_stage_value("test-time", "rounds", f.rounds);
  if (!f.context.empty()) s.cfg.set_stage_value("test-time", "context", f.context);
  ProtocolConfig p = protocol_config(s.cfg);
  std::string stage = "test-time-" + to_string(p.mode) + (p.oracle_gated ? "-gated" : "");
  check_stage_params(*s.manifest, stage, s.cfg.stage("test-time"));
  fs::path dir = in_run(s, c.out.empty() ? stage : c.out);
  bool ran = run_stage(*s.manifest, stage, {}, [&] {
    TestTimeContext ctx{s.gateway, s.prompts, s.cfg.roles.actor, s.cfg.roles.critic, s.cfg.seed, s.cfg.threads,
                        s.cfg.max_tokens};
    TranscriptSet ts = run_protocol(ctx, s.queries, p);
    std::vector<json> rows;
    for (const auto& q : ts.queries) {
      if (q.failed) log("query " + q.query.id + " failed: " + q.error);
      rows.push_back(make_record(to_json(q)));
    }
    fs::create_directories(dir);
    write_jsonl_atomic(dir / "transcripts.jsonl", rows);
    EvalReport r = evaluate(ts);
    std::vector<std::string> artifacts{rel(s, dir / "transcripts.jsonl")};
    for (const auto& file : emit_report(r, dir)) artifacts.push_back(rel(s, file));
    return StageResult{artifacts, {{"accuracy", r.accuracy}, {"queries", r.queries}, {"failed", r.failed}}};
  });
  s.manifest->save();
  log(ran ? stage + " done" : stage + " already done");
  std::cout << s.manifest->stage(stage).counts.dump() << "\n";
  return kOk;
}

struct LoopFlags {
  int T = 0, N = 0, L = -1;
  bool vanilla = false;
  std::string trainer_hook;
  std::string d_reason, d_refine, baseline;
};

int self_improve(const Common& c, const LoopFlags& f) {
  Session s;
  open_session(s, c.config, c.run_dir);
  if (f.T > 0) s.cfg.set_stage_value("self-improve", "T", f.T);
  if (f.N > 0) s.cfg.set_stage_value("self-improve", "N", f.N);
  if (f.L >= 0) s.cfg.set_stage_value("self-improve", "L", f.L);
  if (f.vanilla) s.cfg.set_stage_value("self-improve", "L", 0);
  if (!f.trainer_hook.empty()) s.cfg.set_stage_value("self-improve", "trainer_hook", f.trainer_hook);
  LoopConfig loop = loop_config(s.cfg);
  check_stage_params(*s.manifest, "self-improve", loop.to_json());
  std::vector<Solution> d_reason;
  std::vector<RefinementRecord> d_refine;
  if (!f.d_reason.empty()) d_reason = read_records<Solution>(f.d_reason, solution_from_json);
  if (!f.d_refine.empty()) d_refine = read_records<RefinementRecord>(f.d_refine, refinement_from_json);
  SelfImproveContext ctx{s.gateway,     s.prompts,        s.cfg.roles.actor, s.cfg.roles.critic,
                         s.cfg.seed,    s.cfg.threads,    s.cfg.max_tokens,  &g_stop,
                         descriptor_factory(s.cfg, s.queries)};
  SelfImproveResult r;
  try {
    r = run_self_improve(ctx, *s.manifest, s.queries, loop, d_reason, d_refine);
  } catch (...) {
    s.manifest->save();
    throw;
  }
  s.manifest->save();
  std::vector<IterationLedger> baseline;
  if (!f.baseline.empty()) baseline = read_ledgers(f.baseline);
  emit_ledgers(r.ledgers, baseline, s.manifest->dir() / "report");
  log("self-improve done, final actor " + r.final_actor_id);
  std::cout << ledger_csv(r.ledgers);
  return kOk;
}

int self_talk(const Common& c, int max_iters, bool affirmations) {
  Session s;
  open_session(s, c.config, c.run_dir);
  if (max_iters > 0) s.cfg.set_stage_value("self-talk", "max_iters", max_iters);
  if (affirmations) s.cfg.set_stage_value("self-talk", "affirmations", true);
  json params = s.cfg.stage("self-talk");
  check_stage_params(*s.manifest, "self-talk", params);
  fs::path out = in_run(s, c.out.empty() ? "self_talk.jsonl" : c.out);
  bool ran = run_stage(*s.manifest, "self-talk", {}, [&] {
    SelfTalkContext ctx{s.gateway,
                        s.prompts,
                        s.cfg.roles.actor,
                        s.cfg.roles.critic,
                        s.cfg.roles.smoother,
                        s.cfg.seed,
                        s.cfg.threads,
                        s.cfg.max_tokens,
                        params.value("max_iters", 4),
                        params.value("temperature", 0.7),
                        params.value("affirmations", false)};
    auto results = build_self_talk(ctx, s.queries);
    for (const auto& r : results)
      if (r.outcome != SelfTalkOutcome::stored)
        log("self-talk " + r.query.id + ": " + to_string(r.outcome) + (r.error.empty() ? "" : " (" + r.error + ")"));
    SelfTalkStats st = write_self_talk(results, out);
    return StageResult{{rel(s, out)},
                       {{"stored", st.stored}, {"rejected", st.rejected}, {"dropped", st.dropped}, {"failed", st.failed}}};
  });
  s.manifest->save();
  log(ran ? "self-talk done" : "self-talk already done");
  std::cout << s.manifest->stage("self-talk").counts.dump() << "\n";
  return kOk;
}

int report(const std::string& run_dir, const std::string& baseline_dir, std::string out) {
  auto ledgers = read_ledgers(run_dir);
  if (ledgers.empty()) throw ConfigError("report: no iteration ledgers under " + run_dir);
  std::vector<IterationLedger> baseline;
  if (!baseline_dir.empty()) baseline = read_ledgers(baseline_dir);
  if (out.empty()) out = (fs::path(run_dir) / "report").string();
  for (const auto& f : emit_ledgers(ledgers, baseline, out)) std::cout << f.string() << "\n";
  return kOk;
}

int validate(const std::string& kind, const std::vector<std::string>& files, const std::string& queries_file) {
  std::vector<Query> queries;
  if (!queries_file.empty()) queries = load_queries(queries_file);
  auto by_id = index(queries);
  auto check_reward = [&](const std::string& qid, const ReasoningPath& p, int want, const char* what) {
    if (by_id.empty()) return;
    if (reward(find_query(by_id, qid), p) != want)
      throw SchemaError(std::string(what) + " for " + qid + " has reward " + std::to_string(1 - want));
  };
  int bad = 0;
  for (const auto& file : files) {
    std::size_t line = 0;
    try {
      for (const auto& j : read_jsonl(file)) {
        ++line;
        if (kind == "queries") {
          if (j.contains("schema_version")) check_record(j);
          query_from_json(j);
          continue;
        }
        check_record(j);
        if (kind == "flaws") {
          auto f = flaw_from_json(j);
          check_reward(f.query_id, f.flawed_path, 0, "flawed path");
        } else if (kind == "correct" || kind == "solutions") {
          auto p = kind == "correct" ? correct_path_from_json(j).path : solution_from_json(j).path;
          check_reward(str_field(j, "query_id"), p, 1, "correct path");
        } else if (kind == "candidates") {
          candidate_from_json(j).validate();
        } else if (kind == "dataset") {
          query_from_json(field(j, "query"));
          auto p = path_from_json(field(j, "response"));
          auto c = critique_from_json(field(j, "critique"));
          if (c.step_verdicts().size() != p.size()) throw SchemaError("critique does not cover the response");
          bool correct = reward(query_from_json(field(j, "query")), p) == 1;
          if (correct != bool_field(j, "response_correct")) throw SchemaError("response_correct disagrees with reward");
        } else if (kind == "refinements") {
          refinement_from_json(j).validate();
        } else if (kind == "self-talk") {
          std::string qid = str_field(j, "query_id");
          if (!by_id.empty() && reward(find_query(by_id, qid), str_field(j, "self_talk_text")) != 1)
            throw SchemaError("self-talk record for " + qid + " has reward 0");
          int_field(j, "iterations_used");
          bool_field(j, "rigid_flag");
        } else {
          throw ConfigError("validate: unknown kind '" + kind + "'");
        }
      }
      std::cout << file << ": ok, " << line << " records\n";
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      std::cout << file << ": line " << line << ": " << e.what() << "\n";
      bad++;
    }
  }
  return bad ? kConfig : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"critloop: critique-guided reasoning pipelines"};
  app.require_subcommand(1);

  Common common;
  std::string strategy, flaws_file, correct_file, candidates_file, filter_mode;
  int budget = 0, k = 0, max_iters = 0;
  double tau = -1;
  bool affirmations = false;
  TestTimeFlags tt;
  LoopFlags lf;
  std::string kind, queries_file, baseline_dir, report_out;
  std::vector<std::string> files;

  auto* sf = app.add_subcommand("synth-flaws", "construct flawed responses (rg1, rg2, rg3)");
  add_common(sf, common);
  sf->add_option("--strategy", strategy, "rg1 | rg2 | rg3");
  sf->add_option("--budget", budget, "samples per query");
  sf->add_option("--out", common.out, "flaw records, relative to the run directory");

  auto* sc = app.add_subcommand("synth-critiques", "annotate flawed and correct responses");
  add_common(sc, common);
  sc->add_option("--strategy", strategy, "mix (default) | holistic | incremental");
  sc->add_option("--flaws", flaws_file, "flaw records (default: output of synth-flaws)");
  sc->add_option("--correct", correct_file, "correct paths");
  sc->add_option("--out", common.out, "retained candidates");

  auto* fl = app.add_subcommand("filter", "Monte-Carlo critique filtering and dataset emission");
  add_common(fl, common);
  fl->add_option("--candidates", candidates_file, "critique candidates (default: output of synth-critiques)");
  fl->add_option("--k", k, "refinements per critique");
  fl->add_option("--tau", tau, "soft threshold");
  fl->add_option("--mode", filter_mode, "soft | hard");
  fl->add_option("--out", common.out, "dataset file");

  auto* tr = app.add_subcommand("test-time", "run a test-time protocol and report");
  add_common(tr, common);
  tr->add_option("--mode", tt.mode, "response-only | with-critic-single-round | with-critic-multi-round | parallel-K | sequential-K");
  tr->add_option("--K", tt.K, "samples or rounds for the scaling modes");
  tr->add_flag("--oracle-gated", tt.gated, "only send reward-incorrect responses to the critic");
  tr->add_option("--rounds", tt.rounds, "multi-round budget");
  tr->add_option("--context", tt.context, "full | truncated");
  tr->add_option("--out,--report", common.out, "report directory, relative to the run directory");

  auto* si = app.add_subcommand("self-improve", "critique-in-the-loop self-improvement");
  add_common(si, common);
  si->add_option("--T", lf.T, "iterations");
  si->add_option("--N", lf.N, "samples per query");
  si->add_option("--L", lf.L, "critiques per incorrect sample");
  si->add_flag("--vanilla", lf.vanilla, "no critic: same loop with L = 0");
  si->add_option("--trainer-hook", lf.trainer_hook, "command run with {artifact}; last stdout line is the new actor");
  si->add_option("--d-reason", lf.d_reason, "seed solutions D_reason");
  si->add_option("--d-refine", lf.d_refine, "seed refinement records D_refine");
  si->add_option("--baseline", lf.baseline, "run directory of a vanilla run, for the tail report");

  auto* st = app.add_subcommand("self-talk", "build self-talk data from critiques");
  add_common(st, common);
  st->add_option("--max-iters", max_iters, "critic passes before a chain is dropped");
  st->add_flag("--affirmations", affirmations, "add reflections on correct steps without feedback");
  st->add_option("--out", common.out, "output JSONL");

  auto* rp = app.add_subcommand("report", "CSV/JSON report of self-improve ledgers");
  rp->add_option("--run-dir", common.run_dir, "self-improve run directory")->required();
  rp->add_option("--baseline", baseline_dir, "baseline run directory");
  rp->add_option("--out", report_out, "output directory");

  auto* va = app.add_subcommand("validate", "check JSONL files against their record schema");
  va->add_option("--kind", kind, "queries | flaws | correct | solutions | candidates | dataset | refinements | self-talk")
      ->required();
  va->add_option("--queries", queries_file, "queries file, enables reward checks");
  va->add_option("files", files, "files to check")->required();

  CLI11_PARSE(app, argc, argv);
  std::signal(SIGINT, on_sigint);

  try {
    if (*sf) return synth_flaws(common, strategy, budget);
    if (*sc) return synth_critiques(common, strategy, flaws_file, correct_file);
    if (*fl) return filter(common, candidates_file, k, tau, filter_mode);
    if (*tr) return test_time(common, tt);
    if (*si) return self_improve(common, lf);
    if (*st) return self_talk(common, max_iters, affirmations);
    if (*rp) return report(common.run_dir, baseline_dir, report_out);
    if (*va) return validate(kind, files, queries_file);
  } catch (const Interrupted& e) {
    log(std::string(e.what()) + "; rerun the same command to resume");
    return kResumable;
  } catch (const TrainerFailed& e) {
    log(std::string(e.what()) + "; exploration is kept, rerun to retry learning");
    return kResumable;
  } catch (const IterationAborted& e) {
    log(e.what());
    return kBackend;
  } catch (const BackendError& e) {
    log(std::string("backend failure: ") + e.what());
    return kBackend;
  } catch (const ConfigDrift& e) {
    log(std::string("config drift: ") + e.what());
    return kConfig;
  } catch (const ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return kConfig;
  } catch (const SchemaError& e) {
    log(std::string("bad record: ") + e.what());
    return kConfig;
  } catch (const StageError& e) {
    log(e.what());
    return kConfig;
  } catch (const std::invalid_argument& e) {
    log(std::string("invalid input: ") + e.what());
    return kConfig;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return kOk;
}
