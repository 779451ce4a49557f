#include "critloop/self_improve.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "critloop/critique_format.hpp"
#include "critloop/hash.hpp"
#include "critloop/oracle.hpp"
#include "critloop/parallel.hpp"
#include "critloop/rng.hpp"

namespace critloop {

namespace {

json counts_json(const IterationCounts& c) {
  return {{"sampled", c.sampled},
          {"correct_initial", c.correct_initial},
          {"incorrect_initial", c.incorrect_initial},
          {"critiques_issued", c.critiques_issued},
          {"refinements_issued", c.refinements_issued},
          {"refinements_correct", c.refinements_correct},
          {"failures", c.failures},
          {"duplicate_solutions", c.duplicate_solutions}};
}

IterationCounts counts_from_json(const json& j) {
  IterationCounts c;
  c.sampled = field(j, "sampled").get<std::size_t>();
  c.correct_initial = field(j, "correct_initial").get<std::size_t>();
  c.incorrect_initial = field(j, "incorrect_initial").get<std::size_t>();
  c.critiques_issued = field(j, "critiques_issued").get<std::size_t>();
  c.refinements_issued = field(j, "refinements_issued").get<std::size_t>();
  c.refinements_correct = field(j, "refinements_correct").get<std::size_t>();
  c.failures = field(j, "failures").get<std::size_t>();
  c.duplicate_solutions = field(j, "duplicate_solutions").get<std::size_t>();
  return c;
}

void add(IterationCounts& a, const IterationCounts& b) {
  a.sampled += b.sampled;
  a.correct_initial += b.correct_initial;
  a.incorrect_initial += b.incorrect_initial;
  a.critiques_issued += b.critiques_issued;
  a.refinements_issued += b.refinements_issued;
  a.refinements_correct += b.refinements_correct;
  a.failures += b.failures;
}

struct QueryResult {
  std::vector<ReasoningPath> correct;
  std::vector<RefinementRecord> refinements;
  IterationCounts counts;
  std::size_t calls = 0;
};

json to_json(std::size_t index, const Query& q, const QueryResult& r) {
  json correct = json::array(), refs = json::array();
  for (const auto& p : r.correct) correct.push_back(critloop::to_json(p));
  for (const auto& x : r.refinements) refs.push_back(critloop::to_json(x));
  return make_record({{"index", index},
                      {"query_id", q.id},
                      {"correct", correct},
                      {"refinements", refs},
                      {"counts", counts_json(r.counts)},
                      {"calls", r.calls}});
}

QueryResult result_from_json(const json& j) {
  QueryResult r;
  for (const auto& p : field(j, "correct")) r.correct.push_back(path_from_json(p));
  for (const auto& x : field(j, "refinements")) r.refinements.push_back(refinement_from_json(x));
  r.counts = counts_from_json(field(j, "counts"));
  r.calls = field(j, "calls").get<std::size_t>();
  return r;
}

GenerationRequest loop_request(const ExploreContext& ctx, const Query& q, const std::string& backend, Task task,
                               std::vector<Message> messages, double temperature, std::uint64_t seed, int n,
                               const std::string& tag) {
  GenerationRequest req;
  req.messages = std::move(messages);
  req.temperature = temperature;
  req.max_tokens = ctx.max_tokens;
  req.n = n;
  req.seed = seed;
  req.backend_id = backend;
  req.task = task;
  req.query_id = q.id;
  req.request_id = q.id + "/" + tag;
  return req;
}

QueryResult explore_query(const ExploreContext& ctx, int t, const std::string& actor_id, const Query& q,
                          const LoopConfig& cfg) {
  QueryResult r;
  Answer gold = gold_answer(q);
  auto seed_for = [&](std::string_view what, std::uint64_t a, std::uint64_t b) {
    return mix_seed({ctx.seed, static_cast<std::uint64_t>(t), hash_string(q.id), hash_string(what), a, b});
  };
  std::uint64_t s0 = seed_for("sample", 0, 0);
  std::vector<std::string> samples;
  r.calls++;
  try {
    samples = ctx.gateway.generate(loop_request(ctx, q, actor_id, Task::reason, reason_messages(ctx.prompts, q),
                                                cfg.temperature, s0, cfg.N, "t" + std::to_string(t) + "/sample"));
  } catch (const BackendError&) {
    r.counts.failures++;
    return r;
  }
  for (std::size_t j = 0; j < samples.size(); ++j) {
    auto path = ReasoningPath::from_text(samples[j], Provenance::sampled, {cfg.temperature, s0, actor_id});
    r.counts.sampled++;
    if (reward(gold, path.final_answer())) {
      r.counts.correct_initial++;
      r.correct.push_back(std::move(path));
      continue;
    }
    r.counts.incorrect_initial++;
    InteractionHistory h{q, path, {}};
    for (int l = 0; l < cfg.L; ++l) {
      std::string tag = "t" + std::to_string(t) + "/s" + std::to_string(j) + "/c" + std::to_string(l);
      r.calls++;
      r.counts.critiques_issued++;
      Critique c;
      try {
        auto reply = ctx.gateway.generate(loop_request(
            ctx, q, ctx.critic_id, Task::critique,
            critique_messages(ctx.prompts, context_view(h, ContextRole::critique, ContextMode::truncated)), 0.0,
            seed_for("critic", j, static_cast<std::uint64_t>(l)), 1, tag));
        c = parse_critique_reply(reply.front(), path.size());
      } catch (const BackendError&) {
        r.counts.failures++;
        continue;
      } catch (const CritiqueParseError&) {
        r.counts.failures++;
        continue;
      }
      auto messages = refine_messages(ctx.prompts, context_view(h, ContextRole::refinement, ContextMode::truncated, &c));
      for (int k = 0; k < cfg.refinements_per_critique; ++k) {
        std::uint64_t sr = seed_for("refine", j, static_cast<std::uint64_t>(l * 1000 + k));
        r.calls++;
        r.counts.refinements_issued++;
        std::string text;
        try {
          text = ctx.gateway
                     .generate(loop_request(ctx, q, actor_id, Task::refine, messages, cfg.temperature, sr, 1,
                                            tag + "/r" + std::to_string(k)))
                     .front();
        } catch (const BackendError&) {
          r.counts.failures++;
          continue;
        }
        auto refined = ReasoningPath::from_text(text, Provenance::refinement, {cfg.temperature, sr, actor_id});
        if (!reward(gold, refined.final_answer())) continue;
        r.counts.refinements_correct++;
        r.correct.push_back(refined);
        r.refinements.push_back(RefinementRecord{q.id, path, c, std::move(refined), 1});
      }
    }
  }
  return r;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

std::string trim(std::string s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void LoopConfig::validate() const {
  if (T < 1) throw ConfigError("self-improve: T must be >= 1");
  if (N < 1) throw ConfigError("self-improve: N must be >= 1");
  if (L < 0) throw ConfigError("self-improve: L must be >= 0");
  if (!(beta > 0)) throw ConfigError("self-improve: beta must be > 0");
  if (refinements_per_critique < 1) throw ConfigError("self-improve: refinements_per_critique must be >= 1");
  if (max_failure_fraction < 0 || max_failure_fraction > 1)
    throw ConfigError("self-improve: max_failure_fraction must be in [0,1]");
}

json LoopConfig::to_json() const {
  return {{"T", T},
          {"N", N},
          {"L", L},
          {"temperature", temperature},
          {"beta", beta},
          {"trainer_hook", trainer_hook},
          {"refinements_per_critique", refinements_per_critique},
          {"max_failure_fraction", max_failure_fraction},
          {"train_on_new_refinements", train_on_new_refinements},
          {"lr", lr},
          {"epochs", epochs},
          {"base_checkpoint_id", base_checkpoint_id}};
}

json to_json(const IterationLedger& l) {
  return make_record({{"t", l.t},
                      {"counts", counts_json(l.counts)},
                      {"solutions_per_level", l.solutions_per_level},
                      {"proportion_per_level", l.proportion_per_level},
                      {"artifacts", l.artifacts},
                      {"base_checkpoint_id", l.base_checkpoint_id},
                      {"actor_id", l.actor_id},
                      {"query_set_hash", l.query_set_hash}});
}

IterationLedger ledger_from_json(const json& j) {
  check_record(j);
  IterationLedger l;
  l.t = static_cast<int>(int_field(j, "t"));
  l.counts = counts_from_json(field(j, "counts"));
  l.solutions_per_level = field(j, "solutions_per_level").get<std::array<std::size_t, 5>>();
  l.proportion_per_level = field(j, "proportion_per_level").get<std::array<double, 5>>();
  l.artifacts = field(j, "artifacts").get<std::vector<std::string>>();
  l.base_checkpoint_id = str_field(j, "base_checkpoint_id");
  l.actor_id = str_field(j, "actor_id");
  l.query_set_hash = str_field(j, "query_set_hash");
  return l;
}

json to_json(const Solution& s) { return make_record({{"query_id", s.query_id}, {"path", to_json(s.path)}}); }

Solution solution_from_json(const json& j) {
  check_record(j);
  return Solution{str_field(j, "query_id"), path_from_json(field(j, "path"))};
}

std::string query_set_hash(const std::vector<Query>& queries) {
  std::vector<std::string> ids;
  for (const auto& q : queries) ids.push_back(q.id);
  std::sort(ids.begin(), ids.end());
  std::string all;
  for (const auto& id : ids) all += id + '\n';
  return sha256_hex(all);
}

ExploreResult explore(const ExploreContext& ctx, int t, const std::string& actor_id, const std::vector<Query>& queries,
                      const LoopConfig& config) {
  config.validate();
  std::vector<std::optional<QueryResult>> results(queries.size());
  std::unique_ptr<JsonlAppender> appender;
  if (ctx.partial_file) {
    if (fs::exists(*ctx.partial_file)) {
      auto lines = read_jsonl_tolerant(*ctx.partial_file);
      std::string raw = read_file(*ctx.partial_file);
      // drop a torn tail before appending after it
      if (!raw.empty() && raw.back() != '\n') write_jsonl_atomic(*ctx.partial_file, lines);
      for (const auto& j : lines) {
        check_record(j);
        auto i = field(j, "index").get<std::size_t>();
        if (i < queries.size() && str_field(j, "query_id") == queries[i].id) results[i] = result_from_json(j);
      }
    }
    appender = std::make_unique<JsonlAppender>(*ctx.partial_file);
  }
  parallel_for(queries.size(), ctx.threads, [&](std::size_t i) {
    if (results[i]) return;
    if (ctx.stop && ctx.stop->load()) return;
    QueryResult r = explore_query(ctx, t, actor_id, queries[i], config);
    if (appender) appender->append(to_json(i, queries[i], r));
    results[i] = std::move(r);
  });
  for (const auto& r : results)
    if (!r) throw Interrupted("exploration of iteration " + std::to_string(t) + " interrupted");

  ExploreResult out;
  out.ledger.t = t;
  out.ledger.actor_id = actor_id;
  out.ledger.query_set_hash = query_set_hash(queries);
  std::size_t calls = 0;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Query& q = queries[i];
    auto& r = *results[i];
    add(out.ledger.counts, r.counts);
    calls += r.calls;
    for (auto& p : r.correct) {
      if (!seen.insert({q.id, p.text()}).second) out.ledger.counts.duplicate_solutions++;
      if (q.difficulty && *q.difficulty >= 1 && *q.difficulty <= 5)
        out.ledger.solutions_per_level[static_cast<std::size_t>(*q.difficulty - 1)]++;
      out.correct.push_back({q.id, std::move(p)});
    }
    for (auto& x : r.refinements) out.refinements.push_back(std::move(x));
  }
  std::size_t total = 0;
  for (auto n : out.ledger.solutions_per_level) total += n;
  for (std::size_t d = 0; d < 5; ++d)
    out.ledger.proportion_per_level[d] = total ? static_cast<double>(out.ledger.solutions_per_level[d]) / total : 0.0;
  if (calls && static_cast<double>(out.ledger.counts.failures) > config.max_failure_fraction * static_cast<double>(calls))
    throw IterationAborted("iteration " + std::to_string(t) + ": " + std::to_string(out.ledger.counts.failures) + " of " +
                           std::to_string(calls) + " backend calls failed");
  return out;
}

TrainingArtifact assemble_training_set(const std::vector<Query>& queries, const std::vector<Solution>& d_correct,
                                       const std::vector<Solution>& d_reason,
                                       const std::vector<RefinementRecord>& d_refine, TrainingHeader header) {
  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) by_id[q.id] = &q;
  TrainingArtifact a;
  a.header = std::move(header);
  std::set<std::pair<std::string, std::string>> seen;
  auto take = [&](const Solution& s) {
    if (!seen.insert({s.query_id, s.path.text()}).second) {
      a.duplicates_dropped++;
      return;
    }
    a.reasoning.push_back(s);
  };
  for (const auto& s : d_reason) take(s);
  for (const auto& s : d_correct) {
    auto it = by_id.find(s.query_id);
    if (it == by_id.end()) throw ConfigError("training set: solution for unknown query " + s.query_id);
    if (reward(*it->second, s.path) != 1)
      throw InvariantError("training set: D_correct path for " + s.query_id + " does not earn reward 1");
    take(s);
  }
  a.refinement = d_refine;
  return a;
}

std::vector<json> training_records(const std::vector<Query>& queries, const TrainingArtifact& a) {
  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) by_id[q.id] = &q;
  auto text_of = [&](const std::string& id) {
    auto it = by_id.find(id);
    return it == by_id.end() ? std::string{} : it->second->text;
  };
  std::vector<json> out;
  out.push_back(make_record({{"kind", "header"},
                             {"beta", a.header.beta},
                             {"base_checkpoint_id", a.header.base_checkpoint_id},
                             {"iteration", a.header.iteration},
                             {"lr", a.header.lr},
                             {"epochs", a.header.epochs}}));
  for (const auto& s : a.reasoning)
    out.push_back(make_record({{"kind", "reasoning"}, {"query_id", s.query_id}, {"query", text_of(s.query_id)},
                               {"response", to_json(s.path)}}));
  auto refinement_row = [&](const char* kind, const RefinementRecord& r) {
    return make_record({{"kind", kind},
                        {"query_id", r.query_id},
                        {"query", text_of(r.query_id)},
                        {"response", to_json(r.base_path)},
                        {"critique", to_json(r.critique)},
                        {"refinement", to_json(r.refined_path)}});
  };
  for (const auto& r : a.refinement) out.push_back(refinement_row("refinement", r));
  for (const auto& r : a.held_out) out.push_back(refinement_row("refinement-held-out", r));
  return out;
}

std::string register_trainer_descriptor(Gateway& gateway, const std::string& descriptor,
                                        const std::string& current_actor, int t, const BackendFactory& factory) {
  if (descriptor.empty() || descriptor == "noop" || descriptor == current_actor) return current_actor;
  if (gateway.has(descriptor)) return descriptor;
  std::shared_ptr<Backend> b = factory ? factory(descriptor) : nullptr;
  if (!b) throw ConfigError("trainer printed descriptor '" + descriptor + "' that no backend factory accepts");
  std::string id = "actor-t" + std::to_string(t);
  gateway.register_backend(id, std::move(b));
  return id;
}

TrainerOutcome invoke_trainer(Gateway& gateway, const std::string& hook, const std::filesystem::path& artifact,
                              const std::string& current_actor, int t, const BackendFactory& factory) {
  TrainerOutcome out;
  if (hook.empty() || hook == "noop") {
    out.descriptor = "noop";
    out.actor_id = current_actor;
    return out;
  }
  std::string cmd = hook;
  for (std::size_t pos; (pos = cmd.find("{artifact}")) != std::string::npos;)
    cmd.replace(pos, 10, shell_quote(artifact.string()));
  std::fflush(nullptr);
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw TrainerFailed("cannot start trainer hook: " + cmd);
  std::string output;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, n);
  int status = ::pclose(pipe);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw TrainerFailed("trainer hook exited with status " +
                        std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : status) + ": " + cmd);
  std::string last;
  std::size_t pos = 0;
  while (pos < output.size()) {
    std::size_t eol = output.find('\n', pos);
    std::string line = trim(output.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos));
    if (!line.empty()) last = line;
    if (eol == std::string::npos) break;
    pos = eol + 1;
  }
  out.descriptor = last.empty() ? "noop" : last;
  out.actor_id = register_trainer_descriptor(gateway, out.descriptor, current_actor, t, factory);
  return out;
}

std::vector<std::array<double, 5>> tail_narrowing_report(const std::vector<IterationLedger>& ledgers,
                                                         const std::vector<IterationLedger>& baseline) {
  if (baseline.empty()) throw std::invalid_argument("tail_narrowing_report: a baseline run is required");
  if (ledgers.size() != baseline.size())
    throw std::invalid_argument("tail_narrowing_report: runs have different iteration counts");
  std::vector<std::array<double, 5>> out;
  for (std::size_t i = 0; i < ledgers.size(); ++i) {
    if (ledgers[i].query_set_hash != baseline[i].query_set_hash)
      throw std::invalid_argument("tail_narrowing_report: runs cover different query sets");
    std::array<double, 5> d{};
    for (std::size_t l = 0; l < 5; ++l) d[l] = ledgers[i].proportion_per_level[l] - baseline[i].proportion_per_level[l];
    out.push_back(d);
  }
  return out;
}

SelfImproveResult run_self_improve(const SelfImproveContext& ctx, RunManifest& manifest,
                                   const std::vector<Query>& queries, const LoopConfig& config,
                                   const std::vector<Solution>& d_reason,
                                   const std::vector<RefinementRecord>& d_refine) {
  config.validate();
  SelfImproveResult out;
  std::string actor = ctx.actor_id;
  const std::string base = config.base_checkpoint_id.empty() ? ctx.actor_id : config.base_checkpoint_id;
  const fs::path& dir = manifest.dir();

  for (int t = 1; t <= config.T; ++t) {
    std::string iter = "iter" + std::to_string(t);
    std::string explore_stage = "explore-" + std::to_string(t);
    std::string learn_stage = "learn-" + std::to_string(t);
    std::vector<std::string> upstream;
    if (t > 1) upstream.push_back("learn-" + std::to_string(t - 1));
    const std::string correct_file = iter + "/d_correct.jsonl";
    const std::string refine_file = iter + "/refinements.jsonl";
    const std::string ledger_file = iter + "/ledger.json";
    const fs::path partial = dir / iter / "explore.partial.jsonl";

    run_stage(manifest, explore_stage, upstream, [&] {
      ExploreContext ec{ctx.gateway, ctx.prompts, ctx.critic_id, ctx.seed, ctx.threads, ctx.max_tokens, ctx.stop, partial};
      ExploreResult r = explore(ec, t, actor, queries, config);
      r.ledger.base_checkpoint_id = base;
      r.ledger.artifacts = {correct_file, refine_file};
      std::vector<json> sol, refs;
      for (const auto& s : r.correct) sol.push_back(to_json(s));
      for (const auto& x : r.refinements) refs.push_back(make_record(to_json(x)));
      write_jsonl_atomic(dir / correct_file, sol);
      write_jsonl_atomic(dir / refine_file, refs);
      write_file_atomic(dir / ledger_file, to_json(r.ledger).dump(2) + "\n");
      fs::remove(partial);
      return StageResult{{correct_file, refine_file, ledger_file},
                         {{"solutions", r.correct.size()}, {"refinements", r.refinements.size()}}};
    });
    IterationLedger ledger = ledger_from_json(parse_line(read_file(dir / ledger_file)));

    const std::string train_file = iter + "/train.jsonl";
    const std::string trainer_file = iter + "/trainer.json";
    run_stage(manifest, learn_stage, {explore_stage}, [&] {
      std::vector<Solution> d_correct;
      for (const auto& j : read_jsonl(dir / correct_file)) d_correct.push_back(solution_from_json(j));
      std::vector<RefinementRecord> refine_rows = d_refine, fresh;
      for (const auto& j : read_jsonl(dir / refine_file)) {
        check_record(j);
        fresh.push_back(refinement_from_json(j));
      }
      if (config.train_on_new_refinements) refine_rows.insert(refine_rows.end(), fresh.begin(), fresh.end());
      TrainingArtifact a = assemble_training_set(queries, d_correct, d_reason, refine_rows,
                                                 TrainingHeader{config.beta, base, t, config.lr, config.epochs});
      if (!config.train_on_new_refinements) a.held_out = std::move(fresh);
      write_jsonl_atomic(dir / train_file, training_records(queries, a));
      TrainerOutcome o = invoke_trainer(ctx.gateway, config.trainer_hook, dir / train_file, actor, t, ctx.factory);
      write_file_atomic(dir / trainer_file,
                        make_record({{"descriptor", o.descriptor}, {"actor_id", o.actor_id}, {"iteration", t}}).dump(2) +
                            "\n");
      return StageResult{{train_file, trainer_file},
                         {{"reasoning_rows", a.reasoning.size()},
                          {"refinement_rows", a.refinement.size()},
                          {"duplicates_dropped", a.duplicates_dropped}}};
    });
    json trainer = parse_line(read_file(dir / trainer_file));
    actor = register_trainer_descriptor(ctx.gateway, str_field(trainer, "descriptor"), actor, t, ctx.factory);
    out.ledgers.push_back(std::move(ledger));
  }
  out.final_actor_id = actor;
  return out;
}

}  // namespace critloop
