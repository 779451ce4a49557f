#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "critloop/critique_format.hpp"
#include "critloop/oracle.hpp"
#include "critloop/scripted_backend.hpp"
#include "critloop/simulated_backend.hpp"
#include "critloop/test_time.hpp"

using namespace critloop;

namespace {

Query make_query(std::string id, std::string gold = "12", std::optional<int> level = std::nullopt) {
  Query q;
  q.id = std::move(id);
  q.text = "text of " + q.id;
  q.gold_answer = std::move(gold);
  q.difficulty = level;
  return q;
}

std::vector<std::optional<Answer>> answers(std::initializer_list<const char*> xs) {
  std::vector<std::optional<Answer>> out;
  for (const char* x : xs) out.push_back(x ? std::optional(Answer::parse(x)) : std::nullopt);
  return out;
}

struct Rig {
  Gateway gateway;
  PromptLibrary prompts;
  std::shared_ptr<ScriptedBackend> actor = std::make_shared<ScriptedBackend>();
  std::shared_ptr<ScriptedBackend> critic = std::make_shared<ScriptedBackend>();
  Rig() {
    gateway.register_backend("actor", actor);
    gateway.register_backend("critic", critic);
    gateway.set_recording(true);
  }
  TestTimeContext ctx(int threads = 1) { return TestTimeContext{gateway, prompts, "actor", "critic", 3, threads, 512}; }
  std::vector<GenerationRequest> calls(const std::string& backend) {
    std::vector<GenerationRequest> out;
    for (auto& r : gateway.request_log())
      if (r.backend_id == backend) out.push_back(r);
    return out;
  }
};

const std::string kFlag = "<critique>\nfirst_error: 0\nfeedback: start over\n</critique>";
const std::string kPass = "<critique>\nfirst_error: none\nfeedback: fine\n</critique>";

}  // namespace

TEST_CASE("mode names and config validation") {
  CHECK(parse_protocol_mode("parallel-K") == ProtocolMode::parallel_k);
  CHECK_THROWS_AS(parse_protocol_mode("bogus"), ConfigError);
  auto seq = ProtocolConfig::for_mode(ProtocolMode::sequential_k, 4);
  CHECK(seq.context_mode == ContextMode::truncated);
  CHECK(seq.round_budget() == 4);
  auto bad = ProtocolConfig::for_mode(ProtocolMode::single_round, 3);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("majority voting") {
  CHECK(maj_at_k(answers({"72", "72", "70"}))->raw() == "72");
  CHECK(maj_at_k(answers({"1/2", "0.5", "3"}))->raw() == "1/2");
  CHECK(maj_at_k(answers({"a", "b"}))->raw() == "a");
  CHECK(maj_at_k(answers({nullptr, nullptr, "5"}))->raw() == "5");
  CHECK_FALSE(maj_at_k(answers({nullptr, nullptr})).has_value());
  CHECK_THROWS_AS(maj_at_k({}), std::invalid_argument);
}

TEST_CASE("majority voting ignores order when there are no ties") {
  std::vector<std::string> xs{"3", "1", "3", "2", "3", "1"};
  do {
    std::vector<std::optional<Answer>> a;
    for (auto& x : xs) a.push_back(Answer::parse(x));
    CHECK(maj_at_k(a)->raw() == "3");
  } while (std::next_permutation(xs.begin(), xs.end()));
}

TEST_CASE("pass@k") {
  CHECK(pass_at_k({0, 0, 1}, 3) == 1);
  CHECK(pass_at_k({0, 0}, 2) == 0);
  CHECK(pass_at_k({0, 0, 1}, 2) == 0);
  CHECK_THROWS_AS(pass_at_k({1}, 2), std::invalid_argument);
}

TEST_CASE("difficulty levels by correct count") {
  CHECK(level_from_count(100, 100) == 1);
  CHECK(level_from_count(0, 100) == 5);
  CHECK(level_from_count(60, 100) == 3);
  for (int c = 0; c <= 100; ++c) {
    int want = c >= 81 ? 1 : c >= 61 ? 2 : c >= 41 ? 3 : c >= 21 ? 4 : 5;
    CHECK(level_from_count(c, 100) == want);
  }
  CHECK_THROWS_AS(level_from_count(5, 4), std::invalid_argument);
}

TEST_CASE("difficulty bucket draws 100 samples") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest&, int i) { return std::optional(std::string("#### ") + (i < 60 ? "12" : "1")); });
  CHECK(difficulty_bucket(rig.ctx(), make_query("q"), 100) == 3);
  CHECK(rig.calls("actor").at(0).n == 100);
}

TEST_CASE("curve points") {
  CHECK(curve_points(4) == std::vector<int>{1, 2, 3, 4});
  CHECK(curve_points(100) == std::vector<int>{1, 2, 4, 8, 16, 32, 64, 100});
}

TEST_CASE("oracle gating keeps correct responses away from the critic") {
  Rig rig;
  rig.actor->set_default("Work\n#### 12");
  rig.critic->set_default(kFlag);
  auto cfg = ProtocolConfig::for_mode(ProtocolMode::multi_round);
  cfg.rounds = 3;
  cfg.oracle_gated = true;
  auto ts = run_protocol(rig.ctx(), {make_query("a"), make_query("b")}, cfg);
  CHECK(rig.calls("critic").empty());
  auto r = evaluate(ts);
  CHECK(r.accuracy == 1.0);
  CHECK_FALSE(r.helpfulness.has_value());
  CHECK_FALSE(r.discriminability.has_value());
}

TEST_CASE("gating applies after each refinement too") {
  Rig rig;
  rig.actor->on_task(Task::reason, {"Guess\n#### 5"});
  rig.actor->on_task(Task::refine, {"Fixed\n#### 12"});
  rig.critic->set_default(kFlag);
  auto cfg = ProtocolConfig::for_mode(ProtocolMode::multi_round);
  cfg.rounds = 3;
  cfg.oracle_gated = true;
  auto ts = run_protocol(rig.ctx(), {make_query("a")}, cfg);
  CHECK(rig.calls("critic").size() == 1);
  CHECK(ts.queries[0].chains[0].rounds.size() == 1);
  auto r = evaluate(ts);
  CHECK(r.helpfulness == 1.0);
  CHECK(r.discriminability == 1.0);
}

TEST_CASE("a passing critique carries the response forward") {
  Rig rig;
  rig.actor->set_default("Guess\n#### 5");
  rig.critic->set_default(kPass);
  auto cfg = ProtocolConfig::for_mode(ProtocolMode::multi_round);
  cfg.rounds = 2;
  auto ts = run_protocol(rig.ctx(), {make_query("a")}, cfg);
  CHECK(rig.calls("actor").size() == 1);
  const auto& h = ts.queries[0].chains[0];
  REQUIRE(h.rounds.size() == 2);
  CHECK(h.rounds[1].refinement == h.initial);
  auto r = evaluate(ts);
  CHECK(r.discriminability == 0.0);
  CHECK_FALSE(r.helpfulness.has_value());

  cfg.early_exit = true;
  rig.gateway.clear_log();
  auto early = run_protocol(rig.ctx(), {make_query("a")}, cfg);
  CHECK(early.queries[0].chains[0].rounds.size() == 1);
  CHECK(rig.calls("critic").size() == 1);
}

TEST_CASE("always-flag critic on a 50/50 stream has discriminability 0.5") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest& req, int) -> std::optional<std::string> {
    if (req.task == Task::refine) return "Again\n#### 0";
    return std::string("Try\n#### ") + (req.query_id.back() % 2 ? "12" : "0");
  });
  rig.critic->set_default(kFlag);
  std::vector<Query> qs;
  for (int i = 0; i < 10; ++i) qs.push_back(make_query("q" + std::to_string(i)));
  auto r = evaluate(run_protocol(rig.ctx(2), qs, ProtocolConfig::for_mode(ProtocolMode::single_round)));
  CHECK(r.discriminability == doctest::Approx(0.5));
  CHECK(r.helpfulness == 0.0);
  CHECK(r.helpfulness_denominator == 5);
}

TEST_CASE("parallel-K issues K independent chains") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest& req, int) {
    return std::optional(std::string("#### ") + (req.seed % 3 ? "12" : "7"));
  });
  rig.critic->set_default(kPass);
  auto cfg = ProtocolConfig::for_mode(ProtocolMode::parallel_k, 5);
  auto ts = run_protocol(rig.ctx(), {make_query("a")}, cfg);
  int initial = 0;
  for (auto& r : rig.calls("actor")) initial += r.task == Task::reason;
  CHECK(initial == 5);
  CHECK(rig.calls("critic").size() <= 5);
  CHECK(ts.queries[0].chains.size() == 5);
  auto r = evaluate(ts);
  CHECK(r.maj_at_k.size() == 5);
  for (int k = 2; k <= 5; ++k) CHECK(r.pass_at_k[k] >= r.pass_at_k[k - 1]);
}

TEST_CASE("sequential-K contexts are truncated") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest& req, int) {
    return std::optional("Attempt " + std::to_string(req.seed % 1000) + "\n#### 5");
  });
  rig.critic->set_default(kFlag);
  auto cfg = ProtocolConfig::for_mode(ProtocolMode::sequential_k, 3);
  auto ts = run_protocol(rig.ctx(), {make_query("a")}, cfg);
  const auto& h = ts.queries[0].chains[0];
  auto critic_calls = rig.calls("critic");
  REQUIRE(critic_calls.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    auto secs = parse_sections(critic_calls[i].messages);
    REQUIRE(secs.size() == 2);
    const ReasoningPath& prev = i == 0 ? h.initial : h.rounds[i - 1].refinement;
    CHECK(secs[1].body == prev.text());
  }
  auto refine_calls = rig.calls("actor");
  REQUIRE(refine_calls.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) {
    auto secs = parse_sections(refine_calls[i].messages);
    REQUIRE(secs.size() == 3);
    const ReasoningPath& prev = i == 1 ? h.initial : h.rounds[i - 2].refinement;
    CHECK(secs[1].body == prev.text());
    CHECK(secs[2].body == format_critique(h.rounds[i - 1].critique));
  }
  auto r = evaluate(ts);
  CHECK(r.sequential_mv.has_value());
  CHECK(sample_answers(ts.queries[0], cfg).size() == 3);
}

TEST_CASE("backend failures mark the query and skip it in metrics") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest& req, int) -> std::optional<std::string> {
    if (req.query_id == "bad") throw BackendUnavailable("down");
    return "#### 12";
  });
  rig.critic->set_default("no block");
  auto ts = run_protocol(rig.ctx(), {make_query("ok"), make_query("bad")}, ProtocolConfig::for_mode(ProtocolMode::response_only));
  CHECK_FALSE(ts.queries[0].failed);
  CHECK(ts.queries[1].failed);
  auto r = evaluate(ts);
  CHECK(r.queries == 1);
  CHECK(r.failed == 1);
  // unparseable critic reply fails the query too
  auto single = run_protocol(rig.ctx(), {make_query("ok")}, ProtocolConfig::for_mode(ProtocolMode::single_round));
  CHECK(single.queries[0].failed);
}

TEST_CASE("per-difficulty accuracy and histogram") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest& req, int) {
    return std::optional(std::string("#### ") + (req.query_id == "hard" ? "0" : "12"));
  });
  auto ts = run_protocol(rig.ctx(), {make_query("easy", "12", 1), make_query("hard", "12", 5), make_query("none")},
                         ProtocolConfig::for_mode(ProtocolMode::response_only));
  auto r = evaluate(ts);
  CHECK(r.per_difficulty[0] == 1.0);
  CHECK(r.per_difficulty[4] == 0.0);
  CHECK_FALSE(r.per_difficulty[2].has_value());
  CHECK(r.correct_fraction_histogram[9] == 2);
  CHECK(r.correct_fraction_histogram[0] == 1);
}

TEST_CASE("correct-fraction histogram flags a dominant distractor") {
  // gold at 0.40, one distractor at 0.45: the vote goes wrong
  Query q = make_query("fig", "40");
  TranscriptSet ts{ProtocolConfig::for_mode(ProtocolMode::parallel_k, 20), {}};
  QueryTranscript t;
  t.query = q;
  auto chain = [&](const char* ans) {
    return InteractionHistory{q, ReasoningPath::from_text(std::string("#### ") + ans, Provenance::sampled), {}};
  };
  for (int i = 0; i < 20; ++i) t.chains.push_back(chain(i < 8 ? "40" : i < 17 ? "45" : "7"));
  ts.queries.push_back(t);
  auto hist = correct_fraction_histogram(ts);
  REQUIRE(hist.size() == 1);
  CHECK(hist[0].fraction == doctest::Approx(0.4));
  CHECK_FALSE(hist[0].maj_correct);
  auto r = evaluate(ts);
  CHECK(r.correct_fraction_histogram[4] == 1);
  CHECK(r.pass_at_k[1] == 1.0);
  CHECK(r.maj_at_k[20] == 0.0);

  ts.queries[0].chains.resize(8);
  ts.config.K = 8;
  CHECK(correct_fraction_histogram(ts)[0].maj_correct);
}

TEST_CASE("transcripts serialize") {
  Rig rig;
  rig.actor->set_default("#### 12");
  rig.critic->set_default(kPass);
  auto ts = run_protocol(rig.ctx(), {make_query("a")}, ProtocolConfig::for_mode(ProtocolMode::single_round));
  auto j = to_json(ts.queries[0]);
  CHECK(j["chains"].size() == 1);
  CHECK(j["critic_calls"] == 1);
  auto back = history_from_json(j["chains"][0]);
  CHECK(back.rounds.size() == 1);
  CHECK(to_json(evaluate(ts))["accuracy"] == 1.0);
}
