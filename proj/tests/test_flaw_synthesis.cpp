#include <cmath>

#include "doctest.h"

#include "critloop/flaw_synthesis.hpp"
#include "critloop/oracle.hpp"
#include "critloop/scripted_backend.hpp"
#include "critloop/simulated_backend.hpp"

using namespace critloop;

namespace {

Query make_query(std::string id, std::string gold = "12") {
  Query q;
  q.id = id;
  q.text = "Problem text for " + id;
  q.gold_answer = std::move(gold);
  return q;
}

std::string solution(const std::string& answer, int tag = 0) {
  return "Read the numbers (" + std::to_string(tag) + ")\nMultiply 3 by 4\nGet the total\n#### " + answer;
}

struct Rig {
  Gateway gateway;
  PromptLibrary prompts;
  std::shared_ptr<ScriptedBackend> actor = std::make_shared<ScriptedBackend>();
  Rig() { gateway.register_backend("actor", actor); }
  SynthContext ctx() { return SynthContext{gateway, prompts, "actor", 5, 512}; }
};

double three_sigma(double p, int n) { return 3 * std::sqrt(p * (1 - p) / n); }

}  // namespace

TEST_CASE("rg1: always-correct actor yields no flaws") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest&, int i) { return std::optional(solution("12", i)); });
  auto r = rg1_sample(rig.ctx(), make_query("q"), 5);
  CHECK(r.flawed.empty());
  CHECK(r.correct.size() == 5);
}

TEST_CASE("rg1: alternating actor splits by reward and hints the reference") {
  Rig rig;
  rig.actor->set_handler(
      [](const GenerationRequest&, int i) { return std::optional(solution(i % 2 ? "13" : "12", i)); });
  auto r = rg1_sample(rig.ctx(), make_query("q"), 4);
  REQUIRE(r.flawed.size() == 2);
  CHECK(r.correct.size() == 2);
  for (const auto& f : r.flawed) {
    CHECK(f.hint == HintLevel::reference_only);
    CHECK(f.reference_path.has_value());
    CHECK(f.flawed_path.provenance() == Provenance::rg1);
    CHECK_NOTHROW(check_storable(make_query("q"), f));
  }
}

TEST_CASE("rg1: no correct sibling means no hint") {
  Rig rig;
  rig.actor->set_default(solution("99"));
  auto r = rg1_sample(rig.ctx(), make_query("q"), 2);
  REQUIRE(r.flawed.size() == 2);
  CHECK(r.flawed[0].hint == HintLevel::none);
  CHECK_THROWS_AS(rg1_sample(rig.ctx(), make_query("q"), 0), std::invalid_argument);
}

TEST_CASE("rg1: simulated actor at a = 0.5") {
  Query q = make_query("sim", "40");
  Gateway g;
  PromptLibrary prompts;
  StochasticActorSpec spec;
  spec.accuracy = {0.5, 0.5, 0.5, 0.5, 0.5};
  g.register_backend("actor", std::make_shared<SimulatedActor>(std::make_shared<SimWorld>(std::vector<Query>{q}), spec,
                                                               StochasticCriticSpec{}));
  auto r = rg1_sample(SynthContext{g, prompts, "actor", 1, 512}, q, 1000);
  CHECK(std::abs(static_cast<double>(r.flawed.size()) - 500.0) <= 47.5);
}

TEST_CASE("rg2 schedule covers the last two thirds at each temperature") {
  auto s = rg2_default_schedule(6);
  REQUIRE(s.size() == 12);
  CHECK(s.front() == ScheduleEntry{2, 0.7});
  CHECK(s[3] == ScheduleEntry{5, 0.7});
  CHECK(s.back() == ScheduleEntry{5, 1.3});
}

TEST_CASE("rg2: flip at step 2 preserves the prefix") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest& req, int) -> std::optional<std::string> {
    auto prefix = last_section(req.messages, section::prefix);
    bool flip = prefix && segment_steps(*prefix).size() == 2;
    return std::string("Finish up\n#### ") + (flip ? "13" : "12");
  });
  Query q = make_query("q");
  auto ref = ReasoningPath::from_text(solution("12"), Provenance::sampled);
  auto r = rg2_error_location(rig.ctx(), q, ref, rg2_default_schedule(ref.size()));
  REQUIRE(r.record.has_value());
  CHECK(r.record->error_start_step == 2);
  CHECK(r.attempts == 2);
  CHECK(r.record->flawed_path.step_texts(0, 2) == ref.step_texts(0, 2));
  CHECK(r.record->hint == HintLevel::reference_start_step);
  CHECK(reward(q, r.record->flawed_path) == 0);
  CHECK(r.correct.size() == 1);
}

TEST_CASE("rg2: exhausts a 6-pair schedule") {
  Rig rig;
  rig.actor->set_default("Finish up\n#### 12");
  auto ref = ReasoningPath::from_text("a\nb\n#### 12", Provenance::sampled);
  auto schedule = rg2_default_schedule(ref.size());
  REQUIRE(schedule.size() == 6);
  auto r = rg2_error_location(rig.ctx(), make_query("q"), ref, schedule);
  CHECK_FALSE(r.record.has_value());
  CHECK(r.attempts == 6);
  CHECK_THROWS_AS(rg2_error_location(rig.ctx(), make_query("q"), ReasoningPath::from_text("#### 1", Provenance::sampled),
                                     schedule),
                  std::invalid_argument);
}

TEST_CASE("rg3: first attempt injects") {
  Rig rig;
  rig.actor->set_default("Use 3+4 instead\n#### 7\n<mistake>\ntype: wrong-operation\ndetail: added instead of multiplied\n</mistake>");
  auto ref = ReasoningPath::from_text(solution("12"), Provenance::sampled);
  auto r = rg3_inject_mistake(rig.ctx(), make_query("q"), ref, default_taxonomy());
  REQUIRE(r.record.has_value());
  CHECK(r.attempts == 1);
  CHECK(r.record->hint == HintLevel::location_detail);
  auto& tax = default_taxonomy();
  CHECK(std::find(tax.begin(), tax.end(), *r.record->error_type) != tax.end());
  CHECK(r.record->error_detail == "added instead of multiplied");
  int k = *r.record->error_start_step;
  CHECK(r.record->flawed_path.step_texts(0, static_cast<std::size_t>(k)) == ref.step_texts(0, static_cast<std::size_t>(k)));
  // the mistake block is not part of the path
  CHECK(r.record->flawed_path.text().find("<mistake>") == std::string::npos);
}

TEST_CASE("rg3: gives up after exactly 16 attempts") {
  Rig rig;
  rig.actor->set_default("Still fine\n#### 12");
  auto ref = ReasoningPath::from_text(solution("12"), Provenance::sampled);
  auto r = rg3_inject_mistake(rig.ctx(), make_query("q"), ref, default_taxonomy());
  CHECK_FALSE(r.record.has_value());
  CHECK(r.attempts == 16);
  CHECK(rig.gateway.stats("actor").requests == 16);
}

namespace {

struct SimRig {
  std::vector<Query> queries;
  Gateway gateway;
  PromptLibrary prompts;
  SimRig(int n, SimActorOptions opt) {
    for (int i = 0; i < n; ++i) queries.push_back(make_query("s" + std::to_string(i), std::to_string(100 + i % 50)));
    gateway.register_backend("actor", std::make_shared<SimulatedActor>(std::make_shared<SimWorld>(queries),
                                                                       StochasticActorSpec{}, StochasticCriticSpec{}, opt));
  }
  SynthContext ctx() { return SynthContext{gateway, prompts, "actor", 77, 512}; }
};

}  // namespace

TEST_CASE("rg2: per-attempt flaw rate 0.5 over 6 pairs") {
  SimActorOptions opt;
  opt.continue_correct = 0.5;
  SimRig rig(10000, opt);
  std::vector<ScheduleEntry> schedule;
  for (double t : {0.7, 1.0, 1.3})
    for (int k : {1, 2}) schedule.push_back({k, t});
  int hits = 0;
  for (const auto& q : rig.queries) {
    auto ref = ReasoningPath::from_text(sim_path_text(q.gold_answer, 1), Provenance::sampled);
    hits += rg2_error_location(rig.ctx(), q, ref, schedule).record ? 1 : 0;
  }
  double p = 1 - std::pow(0.5, 6);
  CHECK(std::abs(hits / 10000.0 - p) <= three_sigma(p, 10000));
}

TEST_CASE("rg3: per-attempt flaw rate 0.3 over 16 attempts") {
  SimActorOptions opt;
  opt.inject_correct = 0.7;
  SimRig rig(10000, opt);
  int hits = 0;
  for (const auto& q : rig.queries) {
    auto ref = ReasoningPath::from_text(sim_path_text(q.gold_answer, 1), Provenance::sampled);
    hits += rg3_inject_mistake(rig.ctx(), q, ref, default_taxonomy()).record ? 1 : 0;
  }
  double p = 1 - std::pow(0.7, 16);
  CHECK(std::abs(hits / 10000.0 - p) <= std::max(three_sigma(p, 10000), 1e-4));
}

TEST_CASE("flaw records validate per hint level and round trip") {
  Query q = make_query("q");
  FlawRecord r;
  r.query_id = "q";
  r.flawed_path = ReasoningPath::from_text(solution("13"), Provenance::rg2);
  r.hint = HintLevel::reference_start_step;
  CHECK_THROWS_AS(r.validate(), InvariantError);
  r.reference_path = ReasoningPath::from_text(solution("12"), Provenance::sampled);
  CHECK_THROWS_AS(r.validate(), InvariantError);
  r.error_start_step = 1;
  CHECK_NOTHROW(r.validate());
  auto back = flaw_from_json(to_json(r));
  CHECK(back.error_start_step == 1);
  CHECK(back.flawed_path == r.flawed_path);
  r.flawed_path = ReasoningPath::from_text(solution("12"), Provenance::rg2);
  CHECK_THROWS_AS(check_storable(q, r), InvariantError);
  r.hint = HintLevel::location_detail;
  r.flawed_path = ReasoningPath::from_text(solution("13"), Provenance::rg3);
  CHECK_THROWS_AS(r.validate(), InvariantError);
}

TEST_CASE("stage driver keeps query order and counts missing references") {
  Rig rig;
  rig.actor->set_handler([](const GenerationRequest& req, int i) -> std::optional<std::string> {
    if (req.query_id == "none") return solution("0", i);
    if (req.task == Task::inject) return std::string("Broken\n#### 1");
    return solution("12", i);
  });
  std::vector<Query> qs{make_query("a"), make_query("none"), make_query("b")};
  auto out = synthesize_flaws(rig.ctx(), qs, FlawStrategy::rg3, 2, 3);
  REQUIRE(out.flaws.size() == 2);
  CHECK(out.flaws[0].query_id == "a");
  CHECK(out.flaws[1].query_id == "b");
  CHECK(out.queries_without_reference == 1);
  CHECK(out.correct.size() == 4);
  auto rg1 = synthesize_flaws(rig.ctx(), qs, FlawStrategy::rg1, 2, 1);
  CHECK(rg1.flaws.size() == 2);
  CHECK(rg1.flaws[0].query_id == "none");
}
