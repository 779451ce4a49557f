#include <atomic>
#include <cmath>

#include "doctest.h"

#include "critloop/critique_format.hpp"
#include "critloop/critique_synthesis.hpp"
#include "critloop/oracle.hpp"
#include "critloop/scripted_backend.hpp"
#include "critloop/simulated_backend.hpp"
#include "critloop/store.hpp"

using namespace critloop;

namespace {

Query make_query(std::string id) {
  Query q;
  q.id = std::move(id);
  q.text = "How many legs do 3 dogs have?";
  q.gold_answer = "12";
  return q;
}

ReasoningPath five_steps(const std::string& answer) {
  return ReasoningPath::from_text("Dogs have 4 legs\nThere are 3 dogs\nMultiply\nThat is " + answer + "\n#### " + answer,
                                  Provenance::rg1);
}

struct Rig {
  Gateway gateway;
  PromptLibrary prompts;
  std::shared_ptr<ScriptedBackend> annotator = std::make_shared<ScriptedBackend>();
  Rig() { gateway.register_backend("ann", annotator); }
  AnnotateContext ctx() { return AnnotateContext{gateway, prompts, "ann", 3, 512}; }
};

// Step index the incremental annotator is asked about.
int asked_step(const GenerationRequest& req) {
  auto pos = req.messages.front().text.find("Step to check: ");
  REQUIRE(pos != std::string::npos);
  return std::atoi(req.messages.front().text.c_str() + pos + 15);
}

CritiqueCandidate flawed_candidate(const Query& q) {
  CritiqueCandidate c;
  c.query_id = q.id;
  c.target_path = five_steps("13");
  c.critique = Critique::flawed_at(5, 2, "3 times 4 is 12");
  c.annotator_backend_id = "ann";
  return c;
}

}  // namespace

TEST_CASE("holistic: parses the annotator's trailer") {
  Rig rig;
  rig.annotator->set_default("Looks off.\n<critique>\nfirst_error: 2\nfeedback: F\n</critique>");
  auto o = critique_holistic(rig.ctx(), make_query("q"), five_steps("13"), HintInfo{});
  REQUIRE(o.candidate.has_value());
  CHECK(o.calls == 1);
  CHECK(o.candidate->critique.first_error_index() == 2);
  CHECK(o.candidate->critique.feedback() == "F");
  CHECK(o.candidate->critique.flawed());
}

TEST_CASE("holistic: all-correct reply on a flawed path fails the cross-check") {
  Rig rig;
  rig.annotator->set_default("<critique>\nfirst_error: none\nfeedback: fine\n</critique>");
  Query q = make_query("q");
  auto o = critique_holistic(rig.ctx(), q, five_steps("13"), HintInfo{});
  REQUIRE(o.candidate.has_value());
  CHECK(cross_check_flawed(q, *o.candidate) == Retention::discard);
}

TEST_CASE("holistic: index past the path is a parse failure") {
  Rig rig;
  rig.annotator->set_default("<critique>\nfirst_error: 9\nfeedback: F\n</critique>");
  auto o = critique_holistic(rig.ctx(), make_query("q"), five_steps("13"), HintInfo{});
  CHECK_FALSE(o.candidate.has_value());
  CHECK(o.failure.find("parse failure") == 0);
}

TEST_CASE("holistic: hint text per source") {
  Rig rig;
  rig.gateway.set_recording(true);
  rig.annotator->set_default("<critique>\nfirst_error: 1\nfeedback: F\n</critique>");
  HintInfo h;
  h.level = HintLevel::reference_start_step;
  h.reference = five_steps("12");
  h.start_step = 1;
  critique_holistic(rig.ctx(), make_query("q"), five_steps("13"), h);
  auto msgs = rig.gateway.request_log().at(0).messages;
  CHECK(msgs[0].text.find("the likely starting point of the error") != std::string::npos);
  CHECK(last_section(msgs, section::reference) == five_steps("12").text());
  CHECK(last_section(msgs, section::hint) == "The error likely starts at step 1.");
  CHECK(hint_instruction(HintInfo{HintLevel::reference_only, {}, {}, {}, {}}).find("a correct reference response") !=
        std::string::npos);
  CHECK(hint_instruction(HintInfo{HintLevel::location_detail, {}, {}, {}, {}}).find("detailed information about the mistake") !=
        std::string::npos);
}

TEST_CASE("incremental: stops at the first incorrect step") {
  Rig rig;
  rig.annotator->set_handler([](const GenerationRequest& req, int) -> std::optional<std::string> {
    StepJudgement j;
    if (asked_step(req) == 2) j = {StepVerdict::incorrect, "3*4 is 12"};
    return format_step_judgement(j);
  });
  auto o = critique_incremental(rig.ctx(), make_query("q"), five_steps("13"), HintInfo{});
  REQUIRE(o.candidate.has_value());
  CHECK(o.calls == 3);
  using V = StepVerdict;
  CHECK(o.candidate->critique.step_verdicts() ==
        std::vector<V>{V::correct, V::correct, V::incorrect, V::not_evaluated, V::not_evaluated});
  CHECK(o.candidate->critique.feedback_for_step(2) == "3*4 is 12");
  CHECK(o.candidate->strategy == CritiqueStrategy::incremental);
}

TEST_CASE("incremental: all correct takes one call per step") {
  Rig rig;
  rig.annotator->set_default(format_step_judgement({}));
  Query q = make_query("q");
  auto o = critique_incremental(rig.ctx(), q, five_steps("12"), HintInfo{});
  REQUIRE(o.candidate.has_value());
  CHECK(o.calls == 5);
  CHECK(o.candidate->critique.overall_verdict() == OverallVerdict::correct);
  CHECK(validate_correct_path_critique(q, *o.candidate) == Retention::keep);
}

TEST_CASE("incremental: first step wrong is one call") {
  Rig rig;
  rig.annotator->set_default(format_step_judgement({StepVerdict::incorrect, "dogs have 4 legs"}));
  auto o = critique_incremental(rig.ctx(), make_query("q"), five_steps("13"), HintInfo{});
  REQUIRE(o.candidate.has_value());
  CHECK(o.calls == 1);
  CHECK(o.candidate->critique.first_error_index() == 0);
}

TEST_CASE("correct-path validation") {
  Query q = make_query("q");
  CritiqueCandidate c;
  c.query_id = "q";
  c.target_path = five_steps("12");
  c.critique = Critique::all_correct(5);
  CHECK(validate_correct_path_critique(q, c) == Retention::keep);
  c.critique = Critique::flawed_at(5, 3, "suspicious");
  CHECK(validate_correct_path_critique(q, c) == Retention::discard);
  c.target_path = five_steps("13");
  CHECK_THROWS_AS(validate_correct_path_critique(q, c), std::invalid_argument);
}

TEST_CASE("filter decision rule, exhaustive at k = 10") {
  for (int s = 0; s <= 10; ++s) {
    CAPTURE(s);
    CHECK(filter_decision(s, 10, FilterMode::soft, 0.3) == (s >= 4));
    CHECK(filter_decision(s, 10, FilterMode::hard, 0.3) == (s >= 1));
  }
  CHECK_THROWS_AS(filter_decision(11, 10, FilterMode::soft, 0.3), std::invalid_argument);
}

TEST_CASE("mc_filter counts refinement successes") {
  Query q = make_query("q");
  Gateway g;
  PromptLibrary prompts;
  auto refiner = std::make_shared<ScriptedBackend>();
  g.register_backend("ref", refiner);
  // success on samples whose seed is even; count what the filter should see
  std::atomic<int> expected{0};
  refiner->set_handler([&](const GenerationRequest& req, int) -> std::optional<std::string> {
    bool ok = req.seed % 2 == 0;
    expected += ok;
    return std::string("redo\n#### ") + (ok ? "12" : "13");
  });
  auto c = flawed_candidate(q);
  auto v = mc_filter(RefineContext{g, prompts, "ref", 1, 0.7, 512}, q, c, 10, 0.3, FilterMode::soft);
  CHECK(v.successes == expected.load());
  CHECK(v.retained == (v.successes >= 4));
  CHECK(g.stats("ref").requests == 10);

  refiner->set_handler([](const GenerationRequest&, int) -> std::optional<std::string> { throw BackendError("down"); });
  auto f = mc_filter(RefineContext{g, prompts, "ref", 1, 0.7, 512}, q, c, 10, 0.3, FilterMode::hard);
  CHECK(f.failed_samples == 10);
  CHECK_FALSE(f.retained);

  c.critique = Critique::all_correct(5);
  CHECK_THROWS_AS(mc_filter(RefineContext{g, prompts, "ref", 1, 0.7, 512}, q, c), std::invalid_argument);
}

TEST_CASE("soft-filter retention matches the binomial tail") {
  // refiner succeeds w.p. h on every flagged path: P[Bin(10, h) >= 4]
  const double h = 0.35;
  const int n = 5000;
  std::vector<Query> qs;
  for (int i = 0; i < n; ++i) qs.push_back(make_query("m" + std::to_string(i)));
  Gateway g;
  PromptLibrary prompts;
  StochasticCriticSpec cs;
  cs.h = h;
  g.register_backend("ref", std::make_shared<SimulatedActor>(std::make_shared<SimWorld>(qs), StochasticActorSpec{}, cs));
  int kept = 0;
  for (const auto& q : qs) kept += mc_filter(RefineContext{g, prompts, "ref", 9, 0.7, 512}, q, flawed_candidate(q)).retained;
  double p = 0;
  for (int s = 4; s <= 10; ++s) p += std::tgamma(11) / (std::tgamma(s + 1) * std::tgamma(11 - s)) * std::pow(h, s) * std::pow(1 - h, 10 - s);
  CHECK(std::abs(kept / double(n) - p) <= 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("emit_dataset stats, dedup and determinism") {
  fs::path dir = fs::temp_directory_path() / "critloop_emit_test";
  fs::remove_all(dir);
  Query a = make_query("a"), b = make_query("b");
  auto c1 = flawed_candidate(a);
  auto c2 = flawed_candidate(b);
  auto c3 = flawed_candidate(b);
  c3.target_path = five_steps("12");
  c3.critique = Critique::all_correct(5);
  auto st = emit_dataset({a, b}, {c1, c2, c3, c1}, dir / "d.jsonl");
  CHECK(st.queries == 2);
  CHECK(st.critiques == 3);
  CHECK(st.golden_paths == 1);
  CHECK(st.duplicates_dropped == 1);
  std::string first = read_file(dir / "d.jsonl");
  emit_dataset({a, b}, {c1, c2, c3, c1}, dir / "d.jsonl");
  CHECK(read_file(dir / "d.jsonl") == first);
  CHECK(read_jsonl(dir / "d.jsonl").size() == 3);
  CHECK(fs::exists(dir / "d.jsonl.stats.json"));

  auto empty = emit_dataset({a}, {}, dir / "e.jsonl");
  CHECK(empty.queries == 0);
  CHECK(empty.critiques == 0);
  CHECK(read_file(dir / "e.jsonl").empty());
  fs::remove_all(dir);
}

TEST_CASE("candidates round trip and enforce incremental shape") {
  Query q = make_query("q");
  auto c = flawed_candidate(q);
  c.strategy = CritiqueStrategy::incremental;
  auto back = candidate_from_json(to_json(c));
  CHECK(back.critique == c.critique);
  CHECK(back.strategy == CritiqueStrategy::incremental);
}
