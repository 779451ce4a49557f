#include "doctest.h"

#include "critloop/core.hpp"
#include "critloop/critique_format.hpp"
#include "critloop/prompts.hpp"
#include "critloop/serialize.hpp"

using namespace critloop;

namespace {

Query sample_query() {
  Query q;
  q.id = "q1";
  q.text = "Tom has 3 boxes of 4 apples. How many apples?";
  q.gold_answer = "12";
  q.source = QuerySource::gsm8k_like;
  q.difficulty = 2;
  return q;
}

ReasoningPath three_steps() {
  return ReasoningPath::from_text("3 boxes\n\n4 apples each\n#### 12", Provenance::sampled, {0.7, 42, "actor"});
}

}  // namespace

TEST_CASE("query validation") {
  Query q = sample_query();
  CHECK_NOTHROW(q.validate());
  q.difficulty = 6;
  CHECK_THROWS_AS(q.validate(), InvariantError);
  q.difficulty.reset();
  q.gold_answer = "";
  CHECK_THROWS_AS(q.validate(), InvariantError);
}

TEST_CASE("paths segment on non-blank lines and derive the answer") {
  auto p = three_steps();
  REQUIRE(p.size() == 3);
  CHECK(p.steps()[1].index == 1);
  CHECK(p.steps()[1].text == "4 apples each");
  CHECK(p.final_answer()->raw() == "12");
  CHECK(p.text() == "3 boxes\n4 apples each\n#### 12");
  CHECK(p.step_texts(1) == std::vector<std::string>{"4 apples each", "#### 12"});
  CHECK_THROWS_AS(ReasoningPath::from_steps({"a\nb"}, Provenance::sampled), InvariantError);
}

TEST_CASE("critique invariants") {
  using V = StepVerdict;
  CHECK_NOTHROW(Critique::make({V::correct, V::incorrect, V::not_evaluated}, 1, "x"));
  CHECK_THROWS_AS(Critique::make({V::incorrect, V::incorrect}, 1, "x"), InvariantError);
  CHECK_THROWS_AS(Critique::make({V::correct, V::correct}, 1, "x"), InvariantError);
  CHECK_THROWS_AS(Critique::make({V::correct, V::not_evaluated}, std::nullopt, "x"), InvariantError);
  CHECK_THROWS_AS(Critique::make({V::correct}, 3, "x"), InvariantError);
  CHECK_THROWS_AS(Critique::make({V::correct, V::correct}, std::nullopt, "x", {"only one"}), InvariantError);

  auto c = Critique::flawed_at(4, 2, "step 2 is off", "5*3 is 15");
  CHECK(c.flawed());
  CHECK(c.overall_verdict() == OverallVerdict::flawed);
  CHECK(c.step_verdicts() == std::vector<V>{V::correct, V::correct, V::incorrect, V::not_evaluated});
  CHECK(c.feedback_for_step(2) == "5*3 is 15");
  CHECK(c.feedback_for_step(0).empty());
  CHECK(Critique::flawed_at(3, 1, "overall").feedback_for_step(1) == "overall");
  CHECK_FALSE(Critique::all_correct(3).flawed());
}

TEST_CASE("histories and context views") {
  InteractionHistory h{sample_query(), three_steps(), {}};
  auto c1 = Critique::flawed_at(3, 1, "recount");
  auto y1 = ReasoningPath::from_text("3 boxes\n3*4 = 12\n#### 12", Provenance::refinement);
  CHECK_THROWS_AS(append_round(h, c1, y1, 2), InvariantError);
  auto h1 = append_round(h, c1, y1, 1);
  CHECK(h.rounds.empty());
  CHECK(h1.latest() == y1);

  auto full = context_view(h1, ContextRole::critique, ContextMode::full);
  REQUIRE(full.size() == 4);
  CHECK(full[0].kind == SegmentKind::query);
  CHECK(full[2].kind == SegmentKind::critique);
  auto trunc = context_view(h1, ContextRole::critique, ContextMode::truncated);
  REQUIRE(trunc.size() == 2);
  CHECK(trunc[1].text == y1.text());

  auto c2 = Critique::all_correct(3);
  auto refine = context_view(h1, ContextRole::refinement, ContextMode::truncated, &c2);
  REQUIRE(refine.size() == 3);
  CHECK(refine[2].text == format_critique(c2));
  CHECK_THROWS_AS(context_view(h1, ContextRole::refinement, ContextMode::full), std::invalid_argument);
}

TEST_CASE("critique block round trip") {
  auto c = Critique::make({StepVerdict::correct, StepVerdict::incorrect, StepVerdict::not_evaluated}, 1,
                          "the product is wrong\nredo it", {"", "4*3 is 12", ""});
  std::string block = format_critique(c);
  CHECK(contains_critique_block(block));
  CHECK(parse_critique_reply("Let me check.\n" + block + "\ntrailing words", 3) == c);
}

TEST_CASE("critique parsing derives missing fields") {
  auto c = parse_critique_reply("<critique>\nfirst_error: 1\nfeedback: off by one\n</critique>", 3);
  CHECK(c.step_verdicts()[2] == StepVerdict::not_evaluated);
  auto d = parse_critique_reply("<critique>\nverdicts: correct, incorrect\nfeedback: no\n</critique>", 2);
  CHECK(d.first_error_index() == 1);
  auto ok = parse_critique_reply("<critique>\nfirst_error: none\nfeedback: fine\n</critique>", 2);
  CHECK_FALSE(ok.flawed());
  // last block wins
  auto last = parse_critique_reply("<critique>\nfirst_error: 0\n</critique> then <critique>\nfirst_error: none\n</critique>", 2);
  CHECK_FALSE(last.flawed());
}

TEST_CASE("critique parse errors") {
  CHECK_THROWS_AS(parse_critique_reply("no block here", 2), CritiqueParseError);
  CHECK_THROWS_AS(parse_critique_reply("<critique>\nfeedback: x\n</critique>", 2), CritiqueParseError);
  CHECK_THROWS_AS(parse_critique_reply("<critique>\nfirst_error: 5\n</critique>", 2), CritiqueParseError);
  CHECK_THROWS_AS(parse_critique_reply("<critique>\nverdicts: correct\n</critique>", 2), CritiqueParseError);
  CHECK_THROWS_AS(parse_critique_reply("<critique>\nverdicts: correct, maybe\n</critique>", 2), CritiqueParseError);
  CHECK_THROWS_AS(parse_critique_reply("<critique>\nverdicts: correct, incorrect\nfirst_error: 0\n</critique>", 2),
                  CritiqueParseError);
  CHECK_THROWS_AS(parse_critique_reply("<critique>\nmood: fine\n</critique>", 2), CritiqueParseError);
}

TEST_CASE("step judgements") {
  StepJudgement j{StepVerdict::incorrect, "sign error"};
  auto back = parse_step_reply(format_step_judgement(j));
  CHECK(back.verdict == StepVerdict::incorrect);
  CHECK(back.feedback == "sign error");
  CHECK_THROWS_AS(parse_step_reply("<critique>\nverdict: not-evaluated\n</critique>"), CritiqueParseError);
}

TEST_CASE("serialization round trips") {
  auto q = sample_query();
  CHECK(query_from_json(to_json(q)).difficulty == 2);
  auto p = three_steps();
  CHECK(path_from_json(to_json(p)) == p);
  auto c = Critique::flawed_at(3, 1, "fb", "note");
  CHECK(critique_from_json(to_json(c)) == c);

  RefinementRecord r{"q1", p, c, ReasoningPath::from_text("x\n#### 12", Provenance::refinement), 1};
  auto r2 = refinement_from_json(to_json(r));
  CHECK(r2.refined_path == r.refined_path);
  CHECK(r2.critique == c);

  InteractionHistory h{q, p, {}};
  h = append_round(h, c, r.refined_path, 1);
  auto h2 = history_from_json(to_json(h));
  CHECK(h2.rounds.size() == 1);
  CHECK(h2.rounds[0] == h.rounds[0]);
}

TEST_CASE("records carry a schema version") {
  auto rec = make_record({{"a", 1}});
  CHECK_NOTHROW(check_record(rec));
  CHECK(dump_line(rec) == R"({"a":1,"schema_version":1})");
  json bad = rec;
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(check_record(bad), SchemaError);
  CHECK_THROWS_AS(check_record(json{{"a", 1}}), SchemaError);
  CHECK_THROWS_AS(parse_line("{oops"), SchemaError);
  CHECK_THROWS_AS(str_field(json{{"a", 1}}, "a"), SchemaError);
  CHECK_THROWS_AS(path_from_json(json{{"steps", 3}}), SchemaError);
}

TEST_CASE("prompt library") {
  PromptLibrary lib;
  CHECK(lib.names().size() == 10);
  lib.set("t", "Hello {name}, step {step} {unknown}");
  CHECK(lib.render("t", {{"name", "A"}, {"step", "2"}}) == "Hello A, step 2 {unknown}");
  CHECK_THROWS_AS(lib.get("missing"), ConfigError);
  PromptLibrary other;
  CHECK(other.fingerprint() != lib.fingerprint());
  CHECK(strip_template_comments("# c1\n# c2\nbody\n\n") == "body");

  auto msgs = reason_messages(other, sample_query());
  CHECK(msgs[0].role == "system");
  CHECK(last_section(msgs, section::problem).value() == sample_query().text);
  auto secs = parse_sections(partial_critique_messages(other, sample_query(), {"a", "b"}, {"c"}));
  REQUIRE(secs.size() == 3);
  CHECK(secs[1].header == "Verified steps");
  CHECK(secs[1].body == "a\nb");
}

TEST_CASE("critic and actor views assign roles") {
  PromptLibrary lib;
  InteractionHistory h{sample_query(), three_steps(), {}};
  auto c = Critique::flawed_at(3, 0, "redo");
  auto cm = critique_messages(lib, context_view(h, ContextRole::critique, ContextMode::full));
  REQUIRE(cm.size() == 3);
  CHECK(cm[2].role == "user");
  auto rm = refine_messages(lib, context_view(h, ContextRole::refinement, ContextMode::full, &c));
  REQUIRE(rm.size() == 4);
  CHECK(rm[2].role == "assistant");
  CHECK(rm[3].role == "user");
}
