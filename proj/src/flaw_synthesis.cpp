#include "critloop/flaw_synthesis.hpp"

#include "critloop/oracle.hpp"
#include "critloop/parallel.hpp"
#include "critloop/rng.hpp"

namespace critloop {

namespace {

constexpr std::pair<HintLevel, std::string_view> kHints[] = {
    {HintLevel::none, "none"},
    {HintLevel::reference_only, "reference-only"},
    {HintLevel::reference_start_step, "reference+start-step"},
    {HintLevel::location_detail, "location+detail"},
};

constexpr std::pair<FlawStrategy, std::string_view> kStrategies[] = {
    {FlawStrategy::rg1, "rg1"}, {FlawStrategy::rg2, "rg2"}, {FlawStrategy::rg3, "rg3"}};

std::uint64_t flaw_seed(const SynthContext& ctx, const Query& q, std::string_view what, int attempt) {
  return mix_seed({ctx.seed, hash_string(q.id), hash_string(what), static_cast<std::uint64_t>(attempt)});
}

GenerationRequest actor_request(const SynthContext& ctx, const Query& q, Task task, std::vector<Message> messages,
                                double temperature, std::uint64_t seed, int n = 1) {
  GenerationRequest req;
  req.messages = std::move(messages);
  req.temperature = temperature;
  req.max_tokens = ctx.max_tokens;
  req.n = n;
  req.seed = seed;
  req.backend_id = ctx.actor_id;
  req.task = task;
  req.query_id = q.id;
  req.request_id = q.id + "/" + to_string(task) + "/" + std::to_string(seed);
  return req;
}

// Splits "<mistake> ... </mistake>" off an injection reply.
std::pair<std::string, std::optional<std::string>> split_mistake_block(const std::string& reply) {
  auto open = reply.rfind("<mistake>");
  if (open == std::string::npos) return {reply, std::nullopt};
  auto close = reply.find("</mistake>", open);
  std::string body = reply.substr(open + 9, close == std::string::npos ? std::string::npos : close - open - 9);
  std::string rest = reply.substr(0, open);
  if (close != std::string::npos) rest += reply.substr(close + 10);
  std::optional<std::string> detail;
  for (const auto& line : segment_steps(body)) {
    auto p = line.find("detail:");
    if (p != std::string::npos) {
      std::string d = line.substr(p + 7);
      d.erase(0, d.find_first_not_of(' '));
      if (!d.empty()) detail = d;
    }
  }
  return {rest, detail};
}

}  // namespace

std::string to_string(HintLevel h) {
  for (const auto& [v, n] : kHints)
    if (v == h) return std::string(n);
  return "?";
}

HintLevel parse_hint_level(std::string_view s) {
  for (const auto& [v, n] : kHints)
    if (n == s) return v;
  throw std::invalid_argument("unknown hint level: " + std::string(s));
}

std::string to_string(FlawStrategy s) {
  for (const auto& [v, n] : kStrategies)
    if (v == s) return std::string(n);
  return "?";
}

FlawStrategy parse_flaw_strategy(std::string_view s) {
  for (const auto& [v, n] : kStrategies)
    if (n == s) return v;
  throw ConfigError("unknown flaw strategy: " + std::string(s));
}

void FlawRecord::validate() const {
  if (query_id.empty()) throw InvariantError("flaw record: empty query_id");
  bool needs_ref = hint != HintLevel::none;
  bool needs_step = hint == HintLevel::reference_start_step || hint == HintLevel::location_detail;
  bool needs_detail = hint == HintLevel::location_detail;
  if (needs_ref && !reference_path) throw InvariantError("flaw record: hint " + to_string(hint) + " needs a reference path");
  if (needs_step && !error_start_step) throw InvariantError("flaw record: hint " + to_string(hint) + " needs error_start_step");
  if (needs_detail && (!error_type || !error_detail || error_detail->empty()))
    throw InvariantError("flaw record: location+detail hint needs error_type and error_detail");
  if (error_start_step && (*error_start_step < 0 || static_cast<std::size_t>(*error_start_step) > flawed_path.size()))
    throw InvariantError("flaw record: error_start_step out of range");
  if (hint == HintLevel::reference_start_step && reference_path) {
    auto k = static_cast<std::size_t>(*error_start_step);
    if (reference_path->size() < k || flawed_path.size() < k)
      throw InvariantError("flaw record: prefix shorter than error_start_step");
    for (std::size_t i = 0; i < k; ++i)
      if (reference_path->steps()[i].text != flawed_path.steps()[i].text)
        throw InvariantError("flaw record: prefix before error_start_step differs from the reference");
  }
}

void check_storable(const Query& q, const FlawRecord& r) {
  r.validate();
  if (reward(q, r.flawed_path) != 0)
    throw InvariantError("flaw record for " + q.id + " has a correct final answer");
}

json to_json(const FlawRecord& r) {
  json j{{"query_id", r.query_id}, {"flawed_path", to_json(r.flawed_path)}, {"hint", to_string(r.hint)}};
  j["reference_path"] = r.reference_path ? to_json(*r.reference_path) : json(nullptr);
  j["error_start_step"] = r.error_start_step ? json(*r.error_start_step) : json(nullptr);
  j["error_type"] = r.error_type ? json(*r.error_type) : json(nullptr);
  j["error_detail"] = r.error_detail ? json(*r.error_detail) : json(nullptr);
  return j;
}

FlawRecord flaw_from_json(const json& j) {
  FlawRecord r;
  r.query_id = str_field(j, "query_id");
  r.flawed_path = path_from_json(field(j, "flawed_path"));
  try {
    r.hint = parse_hint_level(str_field(j, "hint"));
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  if (j.contains("reference_path") && !j["reference_path"].is_null()) r.reference_path = path_from_json(j["reference_path"]);
  if (j.contains("error_start_step") && !j["error_start_step"].is_null())
    r.error_start_step = static_cast<int>(int_field(j, "error_start_step"));
  if (j.contains("error_type") && !j["error_type"].is_null()) r.error_type = str_field(j, "error_type");
  if (j.contains("error_detail") && !j["error_detail"].is_null()) r.error_detail = str_field(j, "error_detail");
  try {
    r.validate();
  } catch (const InvariantError& e) {
    throw SchemaError(e.what());
  }
  return r;
}

json to_json(const CorrectPath& c) { return {{"query_id", c.query_id}, {"path", to_json(c.path)}}; }

CorrectPath correct_path_from_json(const json& j) {
  return CorrectPath{str_field(j, "query_id"), path_from_json(field(j, "path"))};
}

Rg1Result rg1_sample(const SynthContext& ctx, const Query& q, int budget, double temperature) {
  if (budget < 1) throw std::invalid_argument("rg1_sample: budget must be >= 1");
  std::uint64_t seed = flaw_seed(ctx, q, "rg1", 0);
  auto replies = ctx.gateway.generate(
      actor_request(ctx, q, Task::reason, reason_messages(ctx.prompts, q), temperature, seed, budget));
  Rg1Result out;
  std::vector<ReasoningPath> wrong;
  for (const auto& text : replies) {
    auto p = ReasoningPath::from_text(text, Provenance::sampled, GenParams{temperature, seed, ctx.actor_id});
    if (reward(q, p))
      out.correct.push_back(std::move(p));
    else
      wrong.push_back(std::move(p));
  }
  for (auto& p : wrong) {
    FlawRecord r;
    r.query_id = q.id;
    r.flawed_path = ReasoningPath::from_steps(p.step_texts(), Provenance::rg1, p.gen_params());
    if (!out.correct.empty()) {
      r.hint = HintLevel::reference_only;
      r.reference_path = out.correct.front();
    }
    out.flawed.push_back(std::move(r));
  }
  return out;
}

std::vector<ScheduleEntry> rg2_default_schedule(std::size_t steps, const std::vector<double>& temperatures) {
  std::vector<ScheduleEntry> out;
  for (double t : temperatures)
    for (std::size_t k = steps / 3; k < steps; ++k) out.push_back({static_cast<int>(k), t});
  return out;
}

Rg2Outcome rg2_error_location(const SynthContext& ctx, const Query& q, const ReasoningPath& correct_path,
                              const std::vector<ScheduleEntry>& schedule) {
  if (reward(q, correct_path) != 1) throw std::invalid_argument("rg2_error_location: reference path is not correct");
  Rg2Outcome out;
  for (const auto& entry : schedule) {
    if (entry.step < 0 || static_cast<std::size_t>(entry.step) >= correct_path.size()) continue;
    std::uint64_t seed = flaw_seed(ctx, q, "rg2", out.attempts);
    ++out.attempts;
    auto prefix = correct_path.step_texts(0, static_cast<std::size_t>(entry.step));
    auto reply = ctx.gateway.generate(actor_request(ctx, q, Task::continue_from, continue_messages(ctx.prompts, q, prefix),
                                                    entry.temperature, seed));
    auto steps = prefix;
    for (auto& s : segment_steps(reply.front())) steps.push_back(std::move(s));
    GenParams g{entry.temperature, seed, ctx.actor_id};
    auto path = ReasoningPath::from_steps(steps, Provenance::rg2, g);
    if (reward(q, path)) {
      out.correct.push_back(ReasoningPath::from_steps(std::move(steps), Provenance::sampled, g));
      continue;
    }
    FlawRecord r;
    r.query_id = q.id;
    r.flawed_path = std::move(path);
    r.reference_path = correct_path;
    r.hint = HintLevel::reference_start_step;
    r.error_start_step = entry.step;
    out.record = std::move(r);
    break;
  }
  return out;
}

const std::vector<std::string>& default_taxonomy() {
  static const std::vector<std::string> t{"calculation-error", "misread-condition", "wrong-operation", "unit-error",
                                          "skipped-justification"};
  return t;
}

Rg3Outcome rg3_inject_mistake(const SynthContext& ctx, const Query& q, const ReasoningPath& correct_path,
                              const std::vector<std::string>& taxonomy, int max_attempts) {
  if (reward(q, correct_path) != 1) throw std::invalid_argument("rg3_inject_mistake: reference path is not correct");
  if (taxonomy.empty()) throw ConfigError("rg3: empty error taxonomy");
  if (correct_path.size() == 0) throw std::invalid_argument("rg3_inject_mistake: empty reference path");
  Rg3Outcome out;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::uint64_t seed = flaw_seed(ctx, q, "rg3", attempt);
    Rng rng(seed);
    // The last line usually only states the answer; aim the error before it.
    std::size_t span = correct_path.size() > 1 ? correct_path.size() - 1 : 1;
    int k = static_cast<int>(rng.below(span));
    const std::string& type = taxonomy[rng.below(taxonomy.size())];
    ++out.attempts;
    auto reply = ctx.gateway.generate(actor_request(
        ctx, q, Task::inject, inject_messages(ctx.prompts, q, correct_path, k, type, taxonomy), 1.0, seed));
    auto [body, detail] = split_mistake_block(reply.front());
    auto steps = correct_path.step_texts(0, static_cast<std::size_t>(k));
    for (auto& s : segment_steps(body)) steps.push_back(std::move(s));
    GenParams g{1.0, seed, ctx.actor_id};
    auto path = ReasoningPath::from_steps(steps, Provenance::rg3, g);
    if (reward(q, path)) {
      out.correct.push_back(ReasoningPath::from_steps(std::move(steps), Provenance::sampled, g));
      continue;
    }
    FlawRecord r;
    r.query_id = q.id;
    r.flawed_path = std::move(path);
    r.reference_path = correct_path;
    r.hint = HintLevel::location_detail;
    r.error_start_step = k;
    r.error_type = type;
    r.error_detail = detail.value_or("Step " + std::to_string(k) + " was rewritten to contain a " + type + ".");
    out.record = std::move(r);
    break;
  }
  return out;
}

FlawSynthesisOutput synthesize_flaws(const SynthContext& ctx, const std::vector<Query>& queries,
                                     FlawStrategy strategy, int budget, int threads,
                                     const std::vector<std::string>& taxonomy) {
  struct PerQuery {
    std::vector<FlawRecord> flaws;
    std::vector<ReasoningPath> correct;
    bool no_reference = false;
  };
  std::vector<PerQuery> results(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const Query& q = queries[i];
    auto& out = results[i];
    Rg1Result base = rg1_sample(ctx, q, budget);
    out.correct = base.correct;
    if (strategy == FlawStrategy::rg1) {
      out.flaws = std::move(base.flawed);
    } else if (base.correct.empty()) {
      out.no_reference = true;
    } else if (strategy == FlawStrategy::rg2) {
      const auto& ref = base.correct.front();
      auto r = rg2_error_location(ctx, q, ref, rg2_default_schedule(ref.size()));
      if (r.record) out.flaws.push_back(std::move(*r.record));
    } else {
      auto r = rg3_inject_mistake(ctx, q, base.correct.front(), taxonomy);
      if (r.record) out.flaws.push_back(std::move(*r.record));
    }
    for (const auto& f : out.flaws) check_storable(q, f);
  });
  FlawSynthesisOutput out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (auto& f : results[i].flaws) out.flaws.push_back(std::move(f));
    for (auto& c : results[i].correct) out.correct.push_back({queries[i].id, std::move(c)});
    out.queries_without_reference += results[i].no_reference ? 1 : 0;
  }
  return out;
}

}  // namespace critloop
