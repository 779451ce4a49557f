#include "critloop/critique_synthesis.hpp"

#include <set>

#include "critloop/critique_format.hpp"
#include "critloop/hash.hpp"
#include "critloop/oracle.hpp"
#include "critloop/rng.hpp"
#include "critloop/store.hpp"

namespace critloop {

namespace {

constexpr std::pair<CritiqueStrategy, std::string_view> kStrategies[] = {{CritiqueStrategy::holistic, "holistic"},
                                                                          {CritiqueStrategy::incremental, "incremental"}};
constexpr std::pair<FilterMode, std::string_view> kModes[] = {{FilterMode::soft, "soft"}, {FilterMode::hard, "hard"}};

std::uint64_t path_seed(std::uint64_t base, const Query& q, const ReasoningPath& p, std::string_view what) {
  return mix_seed({base, hash_string(q.id), hash_string(p.text()), hash_string(what)});
}

GenerationRequest annotator_request(const AnnotateContext& ctx, const Query& q, Task task, std::vector<Message> m,
                                    std::uint64_t seed, const std::string& tag) {
  GenerationRequest req;
  req.messages = std::move(m);
  req.temperature = 0.0;
  req.max_tokens = ctx.max_tokens;
  req.n = 1;
  req.seed = seed;
  req.backend_id = ctx.annotator_id;
  req.task = task;
  req.query_id = q.id;
  req.request_id = q.id + "/" + tag;
  return req;
}

}  // namespace

std::string to_string(CritiqueStrategy s) {
  for (const auto& [v, n] : kStrategies)
    if (v == s) return std::string(n);
  return "?";
}

CritiqueStrategy parse_critique_strategy(std::string_view s) {
  for (const auto& [v, n] : kStrategies)
    if (n == s) return v;
  throw ConfigError("unknown critique strategy: " + std::string(s));
}

std::string to_string(FilterMode m) {
  for (const auto& [v, n] : kModes)
    if (v == m) return std::string(n);
  return "?";
}

FilterMode parse_filter_mode(std::string_view s) {
  for (const auto& [v, n] : kModes)
    if (n == s) return v;
  throw ConfigError("unknown filter mode: " + std::string(s));
}

void CritiqueCandidate::validate() const {
  if (critique.step_verdicts().size() != target_path.size())
    throw InvariantError("critique candidate: verdict count differs from path length");
  if (strategy == CritiqueStrategy::incremental && critique.first_error_index()) {
    const auto& v = critique.step_verdicts();
    for (std::size_t i = static_cast<std::size_t>(*critique.first_error_index()) + 1; i < v.size(); ++i)
      if (v[i] != StepVerdict::not_evaluated)
        throw InvariantError("critique candidate: incremental verdicts after the first error must be not-evaluated");
  }
}

json to_json(const CritiqueCandidate& c) {
  return {{"query_id", c.query_id},
          {"target_path", to_json(c.target_path)},
          {"hint", to_string(c.hint)},
          {"critique", to_json(c.critique)},
          {"annotator_backend_id", c.annotator_backend_id},
          {"strategy", to_string(c.strategy)}};
}

CritiqueCandidate candidate_from_json(const json& j) {
  CritiqueCandidate c;
  c.query_id = str_field(j, "query_id");
  c.target_path = path_from_json(field(j, "target_path"));
  c.critique = critique_from_json(field(j, "critique"));
  c.annotator_backend_id = str_field(j, "annotator_backend_id");
  try {
    c.hint = parse_hint_level(str_field(j, "hint"));
    c.strategy = parse_critique_strategy(str_field(j, "strategy"));
    c.validate();
  } catch (const std::exception& e) {
    throw SchemaError(e.what());
  }
  return c;
}

HintInfo hint_of(const FlawRecord& r) {
  return HintInfo{r.hint, r.reference_path, r.error_start_step, r.error_type, r.error_detail};
}

std::string hint_instruction(const HintInfo& h) {
  switch (h.level) {
    case HintLevel::none:
      return "";
    case HintLevel::reference_only:
      return "You are also given a correct reference response under \"Reference\".";
    case HintLevel::reference_start_step:
      return "You are also given a correct reference response under \"Reference\" and, under \"Hint\", the likely "
             "starting point of the error.";
    case HintLevel::location_detail:
      return "You are also given, under \"Hint\", detailed information about the mistake: where it was introduced "
             "and what it is.";
  }
  return "";
}

std::vector<Section> hint_sections(const HintInfo& h) {
  std::vector<Section> out;
  if (h.level != HintLevel::none && h.reference) out.push_back({std::string(section::reference), h.reference->text()});
  if (h.level == HintLevel::reference_start_step && h.start_step)
    out.push_back({std::string(section::hint), "The error likely starts at step " + std::to_string(*h.start_step) + "."});
  if (h.level == HintLevel::location_detail) {
    std::string body;
    if (h.start_step) body += "The mistake is introduced at step " + std::to_string(*h.start_step) + ".";
    if (h.error_type) body += (body.empty() ? "" : "\n") + std::string("Error type: ") + *h.error_type + ".";
    if (h.error_detail) body += (body.empty() ? "" : "\n") + std::string("Detail: ") + *h.error_detail;
    out.push_back({std::string(section::hint), body});
  }
  return out;
}

AnnotationOutcome critique_holistic(const AnnotateContext& ctx, const Query& q, const ReasoningPath& path,
                                    const HintInfo& hint) {
  AnnotationOutcome out;
  auto req = annotator_request(ctx, q, Task::critique,
                               holistic_messages(ctx.prompts, q, path, hint_instruction(hint), hint_sections(hint)),
                               path_seed(ctx.seed, q, path, "holistic"), "holistic");
  out.calls = 1;
  auto reply = ctx.gateway.generate(req).front();
  try {
    CritiqueCandidate c;
    c.query_id = q.id;
    c.target_path = path;
    c.hint = hint.level;
    c.critique = parse_critique_reply(reply, path.size());
    c.annotator_backend_id = ctx.annotator_id;
    c.strategy = CritiqueStrategy::holistic;
    c.validate();
    out.candidate = std::move(c);
  } catch (const CritiqueParseError& e) {
    out.failure = std::string("parse failure: ") + e.what();
  } catch (const InvariantError& e) {
    out.failure = std::string("invalid critique: ") + e.what();
  }
  return out;
}

AnnotationOutcome critique_incremental(const AnnotateContext& ctx, const Query& q, const ReasoningPath& path,
                                       const HintInfo& hint) {
  AnnotationOutcome out;
  std::uint64_t seed = path_seed(ctx.seed, q, path, "incremental");
  std::vector<StepVerdict> verdicts(path.size(), StepVerdict::not_evaluated);
  std::vector<std::string> notes;
  std::optional<int> first_error;
  std::string feedback;
  for (std::size_t i = 0; i < path.size(); ++i) {
    auto req = annotator_request(
        ctx, q, Task::step_verdict,
        step_check_messages(ctx.prompts, q, path, static_cast<int>(i), hint_instruction(hint), hint_sections(hint)),
        seed, "step/" + std::to_string(i));
    ++out.calls;
    StepJudgement j;
    try {
      j = parse_step_reply(ctx.gateway.generate(req).front());
    } catch (const CritiqueParseError& e) {
      out.failure = "parse failure at step " + std::to_string(i) + ": " + e.what();
      return out;
    }
    verdicts[i] = j.verdict;
    if (j.verdict == StepVerdict::incorrect) {
      first_error = static_cast<int>(i);
      feedback = j.feedback;
      notes.assign(path.size(), {});
      notes[i] = j.feedback;
      break;
    }
  }
  if (!first_error) feedback = "Every step checks out.";
  CritiqueCandidate c;
  c.query_id = q.id;
  c.target_path = path;
  c.hint = hint.level;
  c.critique = Critique::make(std::move(verdicts), first_error, std::move(feedback), std::move(notes));
  c.annotator_backend_id = ctx.annotator_id;
  c.strategy = CritiqueStrategy::incremental;
  c.validate();
  out.candidate = std::move(c);
  return out;
}

Retention validate_correct_path_critique(const Query& q, const CritiqueCandidate& c) {
  if (reward(q, c.target_path) != 1)
    throw std::invalid_argument("validate_correct_path_critique: target path of " + q.id + " is not correct");
  for (auto v : c.critique.step_verdicts())
    if (v != StepVerdict::correct) return Retention::discard;
  return Retention::keep;
}

Retention cross_check_flawed(const Query& q, const CritiqueCandidate& c) {
  if (reward(q, c.target_path) != 0) throw std::invalid_argument("cross_check_flawed: target path of " + q.id + " is correct");
  return c.critique.flawed() ? Retention::keep : Retention::discard;
}

bool filter_decision(int successes, int k, FilterMode mode, double tau) {
  if (k < 1 || successes < 0 || successes > k) throw std::invalid_argument("filter_decision: need 0 <= successes <= k, k >= 1");
  if (mode == FilterMode::hard) return successes >= 1;
  // successes/k > tau, compared without dividing.
  return static_cast<double>(successes) > tau * static_cast<double>(k) + 1e-12 * k;
}

FilterVerdict mc_filter(const RefineContext& ctx, const Query& q, const CritiqueCandidate& c, int k, double tau,
                        FilterMode mode) {
  if (!c.critique.flawed()) throw std::invalid_argument("mc_filter: candidate critique is not flawed");
  FilterVerdict v;
  v.k = k;
  v.tau = tau;
  v.mode = mode;
  InteractionHistory h{q, c.target_path, {}};
  auto messages = refine_messages(ctx.prompts, context_view(h, ContextRole::refinement, ContextMode::truncated, &c.critique));
  std::uint64_t base = mix_seed({ctx.seed, hash_string(q.id), hash_string(c.target_path.text()),
                                 hash_string(format_critique(c.critique))});
  for (int i = 0; i < k; ++i) {
    GenerationRequest req;
    req.messages = messages;
    req.temperature = ctx.temperature;
    req.max_tokens = ctx.max_tokens;
    req.n = 1;
    req.seed = mix_seed({base, static_cast<std::uint64_t>(i)});
    req.backend_id = ctx.refiner_id;
    req.task = Task::refine;
    req.query_id = q.id;
    req.request_id = q.id + "/filter/" + std::to_string(i);
    try {
      auto reply = ctx.gateway.generate(req).front();
      v.successes += reward(q, reply);
    } catch (const BackendError&) {
      v.failed_samples++;
    }
  }
  v.retained = filter_decision(v.successes, k, mode, tau);
  return v;
}

json to_json(const DatasetStats& s) {
  return {{"queries", s.queries},
          {"golden_paths", s.golden_paths},
          {"critiques", s.critiques},
          {"duplicates_dropped", s.duplicates_dropped}};
}

DatasetStats emit_dataset(const std::vector<Query>& queries, const std::vector<CritiqueCandidate>& retained,
                          const std::filesystem::path& file) {
  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) by_id[q.id] = &q;
  DatasetStats stats;
  std::set<std::string> seen, query_ids, golden;
  std::vector<json> rows;
  for (const auto& c : retained) {
    auto it = by_id.find(c.query_id);
    if (it == by_id.end()) throw ConfigError("emit_dataset: candidate for unknown query " + c.query_id);
    json path = to_json(c.target_path);
    json critique = to_json(c.critique);
    std::string key = c.query_id + "\n" + sha256_hex(dump_line(path)) + "\n" + sha256_hex(dump_line(critique));
    if (!seen.insert(key).second) {
      stats.duplicates_dropped++;
      continue;
    }
    bool correct = reward(*it->second, c.target_path) == 1;
    query_ids.insert(c.query_id);
    if (correct) golden.insert(c.query_id);
    rows.push_back(make_record({{"query", to_json(*it->second)},
                                {"response", path},
                                {"critique", critique},
                                {"response_correct", correct},
                                {"hint", to_string(c.hint)},
                                {"strategy", to_string(c.strategy)},
                                {"annotator_backend_id", c.annotator_backend_id}}));
  }
  stats.queries = query_ids.size();
  stats.golden_paths = golden.size();
  stats.critiques = rows.size();
  write_jsonl_atomic(file, rows);
  fs::path stats_file = file;
  stats_file += ".stats.json";
  write_file_atomic(stats_file, make_record(to_json(stats)).dump(2) + "\n");
  return stats;
}

}  // namespace critloop
