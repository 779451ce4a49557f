#include "critloop/simulated_backend.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <stdexcept>

#include "critloop/critique_format.hpp"
#include "critloop/oracle.hpp"
#include "critloop/prompts.hpp"

namespace critloop {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0,1]");
}

std::string hex_tag(std::uint64_t tag) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(tag & 0xffffffffu));
  return buf;
}

std::uint64_t request_seed(const GenerationRequest& req, int sample, std::string_view content) {
  return mix_seed({req.seed, static_cast<std::uint64_t>(sample), hash_string(to_string(req.task)),
                   hash_string(req.query_id), hash_string(content), std::bit_cast<std::uint64_t>(req.temperature)});
}

const Query& lookup(const SimWorld& world, const GenerationRequest& req) {
  if (!req.query_id.empty())
    if (const Query* q = world.find(req.query_id)) return *q;
  if (auto text = last_section(req.messages, section::problem))
    if (const Query* q = world.find_by_text(*text)) return *q;
  throw BackendError("simulated backend: request names no known query (id '" + req.query_id + "')");
}

std::string require_section(const GenerationRequest& req, std::string_view header) {
  auto s = last_section(req.messages, header);
  if (!s) throw BackendError("simulated backend: " + to_string(req.task) + " request has no " +
                             std::string(header) + " section");
  return *s;
}

std::string answer_of(std::string_view text) {
  auto a = extract_answer_text(text);
  return a ? *a : std::string{};
}

// Critique the critic attached to a response, if it parses.
std::optional<Critique> attached_critique(const GenerationRequest& req, std::size_t steps) {
  auto c = last_section(req.messages, section::critique);
  if (!c) return std::nullopt;
  try {
    return parse_critique_reply(*c, steps);
  } catch (const CritiqueParseError&) {
    return std::nullopt;
  }
}

std::string continuation(int from_step, const std::string& note, const std::string& answer, std::uint64_t tag) {
  return "Step " + std::to_string(from_step + 1) + ": " + note + ", which gives " + answer + ". (v" + hex_tag(tag) +
         ")\n#### " + answer;
}

}  // namespace

void StochasticActorSpec::validate() const {
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    check_prob(accuracy[i], "actor accuracy");
    if (i > 0 && accuracy[i] > accuracy[i - 1] + 1e-12)
      throw ConfigError("actor accuracy must be non-increasing in difficulty level");
  }
  check_prob(dominant_mass, "dominant_mass");
  if (distractor_pool < 1) throw ConfigError("distractor_pool must be >= 1");
}

void StochasticCriticSpec::validate() const {
  check_prob(d_flaw, "d_flaw");
  check_prob(d_correct, "d_correct");
  check_prob(h, "h");
  check_prob(p_keep, "p_keep");
}

SimWorld::SimWorld(const std::vector<Query>& queries) {
  for (const auto& q : queries) add(q);
}

void SimWorld::add(const Query& q) {
  by_id_[q.id] = q;
  id_by_text_[q.text] = q.id;
}

const Query* SimWorld::find(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &it->second;
}

const Query* SimWorld::find_by_text(const std::string& text) const {
  auto it = id_by_text_.find(text);
  return it == id_by_text_.end() ? nullptr : find(it->second);
}

int sim_level(const Query& q) { return q.difficulty.value_or(1); }

std::vector<std::string> distractors(const Query& q, int m) {
  Answer gold = Answer::parse(q.gold_answer);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(m));
  if (const auto* iv = std::get_if<IntegerValue>(&gold.canonical())) {
    std::int64_t step = 1 + static_cast<std::int64_t>(splitmix64(hash_string(q.id)) % 9);
    for (int j = 0; j < m; ++j) out.push_back(std::to_string(iv->value + (j + 1) * step));
  } else {
    for (int j = 0; j < m; ++j) out.push_back(gold.canonical_string() + "+" + std::to_string(j + 1));
  }
  return out;
}

std::string sample_answer(const Query& q, const StochasticActorSpec& spec, double p_correct, Rng& rng) {
  if (rng.bernoulli(p_correct)) return q.gold_answer;
  auto pool = distractors(q, spec.distractor_pool);
  if (pool.size() == 1 || rng.bernoulli(spec.dominant_mass)) return pool[0];
  return pool[1 + rng.below(pool.size() - 1)];
}

std::string sim_path_text(const std::string& answer, std::uint64_t tag) {
  return "Step 1: Read off the quantities given in the problem. (v" + hex_tag(tag) +
         ")\nStep 2: Set up the computation they call for.\nStep 3: Carry it out to get " + answer + ".\n#### " +
         answer;
}

Critique simulate_critique(const StochasticCriticSpec& spec, bool path_is_correct, std::size_t steps,
                           std::uint64_t seed) {
  Rng rng(seed);
  bool flag = path_is_correct ? !rng.bernoulli(spec.d_correct) : rng.bernoulli(spec.d_flaw);
  if (!flag || steps == 0) return Critique::all_correct(steps, "Each step follows from the previous one.");
  int k = static_cast<int>(rng.below(steps));
  std::string note = "Step " + std::to_string(k) + " does not follow from the steps before it.";
  return Critique::flawed_at(steps, k, note + " Recompute it before going on.", note);
}

ReasoningPath simulate_refinement(const StochasticCriticSpec& critic, const StochasticActorSpec& actor,
                                  const Query& q, const RefineState& state, std::uint64_t seed) {
  if (!state.was_flagged) throw std::logic_error("simulate_refinement: unflagged paths are never refined");
  Rng rng(seed);
  std::string answer;
  if (state.was_correct) {
    answer = rng.bernoulli(critic.p_keep) ? q.gold_answer : sample_answer(q, actor, 0.0, rng);
  } else if (rng.bernoulli(critic.h)) {
    answer = q.gold_answer;
  } else {
    answer = state.previous_answer.empty() ? sample_answer(q, actor, 0.0, rng) : state.previous_answer;
  }
  return ReasoningPath::from_text(sim_path_text(answer, rng.next()), Provenance::refinement);
}

SimulatedActor::SimulatedActor(std::shared_ptr<const SimWorld> world, StochasticActorSpec actor,
                               StochasticCriticSpec refine, SimActorOptions options)
    : world_(std::move(world)), actor_(actor), refine_(refine), options_(options) {
  actor_.validate();
  refine_.validate();
}

std::vector<std::string> SimulatedActor::generate(const GenerationRequest& req) {
  const Query& q = lookup(*world_, req);
  std::vector<std::string> out;
  for (int i = 0; i < req.n; ++i) out.push_back(one(req, q, i));
  return out;
}

std::string SimulatedActor::one(const GenerationRequest& req, const Query& q, int sample) const {
  double a = actor_.accuracy[static_cast<std::size_t>(std::clamp(sim_level(q), 1, 5) - 1)];
  switch (req.task) {
    case Task::reason: {
      Rng rng(request_seed(req, sample, q.text));
      std::string ans = sample_answer(q, actor_, a, rng);
      return sim_path_text(ans, rng.next());
    }
    case Task::refine: {
      std::string response = require_section(req, section::response);
      auto critique = attached_critique(req, segment_steps(response).size());
      if (!critique || !critique->flawed()) return response;
      RefineState st{reward(q, response) == 1, true, answer_of(response)};
      auto path = simulate_refinement(refine_, actor_, q, st, request_seed(req, sample, response));
      return path.text();
    }
    case Task::continue_from: {
      std::string prefix = require_section(req, section::prefix);
      Rng rng(request_seed(req, sample, prefix));
      std::string ans = sample_answer(q, actor_, options_.continue_correct.value_or(a), rng);
      return continuation(static_cast<int>(segment_steps(prefix).size()), "Redo the remaining computation", ans,
                          rng.next());
    }
    case Task::inject: {
      std::string reference = require_section(req, section::reference);
      const std::string& system = req.messages.front().text;
      Rng rng(request_seed(req, sample, reference + system));
      std::string ans = sample_answer(q, actor_, options_.inject_correct.value_or(a), rng);
      // The start step is only present in the rendered instruction; recover it.
      int step = 0;
      auto pos = system.find("starting at step ");
      if (pos != std::string::npos) step = std::atoi(system.c_str() + pos + 17);
      return continuation(step, "Apply the altered operation", ans, rng.next()) +
             "\n<mistake>\ntype: injected\ndetail: step " + std::to_string(step) +
             " was altered so the computation no longer matches the problem.\n</mistake>";
    }
    case Task::refine_from_step: {
      std::string response = require_section(req, section::response);
      auto steps = segment_steps(response);
      auto critique = attached_critique(req, steps.size());
      if (!critique || !critique->flawed())
        throw BackendError("simulated actor: refine-from-step needs a flawed critique");
      int k = *critique->first_error_index();
      RefineState st{reward(q, response) == 1, true, answer_of(response)};
      auto path = simulate_refinement(refine_, actor_, q, st, request_seed(req, sample, response));
      std::string ans = path.final_answer() ? path.final_answer()->raw() : q.gold_answer;
      return continuation(k, "Redo this step carefully", ans, splitmix64(request_seed(req, sample, response)));
    }
    case Task::smooth: {
      std::string chain = require_section(req, section::chain);
      std::string out;
      auto lines = segment_steps(chain);
      for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        if (line.rfind("Reflection: ", 0) == 0)
          line = "Wait, " + line.substr(12);
        else if (i > 0 && line.rfind("####", 0) != 0)
          line = "Then, " + line;
        if (i) out += '\n';
        out += line;
      }
      return out;
    }
    default:
      throw BackendError("simulated actor cannot serve task " + to_string(req.task));
  }
}

SimulatedCritic::SimulatedCritic(std::shared_ptr<const SimWorld> world, StochasticCriticSpec spec)
    : world_(std::move(world)), spec_(spec) {
  spec_.validate();
}

std::vector<std::string> SimulatedCritic::generate(const GenerationRequest& req) {
  const Query& q = lookup(*world_, req);
  std::string response = require_section(req, section::response);
  auto steps = segment_steps(response);
  bool correct = reward(q, response) == 1;
  std::vector<std::string> out;
  for (int i = 0; i < req.n; ++i) {
    switch (req.task) {
      case Task::critique:
      case Task::critique_partial: {
        Critique c = simulate_critique(spec_, correct, steps.size(), request_seed(req, i, response));
        out.push_back("Checking the response one step at a time.\n" + format_critique(c));
        break;
      }
      case Task::step_verdict: {
        // All step calls of one walk share (seed, response), so they see one critique.
        GenerationRequest whole = req;
        whole.task = Task::critique;
        Critique c = simulate_critique(spec_, correct, steps.size(), request_seed(whole, i, response));
        const std::string& system = req.messages.front().text;
        auto pos = system.find("Step to check: ");
        if (pos == std::string::npos) throw BackendError("simulated critic: step-verdict request names no step");
        std::size_t step = static_cast<std::size_t>(std::atoi(system.c_str() + pos + 15));
        StepJudgement j;
        if (c.flawed() && step == static_cast<std::size_t>(*c.first_error_index())) {
          j.verdict = StepVerdict::incorrect;
          j.feedback = c.feedback();
        }
        out.push_back(format_step_judgement(j));
        break;
      }
      default:
        throw BackendError("simulated critic cannot serve task " + to_string(req.task));
    }
  }
  return out;
}

}  // namespace critloop
