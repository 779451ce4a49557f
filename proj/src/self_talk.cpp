#include "critloop/self_talk.hpp"

#include <stdexcept>

#include "critloop/critique_format.hpp"
#include "critloop/oracle.hpp"
#include "critloop/parallel.hpp"
#include "critloop/rng.hpp"
#include "critloop/store.hpp"

namespace critloop {

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::vector<ChainSegment> interleave(const std::vector<std::string>& steps, const Critique& c, bool affirmations,
                                     std::size_t last_step) {
  std::vector<ChainSegment> out;
  for (std::size_t i = 0; i < steps.size() && i <= last_step; ++i) {
    out.push_back({SegmentRole::reasoning_step, steps[i]});
    std::string fb = c.feedback_for_step(i);
    if (!fb.empty())
      out.push_back({SegmentRole::reflection, one_line(fb)});
    else if (affirmations && c.step_verdicts()[i] == StepVerdict::correct)
      out.push_back({SegmentRole::reflection, "This step checks out."});
  }
  return out;
}

GenerationRequest request(const SelfTalkContext& ctx, const Query& q, const std::string& backend, Task task,
                          std::vector<Message> messages, double temperature, std::uint64_t seed,
                          const std::string& tag) {
  GenerationRequest req;
  req.messages = std::move(messages);
  req.temperature = temperature;
  req.max_tokens = ctx.max_tokens;
  req.n = 1;
  req.seed = seed;
  req.backend_id = backend;
  req.task = task;
  req.query_id = q.id;
  req.request_id = q.id + "/self-talk/" + tag;
  return req;
}

std::uint64_t seed_for(const SelfTalkContext& ctx, const Query& q, std::string_view what, std::uint64_t i) {
  return mix_seed({ctx.seed, hash_string(q.id), hash_string(what), i});
}

}  // namespace

std::string to_string(SegmentRole r) {
  switch (r) {
    case SegmentRole::reasoning_step: return "reasoning-step";
    case SegmentRole::reflection: return "reflection";
    case SegmentRole::transition: return "transition";
  }
  return "?";
}

std::string to_string(SelfTalkOutcome o) {
  switch (o) {
    case SelfTalkOutcome::stored: return "stored";
    case SelfTalkOutcome::rejected: return "rejected";
    case SelfTalkOutcome::dropped: return "dropped";
    case SelfTalkOutcome::failed: return "failed";
  }
  return "?";
}

std::string ThinkingChain::text() const {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) out += '\n';
    if (segments[i].kind == SegmentRole::reflection) out += "Reflection: ";
    out += segments[i].text;
  }
  return out;
}

ThinkingChain interleave_feedback(const ReasoningPath& path, const Critique& critique, bool affirmations) {
  if (critique.step_verdicts().size() != path.size())
    throw std::invalid_argument("interleave_feedback: " + std::to_string(critique.step_verdicts().size()) +
                                " verdicts for " + std::to_string(path.size()) + " steps");
  if (path.size() == 0) throw std::invalid_argument("interleave_feedback: empty path");
  ThinkingChain chain;
  chain.path = path.step_texts();
  chain.critique = critique;
  chain.segments = interleave(chain.path, critique, affirmations, SIZE_MAX);
  chain.clean = !critique.flawed();
  return chain;
}

ThinkingChain iterate_until_clean(const SelfTalkContext& ctx, const Query& q, ThinkingChain chain) {
  if (!chain.critique.flawed()) {
    chain.clean = true;
    chain.iterations_used = 0;
    return chain;
  }
  // frozen: everything before the suffix under review; suffix starts at `offset` of chain.path
  std::vector<ChainSegment> frozen;
  std::vector<std::string> suffix = chain.path;
  std::size_t offset = 0;
  Critique crit = chain.critique;
  int passes = 1;
  for (;;) {
    std::size_t rel = static_cast<std::size_t>(*crit.first_error_index());
    auto kept = interleave(suffix, crit, ctx.affirmations, rel);
    frozen.insert(frozen.end(), kept.begin(), kept.end());
    if (passes >= ctx.max_iters) {
      chain.segments = frozen;
      chain.clean = false;
      chain.iterations_used = passes;
      return chain;
    }
    std::size_t k = offset + rel;
    Critique whole = Critique::flawed_at(chain.path.size(), static_cast<int>(k), crit.feedback(), crit.feedback_for_step(rel));
    std::string reply =
        ctx.gateway
            .generate(request(ctx, q, ctx.actor_id, Task::refine_from_step,
                              refine_from_step_messages(ctx.prompts, q, chain.path, whole, static_cast<int>(k)),
                              ctx.temperature, seed_for(ctx, q, "refine", static_cast<std::uint64_t>(passes)),
                              "refine-" + std::to_string(passes)))
            .front();
    std::vector<std::string> fresh = segment_steps(reply);
    if (fresh.empty()) throw MalformedResponse("self-talk: empty refinement for " + q.id);
    std::vector<std::string> verified(chain.path.begin(), chain.path.begin() + static_cast<std::ptrdiff_t>(k));
    std::string reply_c =
        ctx.gateway
            .generate(request(ctx, q, ctx.critic_id, Task::critique_partial,
                              partial_critique_messages(ctx.prompts, q, verified, fresh), 0.0,
                              seed_for(ctx, q, "recritique", static_cast<std::uint64_t>(passes)),
                              "recritique-" + std::to_string(passes)))
            .front();
    try {
      crit = parse_critique_reply(reply_c, fresh.size());
    } catch (const CritiqueParseError& e) {
      throw MalformedResponse(std::string("self-talk: ") + e.what());
    }
    passes++;
    chain.path = verified;
    chain.path.insert(chain.path.end(), fresh.begin(), fresh.end());
    suffix = std::move(fresh);
    offset = k;
    if (!crit.flawed()) {
      auto tail = interleave(suffix, crit, ctx.affirmations, SIZE_MAX);
      frozen.insert(frozen.end(), tail.begin(), tail.end());
      chain.segments = std::move(frozen);
      chain.critique = Critique::all_correct(chain.path.size());
      chain.clean = true;
      chain.iterations_used = passes;
      return chain;
    }
  }
}

ThinkingChain smooth(const SelfTalkContext& ctx, const Query& q, const ThinkingChain& chain) {
  if (!chain.clean) throw std::invalid_argument("smooth: chain is not clean");
  const std::string rigid = chain.text();
  const auto before = extract_answer(rigid);
  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    std::string reply;
    try {
      reply = ctx.gateway
                  .generate(request(ctx, q, ctx.smoother_id, Task::smooth, smooth_messages(ctx.prompts, q, rigid),
                                    ctx.temperature, seed_for(ctx, q, "smooth", attempt),
                                    "smooth-" + std::to_string(attempt)))
                  .front();
    } catch (const BackendError&) {
      continue;
    }
    auto after = extract_answer(reply);
    if (!before || !after || !equivalent(*before, *after)) continue;
    ThinkingChain out = chain;
    out.segments.clear();
    for (auto& line : segment_steps(reply)) out.segments.push_back({SegmentRole::reasoning_step, line});
    out.smoothed = true;
    return out;
  }
  ThinkingChain out = chain;
  out.rigid_flag = true;
  return out;
}

bool verify_and_store(const ThinkingChain& chain, const Query& q) { return reward(q, chain.text()) == 1; }

std::vector<SelfTalkResult> build_self_talk(const SelfTalkContext& ctx, const std::vector<Query>& queries) {
  if (ctx.max_iters < 1) throw ConfigError("self-talk: max_iters must be >= 1");
  std::vector<SelfTalkResult> results(queries.size());
  parallel_for(queries.size(), ctx.threads, [&](std::size_t i) {
    const Query& q = queries[i];
    SelfTalkResult& r = results[i];
    r.query = q;
    try {
      std::uint64_t s = seed_for(ctx, q, "reason", 0);
      auto text = ctx.gateway
                      .generate(request(ctx, q, ctx.actor_id, Task::reason, reason_messages(ctx.prompts, q),
                                        ctx.temperature, s, "reason"))
                      .front();
      auto path = ReasoningPath::from_text(text, Provenance::sampled, {ctx.temperature, s, ctx.actor_id});
      if (path.size() == 0) throw MalformedResponse("self-talk: empty response for " + q.id);
      InteractionHistory h{q, path, {}};
      auto reply = ctx.gateway
                       .generate(request(ctx, q, ctx.critic_id, Task::critique,
                                         critique_messages(ctx.prompts, context_view(h, ContextRole::critique,
                                                                                     ContextMode::truncated)),
                                         0.0, seed_for(ctx, q, "critique", 0), "critique"))
                       .front();
      Critique c;
      try {
        c = parse_critique_reply(reply, path.size());
      } catch (const CritiqueParseError& e) {
        throw MalformedResponse(std::string("self-talk: ") + e.what());
      }
      ThinkingChain chain = iterate_until_clean(ctx, q, interleave_feedback(path, c, ctx.affirmations));
      if (!chain.clean) {
        r.outcome = SelfTalkOutcome::dropped;
        r.chain = std::move(chain);
        return;
      }
      chain = smooth(ctx, q, chain);
      r.outcome = verify_and_store(chain, q) ? SelfTalkOutcome::stored : SelfTalkOutcome::rejected;
      r.chain = std::move(chain);
    } catch (const BackendError& e) {
      r.outcome = SelfTalkOutcome::failed;
      r.error = e.what();
    }
  });
  return results;
}

json to_json(const Query& q, const ThinkingChain& chain) {
  return make_record({{"query_id", q.id},
                      {"self_talk_text", chain.text()},
                      {"iterations_used", chain.iterations_used},
                      {"rigid_flag", chain.rigid_flag}});
}

SelfTalkStats write_self_talk(const std::vector<SelfTalkResult>& results, const std::filesystem::path& file) {
  SelfTalkStats st;
  std::vector<json> rows;
  for (const auto& r : results) {
    switch (r.outcome) {
      case SelfTalkOutcome::stored:
        // re-check at write time; the record must earn reward 1
        if (!r.chain || !verify_and_store(*r.chain, r.query)) {
          st.rejected++;
          break;
        }
        rows.push_back(to_json(r.query, *r.chain));
        st.stored++;
        break;
      case SelfTalkOutcome::rejected: st.rejected++; break;
      case SelfTalkOutcome::dropped: st.dropped++; break;
      case SelfTalkOutcome::failed: st.failed++; break;
    }
  }
  write_jsonl_atomic(file, rows);
  return st;
}

}  // namespace critloop
