#include "critloop/critique_format.hpp"

#include <cctype>
#include <charconv>

namespace critloop {

namespace {

constexpr std::string_view kOpen = "<critique>";
constexpr std::string_view kClose = "</critique>";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Body of the last <critique> block, or nullopt.
std::optional<std::string_view> last_block(std::string_view text) {
  std::size_t open = text.rfind(kOpen);
  if (open == std::string_view::npos) return std::nullopt;
  std::size_t body = open + kOpen.size();
  std::size_t close = text.find(kClose, body);
  if (close == std::string_view::npos) return std::nullopt;
  return text.substr(body, close - body);
}

std::optional<long> parse_int(std::string_view s) {
  s = trim(s);
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

StepVerdict verdict_token(std::string_view tok) {
  std::string t = lower(trim(tok));
  if (t == "correct") return StepVerdict::correct;
  if (t == "incorrect") return StepVerdict::incorrect;
  if (t == "not-evaluated" || t == "not_evaluated") return StepVerdict::not_evaluated;
  throw CritiqueParseError("unknown step verdict '" + std::string(trim(tok)) + "'");
}

struct Fields {
  std::optional<std::vector<StepVerdict>> verdicts;
  bool first_error_seen = false;
  std::optional<int> first_error;
  std::vector<std::pair<long, std::string>> notes;
  std::optional<std::string> verdict;
  std::string feedback;
};

// Splits the block into keyed lines. `feedback:` swallows everything after it.
Fields read_fields(std::string_view body) {
  Fields f;
  std::size_t pos = 0;
  while (pos < body.size()) {
    std::size_t eol = body.find('\n', pos);
    if (eol == std::string_view::npos) eol = body.size();
    std::string_view line = trim(body.substr(pos, eol - pos));
    std::size_t next = eol + 1;
    if (line.empty()) {
      pos = next;
      continue;
    }
    std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) throw CritiqueParseError("critique line without a key: " + std::string(line));
    std::string key = lower(trim(line.substr(0, colon)));
    std::string_view value = trim(line.substr(colon + 1));
    if (key == "feedback") {
      std::string_view rest = next < body.size() ? body.substr(next) : std::string_view{};
      std::string fb(value);
      rest = trim(rest);
      if (!rest.empty()) {
        if (!fb.empty()) fb += '\n';
        fb += rest;
      }
      f.feedback = std::move(fb);
      break;
    }
    if (key == "verdicts") {
      std::vector<StepVerdict> vs;
      std::size_t p = 0;
      while (p <= value.size()) {
        std::size_t comma = value.find(',', p);
        if (comma == std::string_view::npos) comma = value.size();
        std::string_view tok = trim(value.substr(p, comma - p));
        if (!tok.empty()) vs.push_back(verdict_token(tok));
        p = comma + 1;
      }
      f.verdicts = std::move(vs);
    } else if (key == "first_error") {
      f.first_error_seen = true;
      if (lower(value) == "none") {
        f.first_error.reset();
      } else {
        auto k = parse_int(value);
        if (!k || *k < 0) throw CritiqueParseError("bad first_error '" + std::string(value) + "'");
        f.first_error = static_cast<int>(*k);
      }
    } else if (key == "verdict") {
      f.verdict = std::string(value);
    } else if (key.rfind("step ", 0) == 0) {
      auto k = parse_int(std::string_view(key).substr(5));
      if (!k || *k < 0) throw CritiqueParseError("bad step note key '" + key + "'");
      f.notes.emplace_back(*k, std::string(value));
    } else {
      throw CritiqueParseError("unknown critique key '" + key + "'");
    }
    pos = next;
  }
  return f;
}

}  // namespace

std::string format_critique(const Critique& c) {
  std::string out(kOpen);
  out += "\nverdicts: ";
  const auto& vs = c.step_verdicts();
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ", ";
    out += to_string(vs[i]);
  }
  out += "\nfirst_error: ";
  out += c.first_error_index() ? std::to_string(*c.first_error_index()) : "none";
  const auto& notes = c.step_feedback();
  for (std::size_t i = 0; i < notes.size(); ++i)
    if (!notes[i].empty()) out += "\nstep " + std::to_string(i) + ": " + notes[i];
  out += "\nfeedback: ";
  out += c.feedback();
  out += '\n';
  out += kClose;
  return out;
}

Critique parse_critique_reply(std::string_view reply, std::size_t steps) {
  auto body = last_block(reply);
  if (!body) throw CritiqueParseError("no <critique> block in reply");
  Fields f = read_fields(*body);
  if (!f.verdicts && !f.first_error_seen) throw CritiqueParseError("critique has neither verdicts nor first_error");
  if (f.first_error && static_cast<std::size_t>(*f.first_error) >= steps)
    throw CritiqueParseError("first_error " + std::to_string(*f.first_error) + " beyond a path of " +
                             std::to_string(steps) + " steps");

  std::vector<StepVerdict> verdicts;
  std::optional<int> first_error = f.first_error;
  if (f.verdicts) {
    verdicts = *f.verdicts;
    if (verdicts.size() != steps)
      throw CritiqueParseError("critique lists " + std::to_string(verdicts.size()) + " verdicts for " +
                               std::to_string(steps) + " steps");
    if (!f.first_error_seen) {
      for (std::size_t i = 0; i < verdicts.size(); ++i)
        if (verdicts[i] == StepVerdict::incorrect) {
          first_error = static_cast<int>(i);
          break;
        }
    }
  } else if (first_error) {
    verdicts.assign(steps, StepVerdict::not_evaluated);
    for (int i = 0; i < *first_error; ++i) verdicts[static_cast<std::size_t>(i)] = StepVerdict::correct;
    verdicts[static_cast<std::size_t>(*first_error)] = StepVerdict::incorrect;
  } else {
    verdicts.assign(steps, StepVerdict::correct);
  }

  std::vector<std::string> notes;
  for (auto& [k, text] : f.notes) {
    if (static_cast<std::size_t>(k) >= steps)
      throw CritiqueParseError("step note index " + std::to_string(k) + " beyond the path");
    if (notes.empty()) notes.assign(steps, {});
    notes[static_cast<std::size_t>(k)] = std::move(text);
  }
  try {
    return Critique::make(std::move(verdicts), first_error, std::move(f.feedback), std::move(notes));
  } catch (const InvariantError& e) {
    throw CritiqueParseError(std::string("inconsistent critique: ") + e.what());
  }
}

std::string format_step_judgement(const StepJudgement& j) {
  std::string out(kOpen);
  out += "\nverdict: ";
  out += to_string(j.verdict);
  out += "\nfeedback: ";
  out += j.feedback;
  out += '\n';
  out += kClose;
  return out;
}

StepJudgement parse_step_reply(std::string_view reply) {
  auto body = last_block(reply);
  if (!body) throw CritiqueParseError("no <critique> block in step reply");
  Fields f = read_fields(*body);
  if (!f.verdict) throw CritiqueParseError("step reply without a verdict");
  StepJudgement j;
  j.verdict = verdict_token(*f.verdict);
  if (j.verdict == StepVerdict::not_evaluated) throw CritiqueParseError("step reply must be correct or incorrect");
  j.feedback = std::move(f.feedback);
  return j;
}

bool contains_critique_block(std::string_view text) { return last_block(text).has_value(); }

}  // namespace critloop
