#include "critloop/prompts.hpp"

#include <fstream>
#include <sstream>

#include "critloop/critique_format.hpp"
#include "critloop/hash.hpp"

namespace critloop {

namespace {

struct DefaultPrompt {
  const char* name;
  const char* text;
};

const DefaultPrompt kDefaults[] = {
#include "prompt_defaults.inc"
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string strip_template_comments(std::string_view text) {
  while (text.rfind("# ", 0) == 0) {
    std::size_t eol = text.find('\n');
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
  }
  std::string out(text);
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out;
}

PromptLibrary::PromptLibrary() {
  for (const auto& d : kDefaults) templates_[d.name] = strip_template_comments(d.text);
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
  PromptLibrary lib;
  if (!std::filesystem::is_directory(dir)) throw ConfigError("prompt directory " + dir.string() + " does not exist");
  for (const auto& name : lib.names()) {
    auto file = dir / (name + ".txt");
    if (std::filesystem::exists(file)) lib.set(name, strip_template_comments(read_file(file)));
  }
  return lib;
}

const std::string& PromptLibrary::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown prompt template '" + std::string(name) + "'");
  return it->second;
}

void PromptLibrary::set(const std::string& name, std::string text) { templates_[name] = std::move(text); }

std::vector<std::string> PromptLibrary::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : templates_) out.push_back(k);
  return out;
}

std::string PromptLibrary::render(std::string_view name, const std::map<std::string, std::string>& vars) const {
  const std::string& t = get(name);
  std::string out;
  out.reserve(t.size());
  std::size_t i = 0;
  while (i < t.size()) {
    if (t[i] == '{') {
      std::size_t close = t.find('}', i);
      if (close != std::string::npos) {
        auto it = vars.find(t.substr(i + 1, close - i - 1));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += t[i++];
  }
  return out;
}

std::string PromptLibrary::fingerprint() const {
  std::string all;
  for (const auto& [k, v] : templates_) {
    all += k;
    all += '\0';
    all += v;
    all += '\0';
  }
  return sha256_hex(all);
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

Message section_message(std::string role, std::string_view header, std::string_view body) {
  std::string text(header);
  text += ":\n";
  text += body;
  return Message{std::move(role), std::move(text)};
}

std::vector<Section> parse_sections(const std::vector<Message>& messages) {
  std::vector<Section> out;
  for (const auto& m : messages) {
    if (m.role == "system") continue;
    std::size_t nl = m.text.find('\n');
    std::string head = m.text.substr(0, nl);
    if (head.empty() || head.back() != ':') continue;
    head.pop_back();
    out.push_back({head, nl == std::string::npos ? std::string{} : m.text.substr(nl + 1)});
  }
  return out;
}

std::optional<std::string> last_section(const std::vector<Message>& messages, std::string_view header) {
  auto sections = parse_sections(messages);
  for (auto it = sections.rbegin(); it != sections.rend(); ++it)
    if (it->header == header) return it->body;
  return std::nullopt;
}

namespace {

std::vector<Message> context_messages(std::string system, const std::vector<ContextSegment>& context,
                                      bool critic_view) {
  std::vector<Message> out{{"system", std::move(system)}};
  for (const auto& seg : context) {
    switch (seg.kind) {
      case SegmentKind::query:
        out.push_back(section_message("user", section::problem, seg.text));
        break;
      case SegmentKind::response:
        out.push_back(section_message(critic_view ? "user" : "assistant", section::response, seg.text));
        break;
      case SegmentKind::critique:
        out.push_back(section_message(critic_view ? "assistant" : "user", section::critique, seg.text));
        break;
    }
  }
  return out;
}

}  // namespace

std::vector<Message> reason_messages(const PromptLibrary& lib, const Query& q) {
  return {{"system", lib.render("actor_reason")}, section_message("user", section::problem, q.text)};
}

std::vector<Message> critique_messages(const PromptLibrary& lib, const std::vector<ContextSegment>& context) {
  return context_messages(lib.render("critic_critique"), context, true);
}

std::vector<Message> refine_messages(const PromptLibrary& lib, const std::vector<ContextSegment>& context) {
  return context_messages(lib.render("actor_refine"), context, false);
}

std::vector<Message> continue_messages(const PromptLibrary& lib, const Query& q,
                                       const std::vector<std::string>& prefix) {
  return {{"system", lib.render("actor_continue", {{"start_step", std::to_string(prefix.size())}})},
          section_message("user", section::problem, q.text),
          section_message("assistant", section::prefix, join_lines(prefix))};
}

std::vector<Message> inject_messages(const PromptLibrary& lib, const Query& q, const ReasoningPath& reference,
                                     int step, const std::string& error_type,
                                     const std::vector<std::string>& taxonomy) {
  std::string tax;
  for (std::size_t i = 0; i < taxonomy.size(); ++i) tax += (i ? ", " : "") + taxonomy[i];
  return {{"system", lib.render("actor_inject", {{"step", std::to_string(step)},
                                                 {"error_type", error_type},
                                                 {"taxonomy", tax}})},
          section_message("user", section::problem, q.text),
          section_message("user", section::reference, reference.text())};
}

namespace {

std::vector<Message> annotator_messages(std::string system, const Query& q, const ReasoningPath& path,
                                        const std::vector<Section>& hint_sections) {
  std::vector<Message> out{{"system", std::move(system)}, section_message("user", section::problem, q.text)};
  for (const auto& s : hint_sections) out.push_back(section_message("user", s.header, s.body));
  out.push_back(section_message("user", section::response, path.text()));
  return out;
}

}  // namespace

std::vector<Message> holistic_messages(const PromptLibrary& lib, const Query& q, const ReasoningPath& path,
                                       const std::string& hint_instruction, const std::vector<Section>& hint_sections) {
  return annotator_messages(lib.render("annotator_holistic", {{"hint", hint_instruction}}), q, path, hint_sections);
}

std::vector<Message> step_check_messages(const PromptLibrary& lib, const Query& q, const ReasoningPath& path,
                                         int step, const std::string& hint_instruction,
                                         const std::vector<Section>& hint_sections) {
  return annotator_messages(
      lib.render("annotator_incremental", {{"hint", hint_instruction}, {"step", std::to_string(step)}}), q, path,
      hint_sections);
}

std::vector<Message> partial_critique_messages(const PromptLibrary& lib, const Query& q,
                                               const std::vector<std::string>& verified,
                                               const std::vector<std::string>& suffix) {
  return {{"system", lib.render("critic_partial")},
          section_message("user", section::problem, q.text),
          section_message("user", section::verified, join_lines(verified)),
          section_message("user", section::response, join_lines(suffix))};
}

std::vector<Message> refine_from_step_messages(const PromptLibrary& lib, const Query& q,
                                               const std::vector<std::string>& steps, const Critique& critique,
                                               int step) {
  return {{"system", lib.render("actor_refine_from_step", {{"step", std::to_string(step)}})},
          section_message("user", section::problem, q.text),
          section_message("assistant", section::response, join_lines(steps)),
          section_message("user", section::critique, format_critique(critique))};
}

std::vector<Message> smooth_messages(const PromptLibrary& lib, const Query& q, const std::string& rigid_text) {
  return {{"system", lib.render("smoother")},
          section_message("user", section::problem, q.text),
          section_message("user", section::chain, rigid_text)};
}

}  // namespace critloop
