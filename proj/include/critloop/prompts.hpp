#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "critloop/core.hpp"
#include "critloop/gateway.hpp"

namespace critloop {

// Section headers. Every non-system message is "<Header>:\n<body>".
namespace section {
inline constexpr std::string_view problem = "Problem";
inline constexpr std::string_view response = "Response";
inline constexpr std::string_view critique = "Critique";
inline constexpr std::string_view reference = "Reference";
inline constexpr std::string_view hint = "Hint";
inline constexpr std::string_view prefix = "Prefix";
inline constexpr std::string_view verified = "Verified steps";
inline constexpr std::string_view chain = "Chain";
}  // namespace section

struct Section {
  std::string header;
  std::string body;
};

Message section_message(std::string role, std::string_view header, std::string_view body);
/// Sections of all non-system messages, in order.
std::vector<Section> parse_sections(const std::vector<Message>& messages);
/// Body of the last section with this header.
std::optional<std::string> last_section(const std::vector<Message>& messages, std::string_view header);

/// Named prompt templates with {placeholder} substitution. Defaults are
/// compiled in; a directory of <name>.txt files overrides them.
class PromptLibrary {
 public:
  PromptLibrary();
  static PromptLibrary load(const std::filesystem::path& dir);

  const std::string& get(std::string_view name) const;
  void set(const std::string& name, std::string text);
  std::vector<std::string> names() const;
  /// Unknown placeholders are left as they are.
  std::string render(std::string_view name, const std::map<std::string, std::string>& vars = {}) const;
  /// sha256 over all templates, folded into config hashes.
  std::string fingerprint() const;

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

/// Drops the leading "# " comment lines of a template file.
std::string strip_template_comments(std::string_view text);

std::vector<Message> reason_messages(const PromptLibrary& lib, const Query& q);
/// Critic view of a context (responses as user turns, critiques as assistant turns).
std::vector<Message> critique_messages(const PromptLibrary& lib, const std::vector<ContextSegment>& context);
/// Actor view of a context (responses as assistant turns, critiques as user turns).
std::vector<Message> refine_messages(const PromptLibrary& lib, const std::vector<ContextSegment>& context);
std::vector<Message> continue_messages(const PromptLibrary& lib, const Query& q,
                                       const std::vector<std::string>& prefix);
std::vector<Message> inject_messages(const PromptLibrary& lib, const Query& q, const ReasoningPath& reference,
                                     int step, const std::string& error_type,
                                     const std::vector<std::string>& taxonomy);
std::vector<Message> holistic_messages(const PromptLibrary& lib, const Query& q, const ReasoningPath& path,
                                       const std::string& hint_instruction, const std::vector<Section>& hint_sections);
std::vector<Message> step_check_messages(const PromptLibrary& lib, const Query& q, const ReasoningPath& path,
                                         int step, const std::string& hint_instruction,
                                         const std::vector<Section>& hint_sections);
std::vector<Message> partial_critique_messages(const PromptLibrary& lib, const Query& q,
                                               const std::vector<std::string>& verified,
                                               const std::vector<std::string>& suffix);
std::vector<Message> refine_from_step_messages(const PromptLibrary& lib, const Query& q,
                                               const std::vector<std::string>& steps, const Critique& critique,
                                               int step);
std::vector<Message> smooth_messages(const PromptLibrary& lib, const Query& q, const std::string& rigid_text);

std::string join_lines(const std::vector<std::string>& lines);

}  // namespace critloop
