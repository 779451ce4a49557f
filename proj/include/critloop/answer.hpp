#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace critloop {

/// Canonical value kinds an answer string can normalize to.
struct IntegerValue {
  std::int64_t value = 0;
  friend bool operator==(const IntegerValue&, const IntegerValue&) = default;
};

/// Exact rational, always reduced with den > 1 (den == 1 folds to IntegerValue).
struct RationalValue {
  std::int64_t num = 0;
  std::int64_t den = 1;
  friend bool operator==(const RationalValue&, const RationalValue&) = default;
};

/// Decimal literal with explicit precision: value = mantissa / 10^scale.
struct DecimalValue {
  std::int64_t mantissa = 0;
  int scale = 0;
  friend bool operator==(const DecimalValue&, const DecimalValue&) = default;
};

/// Anything that is not a plain number; compared as a normalized string.
struct SymbolicValue {
  std::string text;
  friend bool operator==(const SymbolicValue&, const SymbolicValue&) = default;
};

using CanonicalValue = std::variant<IntegerValue, RationalValue, DecimalValue, SymbolicValue>;

class Answer {
 public:
  /// Normalizes and classifies `raw`. Never throws.
  static Answer parse(std::string_view raw);

  const std::string& raw() const noexcept { return raw_; }
  const CanonicalValue& canonical() const noexcept { return canonical_; }

  /// Re-parseable rendering of the canonical value.
  std::string canonical_string() const;

  bool is_numeric() const noexcept { return !std::holds_alternative<SymbolicValue>(canonical_); }
  /// True when normalization left nothing (e.g. "$ ." or "").
  bool empty() const noexcept;

 private:
  std::string raw_;
  CanonicalValue canonical_;
};

/// Relative tolerance used when an inexact decimal is compared with anything.
inline constexpr double kDecimalRelativeTolerance = 1e-6;

/// Light normalization; a fixpoint, so normalize(normalize(s)) == normalize(s).
std::string normalize_answer_text(std::string_view text);

/// canon(a): parse of a's canonical rendering.
Answer canonicalize(const Answer& a);

/// Value equivalence of two answers. Integers and rationals compare exactly;
/// a decimal matches a value v iff |dec - v| <= 1e-6 * max(1, |v|) (when both
/// sides are decimals the larger magnitude is used); symbolic answers compare
/// by normalized string.
bool equivalent(const Answer& a, const Answer& b);

/// Finds the final answer span in free-form reasoning text, in priority order:
/// text after the last "####" marker, the last boxed{...} span, the last
/// standalone numeric literal.
std::optional<std::string> extract_answer_text(std::string_view response);
std::optional<Answer> extract_answer(std::string_view response);

}  // namespace critloop
