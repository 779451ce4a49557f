#include "critloop/answer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <limits>
#include <numeric>

namespace critloop {
namespace {

using i128 = __int128;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  if (from.empty()) return;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

// Index of the '}' matching the '{' at `open`, or npos.
std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    else if (s[i] == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

// \text{X} -> X for the wrapper commands that only carry formatting.
void unwrap_text_commands(std::string& s) {
  static constexpr std::array<std::string_view, 5> kWrappers = {
      "\\text{", "\\textbf{", "\\mathrm{", "\\mbox{", "\\textrm{"};
  for (auto w : kWrappers) {
    std::size_t pos;
    while ((pos = s.find(w)) != std::string::npos) {
      std::size_t open = pos + w.size() - 1;
      std::size_t close = match_brace(s, open);
      if (close == std::string::npos) break;
      s = s.substr(0, pos) + s.substr(open + 1, close - open - 1) + s.substr(close + 1);
    }
  }
}

bool unwrap_boxed(std::string& s) {
  for (std::string_view prefix : {std::string_view("\\boxed{"), std::string_view("boxed{")}) {
    if (s.size() > prefix.size() && s.compare(0, prefix.size(), prefix) == 0) {
      std::size_t close = match_brace(s, prefix.size() - 1);
      if (close == s.size() - 1) {
        s = s.substr(prefix.size(), close - prefix.size());
        return true;
      }
    }
  }
  return false;
}

bool ends_with_ci(std::string_view s, std::string_view suffix) {
  if (s.size() < suffix.size()) return false;
  auto tail = s.substr(s.size() - suffix.size());
  return std::equal(tail.begin(), tail.end(), suffix.begin(), [](char a, char b) {
    return std::tolower(static_cast<unsigned char>(a)) == b;
  });
}

void strip_units(std::string& s) {
  static constexpr std::array<std::string_view, 4> kUnits = {"dollars", "dollar", "cents", "cent"};
  for (auto unit : kUnits) {
    if (!ends_with_ci(s, unit)) continue;
    std::string_view rest = trim(std::string_view(s).substr(0, s.size() - unit.size()));
    if (!rest.empty() && (is_digit(rest.back()) || rest.back() == '.')) {
      s = std::string(rest);
      return;
    }
  }
}

bool is_grouped_number(std::string_view s) {
  // [+-]?\d{1,3}(,\d{3})+(\.\d+)?
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  std::size_t start = i;
  while (i < s.size() && is_digit(s[i])) ++i;
  std::size_t lead = i - start;
  if (lead < 1 || lead > 3) return false;
  int groups = 0;
  while (i < s.size() && s[i] == ',') {
    for (std::size_t k = 1; k <= 3; ++k)
      if (i + k >= s.size() || !is_digit(s[i + k])) return false;
    i += 4;
    ++groups;
  }
  if (groups == 0) return false;
  if (i < s.size() && s[i] == '.') {
    ++i;
    std::size_t frac = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    if (i == frac) return false;
  }
  return i == s.size();
}

std::string normalize_once(std::string s) {
  replace_all(s, "\xE2\x88\x92", "-");  // U+2212 minus sign
  replace_all(s, "\\dfrac", "\\frac");
  replace_all(s, "\\tfrac", "\\frac");
  replace_all(s, "\\%", "%");
  replace_all(s, "\\$", "$");
  for (std::string_view spacing : {"\\left", "\\right", "\\!", "\\,", "\\;", "\\ "})
    replace_all(s, spacing, "");
  unwrap_text_commands(s);
  s = std::string(trim(s));
  unwrap_boxed(s);
  while (!s.empty() && s.front() == '$') s.erase(s.begin());
  while (!s.empty() && s.back() == '$') s.pop_back();
  s = std::string(trim(s));
  while (!s.empty() && s.back() == '.') s.pop_back();
  strip_units(s);
  s.erase(std::remove_if(s.begin(), s.end(), is_space), s.end());
  if (is_grouped_number(s)) s.erase(std::remove(s.begin(), s.end(), ','), s.end());
  return s;
}

// [+-]?\d+ into int64, with overflow detection.
bool parse_int64(std::string_view s, std::int64_t& out) {
  bool neg = false;
  if (!s.empty() && (s[0] == '+' || s[0] == '-')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  if (s.empty() || !std::all_of(s.begin(), s.end(), is_digit)) return false;
  std::uint64_t mag = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), mag);
  if (ec != std::errc() || ptr != s.data() + s.size()) return false;
  if (neg) {
    if (mag > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()) + 1) return false;
    out = mag == 0 ? 0 : static_cast<std::int64_t>(0 - mag);
  } else {
    if (mag > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) return false;
    out = static_cast<std::int64_t>(mag);
  }
  return true;
}

constexpr int kMaxScale = 18;

i128 pow10(int n) {
  i128 r = 1;
  for (int i = 0; i < n; ++i) r *= 10;
  return r;
}

bool parse_decimal(std::string_view s, DecimalValue& out) {
  bool neg = false;
  if (!s.empty() && (s[0] == '+' || s[0] == '-')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  auto dot = s.find('.');
  if (dot == std::string_view::npos) return false;
  auto ip = s.substr(0, dot);
  auto fp = s.substr(dot + 1);
  if (fp.empty() || static_cast<int>(fp.size()) > kMaxScale) return false;
  if (!std::all_of(ip.begin(), ip.end(), is_digit) || !std::all_of(fp.begin(), fp.end(), is_digit))
    return false;
  i128 mag = 0;
  for (char c : ip) {
    mag = mag * 10 + (c - '0');
    if (mag > std::numeric_limits<std::int64_t>::max()) return false;
  }
  for (char c : fp) {
    mag = mag * 10 + (c - '0');
    if (mag > std::numeric_limits<std::int64_t>::max()) return false;
  }
  out.mantissa = static_cast<std::int64_t>(neg ? -mag : mag);
  out.scale = static_cast<int>(fp.size());
  return true;
}

std::optional<CanonicalValue> make_rational(std::int64_t p, std::int64_t q) {
  if (q == 0) return std::nullopt;
  i128 num = p, den = q;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  i128 a = num < 0 ? -num : num, b = den;
  while (b != 0) {
    i128 t = a % b;
    a = b;
    b = t;
  }
  if (a > 1) {
    num /= a;
    den /= a;
  }
  if (num > std::numeric_limits<std::int64_t>::max() || num < std::numeric_limits<std::int64_t>::min() ||
      den > std::numeric_limits<std::int64_t>::max())
    return std::nullopt;
  if (den == 1) return IntegerValue{static_cast<std::int64_t>(num)};
  return RationalValue{static_cast<std::int64_t>(num), static_cast<std::int64_t>(den)};
}

std::optional<CanonicalValue> parse_fraction(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  std::int64_t p = 0, q = 0;
  std::string_view body = s;
  if (body.starts_with("\\")) body.remove_prefix(1);
  if (body.starts_with("frac")) {
    body.remove_prefix(4);
    if (body.starts_with("{")) {
      auto c1 = match_brace(body, 0);
      if (c1 == std::string_view::npos || c1 + 1 >= body.size() || body[c1 + 1] != '{') return std::nullopt;
      auto c2 = match_brace(body, c1 + 1);
      if (c2 != body.size() - 1) return std::nullopt;
      if (!parse_int64(body.substr(1, c1 - 1), p) || !parse_int64(body.substr(c1 + 2, c2 - c1 - 2), q))
        return std::nullopt;
    } else if (body.size() == 2 && is_digit(body[0]) && is_digit(body[1])) {
      p = body[0] - '0';
      q = body[1] - '0';
    } else {
      return std::nullopt;
    }
  } else {
    auto slash = s.find('/');
    if (slash == std::string_view::npos) return std::nullopt;
    if (!parse_int64(s.substr(0, slash), p) || !parse_int64(s.substr(slash + 1), q)) return std::nullopt;
  }
  if (neg) p = -p;
  return make_rational(p, q);
}

CanonicalValue classify(const std::string& norm) {
  std::int64_t iv = 0;
  if (parse_int64(norm, iv)) return IntegerValue{iv};
  DecimalValue dv;
  if (parse_decimal(norm, dv)) return dv;
  if (auto r = parse_fraction(norm)) return *r;
  return SymbolicValue{norm};
}

struct Exact {
  i128 num;
  i128 den;
};

std::optional<Exact> exact_of(const CanonicalValue& v) {
  if (auto* i = std::get_if<IntegerValue>(&v)) return Exact{i->value, 1};
  if (auto* r = std::get_if<RationalValue>(&v)) return Exact{r->num, r->den};
  return std::nullopt;
}

i128 abs128(i128 x) { return x < 0 ? -x : x; }

// lhs_scaled = 10^6 * |diff| compared against rhs; overflow means "larger".
bool within_tolerance(i128 diff, i128 rhs) {
  i128 scaled;
  if (__builtin_mul_overflow(abs128(diff), static_cast<i128>(1000000), &scaled)) return false;
  return scaled <= rhs;
}

bool decimal_vs_exact(const DecimalValue& d, const Exact& e) {
  // |m/10^s - p/q| <= 1e-6 * max(1, |p/q|)
  // <=> 10^6 * |m*q - p*10^s| <= max(q, |p|) * 10^s
  i128 scale = pow10(d.scale);
  i128 diff = static_cast<i128>(d.mantissa) * e.den - e.num * scale;
  i128 rhs = std::max(e.den, abs128(e.num)) * scale;
  return within_tolerance(diff, rhs);
}

bool decimal_vs_decimal(const DecimalValue& a, const DecimalValue& b) {
  int s = std::max(a.scale, b.scale);
  i128 av = static_cast<i128>(a.mantissa) * pow10(s - a.scale);
  i128 bv = static_cast<i128>(b.mantissa) * pow10(s - b.scale);
  i128 rhs = std::max({pow10(s), abs128(av), abs128(bv)});
  return within_tolerance(av - bv, rhs);
}

std::string decimal_string(const DecimalValue& d) {
  std::uint64_t mag = d.mantissa < 0 ? 0 - static_cast<std::uint64_t>(d.mantissa)
                                     : static_cast<std::uint64_t>(d.mantissa);
  std::uint64_t p = 1;
  for (int i = 0; i < d.scale; ++i) p *= 10;
  std::string frac = std::to_string(mag % p);
  frac.insert(0, static_cast<std::size_t>(d.scale) - frac.size(), '0');
  std::string out = (d.mantissa < 0 ? "-" : "") + std::to_string(mag / p);
  if (d.scale > 0) out += "." + frac;
  return out;
}

// Last numeric literal not glued to a word: 12, -3, 1,000, 2.5, .5, 3/4.
std::optional<std::string> last_standalone_number(std::string_view s) {
  std::optional<std::string> found;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t start = i;
    if (s[i] == '-' && i + 1 < s.size() && (is_digit(s[i + 1]) || s[i + 1] == '.')) ++i;
    bool starts_number = i < s.size() &&
                         (is_digit(s[i]) || (s[i] == '.' && i + 1 < s.size() && is_digit(s[i + 1])));
    char prev = start > 0 ? s[start - 1] : ' ';
    if (!starts_number || is_word(prev) || prev == '.') {
      i = start + 1;
      continue;
    }
    std::size_t j = i;
    while (j < s.size()) {
      if (is_digit(s[j])) {
        ++j;
      } else if (s[j] == ',' && j + 3 < s.size() && is_digit(s[j + 1]) && is_digit(s[j + 2]) &&
                 is_digit(s[j + 3]) && (j + 4 >= s.size() || !is_digit(s[j + 4]))) {
        j += 4;
      } else {
        break;
      }
    }
    if (j + 1 < s.size() && s[j] == '.' && is_digit(s[j + 1])) {
      ++j;
      while (j < s.size() && is_digit(s[j])) ++j;
    } else if (j + 1 < s.size() && s[j] == '/' && is_digit(s[j + 1])) {
      ++j;
      while (j < s.size() && is_digit(s[j])) ++j;
    }
    if (j < s.size() && is_word(s[j])) {
      i = j;
      while (i < s.size() && is_word(s[i])) ++i;
      continue;
    }
    found = std::string(s.substr(start, j - start));
    i = j;
  }
  return found;
}

}  // namespace

std::string normalize_answer_text(std::string_view text) {
  std::string cur(text);
  for (int iter = 0; iter < 32; ++iter) {
    std::string next = normalize_once(cur);
    if (next == cur) break;
    cur = std::move(next);
  }
  return cur;
}

Answer Answer::parse(std::string_view raw) {
  Answer a;
  a.raw_ = std::string(raw);
  a.canonical_ = classify(normalize_answer_text(raw));
  return a;
}

bool Answer::empty() const noexcept {
  auto* s = std::get_if<SymbolicValue>(&canonical_);
  return s != nullptr && s->text.empty();
}

std::string Answer::canonical_string() const {
  struct Visitor {
    std::string operator()(const IntegerValue& v) const { return std::to_string(v.value); }
    std::string operator()(const RationalValue& v) const {
      return std::to_string(v.num) + "/" + std::to_string(v.den);
    }
    std::string operator()(const DecimalValue& v) const { return decimal_string(v); }
    std::string operator()(const SymbolicValue& v) const { return v.text; }
  };
  return std::visit(Visitor{}, canonical_);
}

Answer canonicalize(const Answer& a) { return Answer::parse(a.canonical_string()); }

bool equivalent(const Answer& a, const Answer& b) {
  const auto& va = a.canonical();
  const auto& vb = b.canonical();
  auto* sa = std::get_if<SymbolicValue>(&va);
  auto* sb = std::get_if<SymbolicValue>(&vb);
  if (sa || sb) return sa && sb && sa->text == sb->text;

  auto ea = exact_of(va);
  auto eb = exact_of(vb);
  if (ea && eb) return static_cast<i128>(ea->num) * eb->den == static_cast<i128>(eb->num) * ea->den;
  auto* da = std::get_if<DecimalValue>(&va);
  auto* db = std::get_if<DecimalValue>(&vb);
  if (da && db) return decimal_vs_decimal(*da, *db);
  if (da) return decimal_vs_exact(*da, *eb);
  return decimal_vs_exact(*db, *ea);
}

std::optional<std::string> extract_answer_text(std::string_view response) {
  if (auto pos = response.rfind("####"); pos != std::string_view::npos) {
    auto rest = response.substr(pos + 4);
    auto eol = rest.find('\n');
    auto ans = trim(rest.substr(0, eol));
    if (!ans.empty()) return std::string(ans);
  }
  for (std::size_t pos = response.rfind("boxed{"); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : response.rfind("boxed{", pos - 1)) {
    std::size_t open = pos + 5;
    std::size_t close = match_brace(response, open);
    if (close != std::string_view::npos) {
      auto ans = trim(response.substr(open + 1, close - open - 1));
      if (!ans.empty()) return std::string(ans);
    }
    if (pos == 0) break;
  }
  return last_standalone_number(response);
}

std::optional<Answer> extract_answer(std::string_view response) {
  auto text = extract_answer_text(response);
  if (!text) return std::nullopt;
  Answer a = Answer::parse(*text);
  if (a.empty()) return std::nullopt;
  return a;
}

}  // namespace critloop
