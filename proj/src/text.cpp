#include "kverb/text.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <system_error>

#include "kverb/errors.hpp"

namespace kverb {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

constexpr std::string_view kMaskLiteral = "[MASK]";

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> whitespace_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    // strip joiners left dangling at either end
    while (!current.empty() && (current.back() == '-' || current.back() == '\'')) current.pop_back();
    std::size_t lead = 0;
    while (lead < current.size() && (current[lead] == '-' || current[lead] == '\'')) ++lead;
    if (lead < current.size()) out.push_back(to_lower(std::string_view(current).substr(lead)));
    current.clear();
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.substr(i, kMaskLiteral.size()) == kMaskLiteral) {
      flush();
      out.emplace_back(kMaskLiteral);
      i += kMaskLiteral.size() - 1;
      continue;
    }
    char c = s[i];
    if (is_word(c) || ((c == '-' || c == '\'') && !current.empty())) {
      current.push_back(c);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::string format_double(double value) {
  if (!std::isfinite(value)) {
    if (std::isnan(value)) return "nan";
    return value > 0 ? "inf" : "-inf";
  }
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  double value = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
    throw ParseError("not a decimal number: '" + std::string(s) + "'");
  }
  return value;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace kverb
