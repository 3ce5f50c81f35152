#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace kverb {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Splits on ASCII whitespace.
std::vector<std::string> whitespace_tokens(std::string_view s);

/// Lowercased word tokens. Letters, digits, and in-word '-' / '\'' form
/// words; everything else separates. A literal "[MASK]" survives as one
/// token.
std::vector<std::string> word_tokens(std::string_view s);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// Strict parse of a full decimal string; throws ParseError.
double parse_double(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace kverb
