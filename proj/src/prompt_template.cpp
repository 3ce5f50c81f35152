#include "kverb/prompt_template.hpp"

#include "kverb/errors.hpp"
#include "kverb/text.hpp"

namespace kverb {

namespace {

constexpr std::string_view kText = "{text}";
constexpr std::string_view kMask = "{mask}";

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

PromptTemplate PromptTemplate::parse(std::string pattern) {
  if (count(pattern, kText) != 1 || count(pattern, kMask) != 1) {
    throw PreconditionError("prompt template needs exactly one {text} and one {mask} slot: '" +
                            pattern + "'");
  }
  return PromptTemplate(std::move(pattern));
}

PromptTemplate PromptTemplate::canonical() {
  return PromptTemplate("{text} The field of this study is related to: {mask}.");
}

PromptTemplate PromptTemplate::article() {
  return PromptTemplate("{text} The field of this article is related to: {mask}.");
}

PromptTemplate PromptTemplate::named(std::string_view name_or_pattern) {
  if (name_or_pattern == "canonical") return canonical();
  if (name_or_pattern == "article") return article();
  return parse(std::string(name_or_pattern));
}

std::string PromptTemplate::fill(std::string_view text, std::string_view mask) const {
  // Single pass: slot markers inside substituted values stay literal.
  const auto text_pos = pattern_.find(kText);
  const auto mask_pos = pattern_.find(kMask);
  std::string out;
  if (text_pos < mask_pos) {
    out = pattern_.substr(0, text_pos) + std::string(text) +
          pattern_.substr(text_pos + kText.size(), mask_pos - text_pos - kText.size()) +
          std::string(mask) + pattern_.substr(mask_pos + kMask.size());
  } else {
    out = pattern_.substr(0, mask_pos) + std::string(mask) +
          pattern_.substr(mask_pos + kMask.size(), text_pos - mask_pos - kMask.size()) +
          std::string(text) + pattern_.substr(text_pos + kText.size());
  }
  return trim(out);
}

}  // namespace kverb
