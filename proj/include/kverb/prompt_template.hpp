#pragma once

#include <string>
#include <string_view>

namespace kverb {

/// Cloze pattern holding exactly one `{text}` slot and one `{mask}` slot.
class PromptTemplate {
 public:
  /// Throws PreconditionError unless each slot occurs exactly once.
  static PromptTemplate parse(std::string pattern);

  /// "{text} The field of this study is related to: {mask}."
  static PromptTemplate canonical();
  /// "{text} The field of this article is related to: {mask}."
  static PromptTemplate article();
  /// Resolves "canonical", "article", or a literal pattern.
  static PromptTemplate named(std::string_view name_or_pattern);

  const std::string& pattern() const { return pattern_; }

  /// Substitutes both slots; surrounding whitespace is trimmed.
  std::string fill(std::string_view text, std::string_view mask) const;

  /// Pattern with `text` in the text slot and the MLM mask token in the mask slot.
  std::string cloze(std::string_view text, std::string_view mask_token = "[MASK]") const {
    return fill(text, mask_token);
  }

  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;

 private:
  explicit PromptTemplate(std::string pattern) : pattern_(std::move(pattern)) {}
  std::string pattern_;
};

}  // namespace kverb
