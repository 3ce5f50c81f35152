#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kverb {

enum class TermSource { related_words, reverse_dictionary, class_name_seed };

enum class Stage { raw = 0, filtered = 1, calibrated = 2 };

enum class StageFlag : std::uint8_t { retrieved = 1, filtered = 2, calibrated = 4 };

std::string_view to_string(TermSource source);
std::string_view to_string(Stage stage);
std::string_view to_string(StageFlag flag);
TermSource parse_term_source(std::string_view s);
Stage parse_stage(std::string_view s);
StageFlag parse_stage_flag(std::string_view s);

class StageFlags {
 public:
  StageFlags() = default;
  StageFlags(std::initializer_list<StageFlag> flags) {
    for (auto f : flags) set(f);
  }

  bool has(StageFlag f) const { return (bits_ & static_cast<std::uint8_t>(f)) != 0; }
  void set(StageFlag f) { bits_ |= static_cast<std::uint8_t>(f); }
  void clear(StageFlag f) { bits_ &= static_cast<std::uint8_t>(~static_cast<std::uint8_t>(f)); }

  /// Stage implied by the most advanced flag.
  Stage stage() const;

  friend bool operator==(StageFlags, StageFlags) = default;

 private:
  std::uint8_t bits_ = 0;
};

struct ClassLabel {
  int id = 0;
  std::string name;
  /// Query sent to the knowledge bases; defaults to the lowercase name.
  std::string query_text;

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

ClassLabel make_class(int id, std::string name);

struct LabelTerm {
  std::string text;
  double kb_score = 0.0;
  /// w_l, assigned by semantic filtering. Present iff the `filtered` flag is.
  std::optional<double> semantic_weight;
  TermSource source = TermSource::related_words;
  StageFlags flags;

  bool is_seed() const { return source == TermSource::class_name_seed; }

  friend bool operator==(const LabelTerm&, const LabelTerm&) = default;
};

/// A freshly retrieved term carrying only the `retrieved` flag.
LabelTerm retrieved_term(std::string text, double kb_score, TermSource source);

/// Class labels plus each class's weighted label-term set.
///
/// Values are immutable once built: every stage transition returns a new
/// Verbalizer. The class-name seed term is always present, term texts are
/// unique per class (case-insensitive), and order is insertion order.
class Verbalizer {
 public:
  const std::vector<ClassLabel>& classes() const { return classes_; }
  std::size_t num_classes() const { return classes_.size(); }
  const ClassLabel& class_label(int class_id) const;
  const std::vector<LabelTerm>& terms(int class_id) const;
  std::size_t total_terms() const;

  /// Minimum stage over every stored term.
  Stage stage() const;

  friend bool operator==(const Verbalizer&, const Verbalizer&) = default;

 private:
  friend Verbalizer new_verbalizer(std::vector<ClassLabel> classes);
  friend Verbalizer replace_terms(const Verbalizer& v, int class_id, std::vector<LabelTerm> terms);
  friend Verbalizer deserialize(std::string_view data);

  void check_class(int class_id) const;

  std::vector<ClassLabel> classes_;
  std::vector<std::vector<LabelTerm>> terms_;
};

/// One seed term per class: its lowercase name, kb_score 1.0, stage raw.
Verbalizer new_verbalizer(std::vector<ClassLabel> classes);

/// Appends terms with case-insensitive keep-first de-duplication.
/// Terms with kb_score <= 0 are rejected.
Verbalizer add_terms(const Verbalizer& v, int class_id, std::span<const LabelTerm> terms);

/// Replaces a class's term list wholesale after validating every invariant
/// (seed present, unique texts, weight set iff filtered).
Verbalizer replace_terms(const Verbalizer& v, int class_id, std::vector<LabelTerm> terms);

/// Canonical JSON document with sorted keys; reals are decimal strings.
std::string serialize(const Verbalizer& v);
Verbalizer deserialize(std::string_view data);

Verbalizer load_verbalizer(const std::string& path);
void save_verbalizer(const Verbalizer& v, const std::string& path);

struct CrossClassDuplicate {
  std::string text;  // lowercase
  std::vector<int> class_ids;
};

/// Terms that occur under more than one class. Allowed, but reported.
std::vector<CrossClassDuplicate> cross_class_duplicates(const Verbalizer& v);

}  // namespace kverb
