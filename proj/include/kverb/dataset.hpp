#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kverb/verbalizer.hpp"

namespace kverb {

struct LabeledExample {
  std::string id;
  std::string abstract;
  int label = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct Dataset {
  std::vector<ClassLabel> classes;
  std::vector<LabeledExample> examples;
  /// Abstracts dropped for being shorter than the token minimum.
  std::size_t excluded_short = 0;
};

/// Seeded N-way K-shot sample: K train and K validation examples per class.
struct FewShotSplit {
  std::uint64_t seed = 0;
  std::size_t shots = 0;
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> val;
};

}  // namespace kverb
