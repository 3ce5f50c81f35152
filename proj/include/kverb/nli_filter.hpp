#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kverb/prompt_template.hpp"
#include "kverb/verbalizer.hpp"

namespace kverb {

enum class NLILabel { entailment, contradiction };

struct NLIPair {
  std::string premise;
  std::string hypothesis;
  NLILabel label = NLILabel::entailment;
};

/// A sentence pair as it appears in the source NLI dataset.
struct RawNLIExample {
  std::string premise;
  std::string hypothesis;
  std::string label;
};

struct BinarizeReport {
  std::vector<NLIPair> pairs;
  /// Dropped examples per unmapped source label.
  std::map<std::string, std::size_t> dropped;
};

/// Maps the SciNLI label set onto the binary task: "entailment" stays
/// entailment, "contrasting" (or "contradiction") becomes contradiction, and
/// "neutral" / "reasoning" are dropped. Label matching is case-insensitive.
/// Throws ConfigError when nothing survives.
BinarizeReport binarize_scinli(std::span<const RawNLIExample> raw);

/// JSONL with {premise|sentence1, hypothesis|sentence2, label}.
std::vector<RawNLIExample> read_nli_jsonl(const std::filesystem::path& path);

/// Embeds one sentence as a unit-norm vector.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual std::vector<double> encode(std::string_view sentence) const = 0;
};

/// Scores a sentence pair jointly, returning a value in [0, 1].
class PairScorer {
 public:
  virtual ~PairScorer() = default;
  virtual double score(std::string_view first, std::string_view second) const = 0;
};

struct EncoderTrainingConfig {
  int epochs = 5;
  double learning_rate = 3e-5;
  int batch_size = 5;
  int max_length = 256;
  int dim = 32;
  std::uint64_t seed = 1;
};

/// Word vocabulary with inverse document frequencies and a trainable
/// embedding table; sentences are IDF-weighted means of their in-vocabulary
/// token embeddings. Tokens never seen in training contribute nothing.
struct PooledEmbeddings {
  std::map<std::string, std::size_t> vocab;
  std::vector<double> idf;
  std::size_t dim = 0;
  std::vector<double> table;  // vocab.size() x dim, row-major

  struct Pooled {
    std::vector<double> vector;
    std::vector<std::pair<std::size_t, double>> rows;  // (row, coefficient)
  };
  Pooled pool(std::string_view sentence, int max_length) const;
};

/// Bi-encoder: cosine of pooled embeddings, trained so entailed pairs score
/// +1 and contradicted pairs -1.
class BiEncoder final : public SentenceEncoder {
 public:
  std::vector<double> encode(std::string_view sentence) const override;

  const PooledEmbeddings& embeddings() const { return emb_; }
  const EncoderTrainingConfig& config() const { return config_; }

  void save(const std::filesystem::path& dir, const std::string& trained_on) const;
  static BiEncoder load(const std::filesystem::path& dir);

 private:
  friend BiEncoder train_bi_encoder(std::span<const NLIPair>, const EncoderTrainingConfig&);
  PooledEmbeddings emb_;
  EncoderTrainingConfig config_;
};

/// Cross-encoder: logistic head over [|u - v|, u * v] of pooled embeddings.
/// The output is the probability that the pair diverges (contradiction), so
/// low scores mark relevant pairs. Symmetric in its arguments.
class CrossEncoder final : public PairScorer {
 public:
  double score(std::string_view first, std::string_view second) const override;

  const EncoderTrainingConfig& config() const { return config_; }

  void save(const std::filesystem::path& dir, const std::string& trained_on) const;
  static CrossEncoder load(const std::filesystem::path& dir);

 private:
  friend CrossEncoder train_cross_encoder(std::span<const NLIPair>, const EncoderTrainingConfig&);
  double logit(const std::vector<double>& u, const std::vector<double>& v) const;

  PooledEmbeddings emb_;
  std::vector<double> head_;  // 2 * dim
  double bias_ = 0.0;
  EncoderTrainingConfig config_;
};

/// Throws PreconditionError on an empty pair list.
BiEncoder train_bi_encoder(std::span<const NLIPair> pairs, const EncoderTrainingConfig& config);
CrossEncoder train_cross_encoder(std::span<const NLIPair> pairs, const EncoderTrainingConfig& config);

/// Manifest stored next to a saved encoder.
struct EncoderManifest {
  std::string kind;  // "bi" or "cross"
  std::string trained_on;
  std::string config_hash;
};
EncoderManifest read_encoder_manifest(const std::filesystem::path& dir);
std::string encoder_config_hash(const EncoderTrainingConfig& config);

struct FilterConfig {
  double mu_be = 0.5;
  double mu_ce = 0.1;
  /// When set, the cross-encoder gate is inverted to ce_score > mu_ce.
  bool ce_higher_is_relevant = false;
};

void validate(const FilterConfig& config);

struct FilterScores {
  int class_id = 0;
  LabelTerm term;
  double be_score = 0.0;
  double ce_score = 0.0;
  bool kept = false;
};

/// (be_score > mu_be) && (ce_score < mu_ce); ties are dropped. A term with a
/// non-positive be_score is never kept because its weight must be positive.
bool keep_term(double be_score, double ce_score, const FilterConfig& config);

/// The template filled with the class query and with the term text, text
/// slot empty.
std::pair<std::string, std::string> build_filter_prompts(const ClassLabel& label,
                                                         const LabelTerm& term,
                                                         const PromptTemplate& tmpl);

/// Scores every retrieved (non-seed) term of a raw verbalizer.
std::vector<FilterScores> score_terms(const Verbalizer& v, const SentenceEncoder& be,
                                      const PairScorer& ce, const FilterConfig& config,
                                      const PromptTemplate& tmpl = PromptTemplate::canonical());

/// Keeps terms passing keep_term with semantic_weight = be_score; seed terms
/// pass with weight 1.0. Requires a raw verbalizer; returns stage filtered.
Verbalizer semantic_filter(const Verbalizer& v, const SentenceEncoder& be, const PairScorer& ce,
                           const FilterConfig& config,
                           const PromptTemplate& tmpl = PromptTemplate::canonical());

/// Applies precomputed scores (from score_terms) under `config`.
Verbalizer apply_filter(const Verbalizer& v, const std::vector<FilterScores>& scores,
                        const FilterConfig& config);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace kverb
