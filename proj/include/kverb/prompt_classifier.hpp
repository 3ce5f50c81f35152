#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kverb/dataset.hpp"
#include "kverb/kb_retrieval.hpp"
#include "kverb/mlm_backend.hpp"
#include "kverb/prompt_template.hpp"
#include "kverb/verbalizer.hpp"

namespace kverb {

/// How per-term scores combine into one class logit.
enum class TermAggregation { mean, max, weighted_mean };

std::string_view to_string(TermAggregation a);
TermAggregation parse_term_aggregation(std::string_view s);

struct ClassScores {
  std::vector<double> logits;
  std::vector<double> probabilities;

  /// Argmax of the logits; ties go to the lowest class id.
  std::size_t predicted() const;
};

/// Max-shifted exponential normalization.
std::vector<double> softmax(std::span<const double> logits);

/// Index of the largest value; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);

/// Mean of the backend embeddings of the term's tokens.
/// Throws PreconditionError when the term yields no tokens.
std::vector<double> term_vector(const MLMBackend& backend, std::string_view term_text);
inline std::vector<double> term_vector(const MLMBackend& backend, const LabelTerm& term) {
  return term_vector(backend, term.text);
}

/// Weighted verbalizer scores: each term contributes
/// dot(term_vector, h_mask) * w_t, and a class's logit aggregates its terms.
ClassScores class_logits(const MLMBackend& backend, const Verbalizer& v, std::string_view abstract,
                         const PromptTemplate& tmpl = PromptTemplate::canonical(),
                         TermAggregation aggregation = TermAggregation::mean);

/// Mask probability of a term for one prompt: the mean softmax probability
/// of its tokens.
double term_mask_probability(std::span<const double> vocab_probs, std::span<const TokenId> tokens);

struct CalibrationConfig {
  /// Use gold labels to group support examples by class; otherwise each
  /// example is assigned to the class the uncalibrated verbalizer predicts.
  bool use_gold_labels = false;
  /// Terms whose max-normalized ratio is not above this are removed.
  double cut = 0.5;
  TermAggregation aggregation = TermAggregation::mean;
};

struct TermCalibration {
  int class_id = 0;
  std::string text;
  double class_probability = 0.0;  // mean mask probability over the class's support
  double prior = 0.0;              // mean mask probability over the whole support
  std::optional<double> ratio;     // class_probability / prior; unset when prior is 0
  std::optional<double> normalized;
  bool kept = true;
};

/// Per-term ratios of class-conditional mask probability over the support
/// prior, max-normalized within each class.
std::vector<TermCalibration> calibration_scores(const MLMBackend& backend, const Verbalizer& v,
                                                std::span<const LabeledExample> support,
                                                const PromptTemplate& tmpl,
                                                const CalibrationConfig& config,
                                                WarningSink warn = stderr_warnings());

/// Removes terms whose normalized calibrated score is <= cut; seed terms are
/// never removed. Requires a filtered verbalizer; returns stage calibrated.
Verbalizer calibrate(const MLMBackend& backend, const Verbalizer& v,
                     std::span<const LabeledExample> support,
                     const PromptTemplate& tmpl = PromptTemplate::canonical(),
                     const CalibrationConfig& config = {}, WarningSink warn = stderr_warnings());

/// Sets every semantic weight to 1 (the "without semantic scores" ablation).
Verbalizer strip_semantic_weights(const Verbalizer& v);

/// Marks a raw verbalizer filtered with unit weights and without removing
/// anything (the "without filtering" ablation).
Verbalizer promote_unfiltered(const Verbalizer& v);

/// Trainable per-class vectors initialized from weighted term vectors:
/// u_i = sum_t w_t v_t / sum_t w_t. Class logit = dot(u_i, h_mask).
class SoftVerbalizer {
 public:
  static SoftVerbalizer build(const MLMBackend& backend, const Verbalizer& v);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> vector(std::size_t class_id) const;
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  ClassScores scores(std::span<const double> hidden) const;
  ClassScores classify(const MLMBackend& backend, std::string_view abstract,
                       const PromptTemplate& tmpl = PromptTemplate::canonical()) const;

 private:
  std::size_t num_classes_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> params_;  // num_classes x dim
};

struct LossAndGradient {
  double loss = 0.0;  // mean cross-entropy
  std::vector<double> backend_grad;
  std::vector<double> soft_grad;
};

/// Mean cross-entropy of the class probabilities against gold labels, with
/// its gradient with respect to the backend parameters and, when `soft` is
/// given, the soft verbalizer vectors (which then replace the term scores).
LossAndGradient cross_entropy_gradient(const MLMBackend& backend, const Verbalizer& v,
                                       std::span<const LabeledExample> batch,
                                       const PromptTemplate& tmpl, TermAggregation aggregation,
                                       const SoftVerbalizer* soft = nullptr);

struct TuningConfig {
  int epochs = 5;
  double learning_rate = 3e-5;
  int batch_size = 5;
  std::uint64_t seed = 1;
  TermAggregation aggregation = TermAggregation::mean;
  /// Keep backend parameters fixed and tune only the soft vectors.
  bool freeze_backend = false;
};

struct TuningResult {
  int best_epoch = 0;  // 0 when no epoch ran
  double best_val_accuracy = 0.0;
  std::vector<double> val_accuracy;  // per epoch
  std::vector<double> train_loss;    // per epoch
};

/// Few-shot prompt tuning. Keeps the checkpoint with the best validation
/// accuracy (earliest epoch on ties) and restores it before returning.
/// Throws TrainingError if the loss becomes non-finite.
TuningResult fine_tune(MLMBackend& backend, const Verbalizer& v, const FewShotSplit& split,
                       const TuningConfig& config,
                       const PromptTemplate& tmpl = PromptTemplate::canonical(),
                       SoftVerbalizer* soft = nullptr);

/// Predicted class for each example.
std::vector<int> predict(const MLMBackend& backend, const Verbalizer& v,
                         std::span<const LabeledExample> examples, const PromptTemplate& tmpl,
                         TermAggregation aggregation = TermAggregation::mean,
                         const SoftVerbalizer* soft = nullptr);

/// Argmax of class_logits with no parameter updates. Throws std::logic_error
/// if the backend parameters changed during the call.
int zero_shot_classify(const MLMBackend& backend, const Verbalizer& v, std::string_view abstract,
                       const PromptTemplate& tmpl = PromptTemplate::canonical(),
                       TermAggregation aggregation = TermAggregation::mean);

}  // namespace kverb
