#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kverb/mlm_backend.hpp"

namespace kverb {

struct TinyMLMConfig {
  int dim = 32;
  int max_length = 256;
  std::uint64_t seed = 1;
  /// Standard deviation of the initial embeddings.
  double init_scale = 0.3;
};

struct PretrainConfig {
  int epochs = 3;
  double learning_rate = 0.01;
  /// Masked positions drawn per sentence and epoch.
  int masks_per_sentence = 2;
  std::uint64_t seed = 7;
};

/// Small word-level masked language model.
///
/// The hidden state at the mask is h = tanh(W c + b), where c is the mean
/// input embedding of every other token in the prompt. Output scores reuse
/// the input embeddings (tied), plus a per-token bias. Index 0 is [UNK] and
/// index 1 is [MASK].
class TinyMLM final : public MLMBackend {
 public:
  /// Vocabulary is every word token of `texts`, in first-seen order.
  static TinyMLM build(std::span<const std::string> texts, const TinyMLMConfig& config);
  static TinyMLM load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  /// Masked-token pretraining on unlabeled sentences.
  /// Returns the mean loss of the final epoch.
  double pretrain(std::span<const std::string> sentences, const PretrainConfig& config);

  std::unique_ptr<MLMBackend> clone() const override;
  std::string mask_token() const override { return "[MASK]"; }
  std::vector<TokenId> tokenize(std::string_view text) const override;
  std::size_t vocab_size() const override { return tokens_.size(); }
  std::size_t hidden_size() const override { return static_cast<std::size_t>(config_.dim); }
  std::span<const double> token_embedding(TokenId id) const override;
  std::vector<double> mask_logits(std::string_view filled_prompt) const override;
  MaskForward forward(std::string_view filled_prompt) const override;
  void backward(const MaskForward& state, std::span<const double> grad_hidden,
                std::span<double> grad_params) const override;
  void accumulate_embedding_grad(TokenId id, std::span<const double> grad,
                                 std::span<double> grad_params) const override;
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }

  const TinyMLMConfig& config() const { return config_; }
  const std::vector<std::string>& vocabulary() const { return tokens_; }

  // Flat layout: [embeddings V*d | W d*d | b d | output bias V]
  std::size_t embedding_offset() const { return 0; }
  std::size_t weight_offset() const { return tokens_.size() * hidden_size(); }
  std::size_t bias_offset() const { return weight_offset() + hidden_size() * hidden_size(); }
  std::size_t output_bias_offset() const { return bias_offset() + hidden_size(); }

  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kMask = 1;

 private:
  TinyMLM() = default;
  MaskForward forward_ids(std::span<const TokenId> ids, std::size_t mask_pos) const;
  std::vector<TokenId> truncate(std::vector<TokenId> ids) const;

  TinyMLMConfig config_;
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> index_;
  std::vector<double> params_;
};

}  // namespace kverb
