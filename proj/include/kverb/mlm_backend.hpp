#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kverb {

using TokenId = std::int32_t;

/// Forward state at the mask position, kept for the backward pass.
struct MaskForward {
  std::vector<double> hidden;  // h_mask
  std::vector<TokenId> context;
  std::vector<double> pre_activation;
  std::vector<double> pooled;
};

/// Masked language model as seen by the verbalizer.
///
/// Evaluation is deterministic for fixed parameters. All trainable state is
/// exposed as one flat parameter vector so callers can checkpoint, restore,
/// and hash it; gradients use the same layout.
class MLMBackend {
 public:
  virtual ~MLMBackend() = default;

  virtual std::unique_ptr<MLMBackend> clone() const = 0;

  virtual std::string mask_token() const = 0;
  virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t hidden_size() const = 0;

  virtual std::span<const double> token_embedding(TokenId id) const = 0;

  /// Hidden state at the mask position of a filled prompt.
  std::vector<double> mask_hidden(std::string_view filled_prompt) const {
    return forward(filled_prompt).hidden;
  }
  /// Per-vocabulary scores at the mask position.
  virtual std::vector<double> mask_logits(std::string_view filled_prompt) const = 0;

  virtual MaskForward forward(std::string_view filled_prompt) const = 0;

  /// Accumulates d(loss)/d(params) given d(loss)/d(h_mask).
  virtual void backward(const MaskForward& state, std::span<const double> grad_hidden,
                        std::span<double> grad_params) const = 0;
  /// Accumulates a gradient arriving at one input embedding row.
  virtual void accumulate_embedding_grad(TokenId id, std::span<const double> grad,
                                         std::span<double> grad_params) const = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
};

using Checkpoint = std::vector<double>;

inline Checkpoint checkpoint(const MLMBackend& backend) {
  auto p = backend.parameters();
  return Checkpoint(p.begin(), p.end());
}

void restore(MLMBackend& backend, const Checkpoint& saved);

/// SHA-256 over the raw parameter bytes.
std::string parameter_hash(const MLMBackend& backend);

}  // namespace kverb
