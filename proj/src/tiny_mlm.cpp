#include "kverb/tiny_mlm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "kverb/errors.hpp"
#include "kverb/hashing.hpp"
#include "kverb/optim.hpp"
#include "kverb/rng.hpp"
#include "kverb/text.hpp"

namespace kverb {

using nlohmann::json;
namespace fs = std::filesystem;

void restore(MLMBackend& backend, const Checkpoint& saved) {
  auto p = backend.parameters();
  if (p.size() != saved.size()) throw PreconditionError("checkpoint does not match backend layout");
  std::copy(saved.begin(), saved.end(), p.begin());
}

std::string parameter_hash(const MLMBackend& backend) { return sha256_hex(backend.parameters()); }

TinyMLM TinyMLM::build(std::span<const std::string> texts, const TinyMLMConfig& config) {
  if (config.dim <= 0 || config.max_length < 2) throw ConfigError("invalid TinyMLM config");
  TinyMLM m;
  m.config_ = config;
  m.tokens_ = {"[UNK]", "[MASK]"};
  m.index_ = {{"[UNK]", kUnk}, {"[MASK]", kMask}};
  for (const auto& text : texts) {
    for (auto& tok : word_tokens(text)) {
      if (m.index_.emplace(tok, static_cast<TokenId>(m.tokens_.size())).second) {
        m.tokens_.push_back(std::move(tok));
      }
    }
  }
  const std::size_t d = m.hidden_size();
  m.params_.assign(m.output_bias_offset() + m.tokens_.size(), 0.0);
  Rng rng(config.seed);
  for (std::size_t i = 0; i < m.tokens_.size() * d; ++i) m.params_[i] = rng.normal() * config.init_scale;
  for (std::size_t i = 0; i < d; ++i) m.params_[m.weight_offset() + i * d + i] = 1.0;
  return m;
}

std::unique_ptr<MLMBackend> TinyMLM::clone() const { return std::unique_ptr<MLMBackend>(new TinyMLM(*this)); }

std::vector<TokenId> TinyMLM::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& tok : word_tokens(text)) {
    auto it = index_.find(tok);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

std::span<const double> TinyMLM::token_embedding(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw PreconditionError("token id out of range: " + std::to_string(id));
  }
  const std::size_t d = hidden_size();
  return std::span<const double>(params_).subspan(static_cast<std::size_t>(id) * d, d);
}

std::vector<TokenId> TinyMLM::truncate(std::vector<TokenId> ids) const {
  const auto limit = static_cast<std::size_t>(config_.max_length);
  if (ids.size() <= limit) return ids;
  auto mask_it = std::find(ids.begin(), ids.end(), kMask);
  const auto mask_pos = static_cast<std::size_t>(mask_it - ids.begin());
  // Shorten the text before the mask; the template tail is kept whole.
  const std::size_t tail = ids.size() - mask_pos;
  if (tail >= limit) {
    return std::vector<TokenId>(ids.begin() + static_cast<std::ptrdiff_t>(mask_pos),
                                ids.begin() + static_cast<std::ptrdiff_t>(mask_pos + limit));
  }
  std::vector<TokenId> out(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(limit - tail));
  out.insert(out.end(), ids.begin() + static_cast<std::ptrdiff_t>(mask_pos), ids.end());
  return out;
}

MaskForward TinyMLM::forward(std::string_view filled_prompt) const {
  auto ids = tokenize(filled_prompt);
  if (std::find(ids.begin(), ids.end(), kMask) == ids.end()) {
    throw PreconditionError("prompt has no [MASK] token");
  }
  ids = truncate(std::move(ids));
  const auto mask_pos =
      static_cast<std::size_t>(std::find(ids.begin(), ids.end(), kMask) - ids.begin());
  return forward_ids(ids, mask_pos);
}

MaskForward TinyMLM::forward_ids(std::span<const TokenId> ids, std::size_t mask_pos) const {
  const std::size_t d = hidden_size();
  MaskForward st;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i != mask_pos && ids[i] != kMask) st.context.push_back(ids[i]);
  }
  st.pooled.assign(d, 0.0);
  if (!st.context.empty()) {
    for (TokenId t : st.context) {
      const double* row = &params_[static_cast<std::size_t>(t) * d];
      for (std::size_t k = 0; k < d; ++k) st.pooled[k] += row[k];
    }
    const double inv = 1.0 / static_cast<double>(st.context.size());
    for (auto& x : st.pooled) x *= inv;
  }
  st.pre_activation.assign(d, 0.0);
  st.hidden.assign(d, 0.0);
  const double* w = &params_[weight_offset()];
  const double* b = &params_[bias_offset()];
  for (std::size_t i = 0; i < d; ++i) {
    double a = b[i];
    for (std::size_t j = 0; j < d; ++j) a += w[i * d + j] * st.pooled[j];
    st.pre_activation[i] = a;
    st.hidden[i] = std::tanh(a);
  }
  return st;
}

std::vector<double> TinyMLM::mask_logits(std::string_view filled_prompt) const {
  const auto h = forward(filled_prompt).hidden;
  const std::size_t d = hidden_size();
  std::vector<double> logits(tokens_.size());
  const double* ob = &params_[output_bias_offset()];
  for (std::size_t v = 0; v < tokens_.size(); ++v) {
    const double* row = &params_[v * d];
    double s = ob[v];
    for (std::size_t k = 0; k < d; ++k) s += row[k] * h[k];
    logits[v] = s;
  }
  return logits;
}

void TinyMLM::backward(const MaskForward& st, std::span<const double> grad_hidden,
                       std::span<double> grad) const {
  const std::size_t d = hidden_size();
  std::vector<double> da(d);
  for (std::size_t i = 0; i < d; ++i) da[i] = grad_hidden[i] * (1.0 - st.hidden[i] * st.hidden[i]);
  const double* w = &params_[weight_offset()];
  double* gw = &grad[weight_offset()];
  double* gb = &grad[bias_offset()];
  std::vector<double> dc(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    gb[i] += da[i];
    for (std::size_t j = 0; j < d; ++j) {
      gw[i * d + j] += da[i] * st.pooled[j];
      dc[j] += w[i * d + j] * da[i];
    }
  }
  if (st.context.empty()) return;
  const double inv = 1.0 / static_cast<double>(st.context.size());
  for (TokenId t : st.context) {
    double* ge = &grad[static_cast<std::size_t>(t) * d];
    for (std::size_t k = 0; k < d; ++k) ge[k] += dc[k] * inv;
  }
}

void TinyMLM::accumulate_embedding_grad(TokenId id, std::span<const double> g,
                                        std::span<double> grad) const {
  const std::size_t d = hidden_size();
  double* ge = &grad[static_cast<std::size_t>(id) * d];
  for (std::size_t k = 0; k < d; ++k) ge[k] += g[k];
}

double TinyMLM::pretrain(std::span<const std::string> sentences, const PretrainConfig& config) {
  const std::size_t d = hidden_size();
  const std::size_t vocab = tokens_.size();
  std::vector<std::vector<TokenId>> corpus;
  for (const auto& s : sentences) {
    auto ids = tokenize(s);
    if (ids.size() > static_cast<std::size_t>(config_.max_length)) {
      ids.resize(static_cast<std::size_t>(config_.max_length));
    }
    if (ids.size() >= 2) corpus.push_back(std::move(ids));
  }
  if (corpus.empty()) return 0.0;

  Adam adam(params_.size(), config.learning_rate);
  std::vector<double> grad(params_.size());
  std::vector<double> probs(vocab), dh(d);
  Rng rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  double epoch_loss = 0.0;
  constexpr std::size_t kBatch = 8;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    epoch_loss = 0.0;
    std::size_t samples = 0;
    std::size_t in_batch = 0;
    std::fill(grad.begin(), grad.end(), 0.0);
    auto flush = [&] {
      if (in_batch == 0) return;
      for (auto& g : grad) g /= static_cast<double>(in_batch);
      adam.step(params_, grad);
      std::fill(grad.begin(), grad.end(), 0.0);
      in_batch = 0;
    };
    for (std::size_t idx : order) {
      const auto& ids = corpus[idx];
      for (int m = 0; m < config.masks_per_sentence; ++m) {
        const std::size_t pos = static_cast<std::size_t>(rng.uniform_index(ids.size()));
        const TokenId target = ids[pos];
        if (target == kUnk || target == kMask) continue;
        std::vector<TokenId> masked(ids.begin(), ids.end());
        masked[pos] = kMask;
        MaskForward st = forward_ids(masked, pos);
        double max_logit = -INFINITY;
        for (std::size_t v = 0; v < vocab; ++v) {
          const double* row = &params_[v * d];
          double s = params_[output_bias_offset() + v];
          for (std::size_t k = 0; k < d; ++k) s += row[k] * st.hidden[k];
          probs[v] = s;
          max_logit = std::max(max_logit, s);
        }
        double z = 0.0;
        for (auto& p : probs) {
          p = std::exp(p - max_logit);
          z += p;
        }
        for (auto& p : probs) p /= z;
        epoch_loss += -std::log(std::max(probs[static_cast<std::size_t>(target)], 1e-300));
        ++samples;
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t v = 0; v < vocab; ++v) {
          const double g = probs[v] - (static_cast<TokenId>(v) == target ? 1.0 : 0.0);
          grad[output_bias_offset() + v] += g;
          double* ge = &grad[v * d];
          const double* row = &params_[v * d];
          for (std::size_t k = 0; k < d; ++k) {
            ge[k] += g * st.hidden[k];
            dh[k] += g * row[k];
          }
        }
        backward(st, dh, grad);
        if (++in_batch == kBatch) flush();
      }
    }
    flush();
    if (samples > 0) epoch_loss /= static_cast<double>(samples);
    if (!std::isfinite(epoch_loss)) throw TrainingError("pretraining diverged (loss is not finite)");
  }
  return epoch_loss;
}

void TinyMLM::save(const fs::path& dir) const {
  fs::create_directories(dir);
  json cfg = {{"dim", config_.dim},
              {"max_length", config_.max_length},
              {"seed", config_.seed},
              {"init_scale", format_double(config_.init_scale)}};
  json doc = {{"config", cfg}, {"vocabulary", tokens_}, {"parameters", params_}};
  std::ofstream out(dir / "tiny_mlm.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "tiny_mlm.json").string());
  out << doc.dump() << '\n';
}

TinyMLM TinyMLM::load(const fs::path& dir) {
  std::ifstream in(dir / "tiny_mlm.json");
  if (!in) throw ParseError("cannot open " + (dir / "tiny_mlm.json").string());
  TinyMLM m;
  try {
    json doc = json::parse(in);
    const auto& cfg = doc.at("config");
    m.config_.dim = cfg.at("dim").get<int>();
    m.config_.max_length = cfg.at("max_length").get<int>();
    m.config_.seed = cfg.at("seed").get<std::uint64_t>();
    m.config_.init_scale = parse_double(cfg.at("init_scale").get<std::string>());
    m.tokens_ = doc.at("vocabulary").get<std::vector<std::string>>();
    m.params_ = doc.at("parameters").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError((dir / "tiny_mlm.json").string() + ": " + e.what());
  }
  if (m.tokens_.size() < 2 || m.tokens_[0] != "[UNK]" || m.tokens_[1] != "[MASK]") {
    throw ParseError("tiny_mlm.json: vocabulary must start with [UNK], [MASK]");
  }
  for (std::size_t i = 0; i < m.tokens_.size(); ++i) m.index_.emplace(m.tokens_[i], static_cast<TokenId>(i));
  if (m.params_.size() != m.output_bias_offset() + m.tokens_.size()) {
    throw ParseError("tiny_mlm.json: parameter count does not match vocabulary and dim");
  }
  return m;
}

}  // namespace kverb
