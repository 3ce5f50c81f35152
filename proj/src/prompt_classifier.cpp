#include "kverb/prompt_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "kverb/errors.hpp"
#include "kverb/optim.hpp"
#include "kverb/rng.hpp"
#include "kverb/text.hpp"

namespace kverb {

std::string_view to_string(TermAggregation a) {
  switch (a) {
    case TermAggregation::mean: return "mean";
    case TermAggregation::max: return "max";
    case TermAggregation::weighted_mean: return "weighted-mean";
  }
  return "?";
}

TermAggregation parse_term_aggregation(std::string_view s) {
  if (s == "mean") return TermAggregation::mean;
  if (s == "max") return TermAggregation::max;
  if (s == "weighted-mean" || s == "weighted_mean") return TermAggregation::weighted_mean;
  throw ConfigError("unknown term aggregation '" + std::string(s) + "'");
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t ClassScores::predicted() const { return argmax(logits); }

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double shift = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - shift);
    z += out[i];
  }
  for (auto& p : out) p /= z;
  return out;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_weighted(const Verbalizer& v, const char* op) {
  if (v.stage() == Stage::raw) {
    throw PreconditionError(std::string(op) + " needs a filtered or calibrated verbalizer");
  }
}

std::vector<TokenId> term_tokens(const MLMBackend& backend, std::string_view text) {
  auto ids = backend.tokenize(text);
  if (ids.empty()) throw PreconditionError("term '" + std::string(text) + "' yields no tokens");
  return ids;
}

std::vector<double> mean_embedding(const MLMBackend& backend, std::span<const TokenId> ids) {
  std::vector<double> v(backend.hidden_size(), 0.0);
  for (TokenId id : ids) {
    auto e = backend.token_embedding(id);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += e[k];
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (auto& x : v) x *= inv;
  return v;
}

struct PreparedTerm {
  std::vector<TokenId> tokens;
  std::vector<double> vector;
  double weight = 1.0;
};

/// Term tokens, vectors, and weights for every class, from the backend's
/// current parameters.
std::vector<std::vector<PreparedTerm>> prepare_terms(const MLMBackend& backend, const Verbalizer& v) {
  std::vector<std::vector<PreparedTerm>> out(v.num_classes());
  for (const auto& c : v.classes()) {
    for (const auto& t : v.terms(c.id)) {
      PreparedTerm p;
      p.tokens = term_tokens(backend, t.text);
      p.vector = mean_embedding(backend, p.tokens);
      p.weight = t.semantic_weight.value_or(1.0);
      out[static_cast<std::size_t>(c.id)].push_back(std::move(p));
    }
  }
  return out;
}

/// d(class logit)/d(term score) for each term of one class, where a term's
/// score is dot(v_t, h) and the class logit aggregates w_t * score.
std::vector<double> term_coefficients(const std::vector<PreparedTerm>& terms,
                                      std::span<const double> dots, TermAggregation aggregation) {
  std::vector<double> coef(terms.size(), 0.0);
  switch (aggregation) {
    case TermAggregation::mean:
      for (std::size_t t = 0; t < terms.size(); ++t) coef[t] = terms[t].weight / static_cast<double>(terms.size());
      break;
    case TermAggregation::weighted_mean: {
      double total = 0.0;
      for (const auto& p : terms) total += p.weight;
      for (std::size_t t = 0; t < terms.size(); ++t) coef[t] = terms[t].weight / total;
      break;
    }
    case TermAggregation::max: {
      std::size_t best = 0;
      for (std::size_t t = 1; t < terms.size(); ++t) {
        if (terms[t].weight * dots[t] > terms[best].weight * dots[best]) best = t;
      }
      coef[best] = terms[best].weight;
      break;
    }
  }
  return coef;
}

std::vector<double> hard_logits(const std::vector<std::vector<PreparedTerm>>& prepared,
                                std::span<const double> hidden, TermAggregation aggregation,
                                std::vector<std::vector<double>>* dots_out = nullptr) {
  std::vector<double> logits(prepared.size(), 0.0);
  if (dots_out) dots_out->assign(prepared.size(), {});
  for (std::size_t c = 0; c < prepared.size(); ++c) {
    std::vector<double> dots(prepared[c].size());
    for (std::size_t t = 0; t < prepared[c].size(); ++t) dots[t] = dot(prepared[c][t].vector, hidden);
    const auto coef = term_coefficients(prepared[c], dots, aggregation);
    double z = 0.0;
    for (std::size_t t = 0; t < dots.size(); ++t) z += coef[t] * dots[t];
    logits[c] = z;
    if (dots_out) (*dots_out)[c] = std::move(dots);
  }
  return logits;
}

std::string cloze_for(const MLMBackend& backend, const PromptTemplate& tmpl, std::string_view abstract) {
  if (trim(abstract).empty()) throw PreconditionError("abstract must be non-empty");
  return tmpl.cloze(abstract, backend.mask_token());
}

}  // namespace

std::vector<double> term_vector(const MLMBackend& backend, std::string_view term_text) {
  return mean_embedding(backend, term_tokens(backend, term_text));
}

ClassScores class_logits(const MLMBackend& backend, const Verbalizer& v, std::string_view abstract,
                         const PromptTemplate& tmpl, TermAggregation aggregation) {
  require_weighted(v, "class_logits");
  const auto hidden = backend.mask_hidden(cloze_for(backend, tmpl, abstract));
  ClassScores s;
  s.logits = hard_logits(prepare_terms(backend, v), hidden, aggregation);
  s.probabilities = softmax(s.logits);
  return s;
}

double term_mask_probability(std::span<const double> vocab_probs, std::span<const TokenId> tokens) {
  double sum = 0.0;
  for (TokenId t : tokens) sum += vocab_probs[static_cast<std::size_t>(t)];
  return sum / static_cast<double>(tokens.size());
}

// ---------------------------------------------------------------- calibration

std::vector<TermCalibration> calibration_scores(const MLMBackend& backend, const Verbalizer& v,
                                                std::span<const LabeledExample> support,
                                                const PromptTemplate& tmpl,
                                                const CalibrationConfig& config, WarningSink warn) {
  if (v.stage() != Stage::filtered) throw PreconditionError("calibrate expects a filtered verbalizer");
  if (support.empty()) throw PreconditionError("calibrate needs a non-empty support set");
  const std::size_t n_classes = v.num_classes();

  std::vector<std::vector<std::vector<TokenId>>> tokens(n_classes);
  for (const auto& c : v.classes()) {
    for (const auto& t : v.terms(c.id)) tokens[static_cast<std::size_t>(c.id)].push_back(term_tokens(backend, t.text));
  }
  const auto prepared = config.use_gold_labels ? std::vector<std::vector<PreparedTerm>>{}
                                               : prepare_terms(backend, v);

  std::vector<std::vector<double>> prior(n_classes), class_sum(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    prior[c].assign(tokens[c].size(), 0.0);
    class_sum[c].assign(tokens[c].size(), 0.0);
  }
  std::vector<std::size_t> class_count(n_classes, 0);

  for (const auto& ex : support) {
    const std::string prompt = cloze_for(backend, tmpl, ex.abstract);
    const auto probs = softmax(backend.mask_logits(prompt));
    std::size_t assigned = 0;
    if (config.use_gold_labels) {
      if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= n_classes) {
        throw PreconditionError("support example '" + ex.id + "' has an unknown label");
      }
      assigned = static_cast<std::size_t>(ex.label);
    } else {
      assigned = argmax(hard_logits(prepared, backend.mask_hidden(prompt), config.aggregation));
    }
    ++class_count[assigned];
    for (std::size_t c = 0; c < n_classes; ++c) {
      for (std::size_t t = 0; t < tokens[c].size(); ++t) {
        const double p = term_mask_probability(probs, tokens[c][t]);
        prior[c][t] += p;
        if (c == assigned) class_sum[c][t] += p;
      }
    }
  }

  std::vector<TermCalibration> out;
  const double n_support = static_cast<double>(support.size());
  for (const auto& c : v.classes()) {
    const auto ci = static_cast<std::size_t>(c.id);
    const auto& terms = v.terms(c.id);
    const std::size_t first = out.size();
    if (class_count[ci] == 0 && warn) {
      warn("no support example falls under class '" + c.name + "'; its terms are kept uncalibrated");
    }
    double max_ratio = 0.0;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      TermCalibration tc;
      tc.class_id = c.id;
      tc.text = terms[t].text;
      tc.prior = prior[ci][t] / n_support;
      if (class_count[ci] > 0) {
        tc.class_probability = class_sum[ci][t] / static_cast<double>(class_count[ci]);
        if (tc.prior > 0.0 && std::isfinite(tc.prior)) {
          tc.ratio = tc.class_probability / tc.prior;
          max_ratio = std::max(max_ratio, *tc.ratio);
        } else if (!terms[t].is_seed()) {
          tc.kept = false;
          if (warn) warn("term '" + terms[t].text + "' has zero prior probability; removed");
        }
      }
      out.push_back(std::move(tc));
    }
    if (class_count[ci] == 0) continue;
    for (std::size_t i = first; i < out.size(); ++i) {
      auto& tc = out[i];
      if (!tc.ratio) continue;
      tc.normalized = max_ratio > 0.0 ? *tc.ratio / max_ratio : 0.0;
      tc.kept = terms[i - first].is_seed() || *tc.normalized > config.cut;
    }
  }
  return out;
}

Verbalizer calibrate(const MLMBackend& backend, const Verbalizer& v,
                     std::span<const LabeledExample> support, const PromptTemplate& tmpl,
                     const CalibrationConfig& config, WarningSink warn) {
  const auto scores = calibration_scores(backend, v, support, tmpl, config, std::move(warn));
  Verbalizer out = v;
  std::size_t i = 0;
  for (const auto& c : v.classes()) {
    std::vector<LabelTerm> kept;
    for (const auto& t : v.terms(c.id)) {
      const auto& tc = scores[i++];
      if (!tc.kept) continue;
      LabelTerm nt = t;
      nt.flags.set(StageFlag::calibrated);
      kept.push_back(std::move(nt));
    }
    out = replace_terms(out, c.id, std::move(kept));
  }
  return out;
}

Verbalizer strip_semantic_weights(const Verbalizer& v) {
  require_weighted(v, "strip_semantic_weights");
  Verbalizer out = v;
  for (const auto& c : v.classes()) {
    auto terms = v.terms(c.id);
    for (auto& t : terms) t.semantic_weight = 1.0;
    out = replace_terms(out, c.id, std::move(terms));
  }
  return out;
}

Verbalizer promote_unfiltered(const Verbalizer& v) {
  if (v.stage() != Stage::raw) throw PreconditionError("promote_unfiltered expects a raw verbalizer");
  Verbalizer out = v;
  for (const auto& c : v.classes()) {
    auto terms = v.terms(c.id);
    for (auto& t : terms) {
      t.semantic_weight = 1.0;
      t.flags.set(StageFlag::filtered);
    }
    out = replace_terms(out, c.id, std::move(terms));
  }
  return out;
}

// ---------------------------------------------------------------- soft verbalizer

SoftVerbalizer SoftVerbalizer::build(const MLMBackend& backend, const Verbalizer& v) {
  require_weighted(v, "build_soft_verbalizer");
  SoftVerbalizer s;
  s.num_classes_ = v.num_classes();
  s.dim_ = backend.hidden_size();
  s.params_.assign(s.num_classes_ * s.dim_, 0.0);
  for (const auto& c : v.classes()) {
    double total = 0.0;
    double* u = &s.params_[static_cast<std::size_t>(c.id) * s.dim_];
    for (const auto& t : v.terms(c.id)) {
      const double w = t.semantic_weight.value_or(1.0);
      const auto vec = term_vector(backend, t);
      for (std::size_t k = 0; k < s.dim_; ++k) u[k] += w * vec[k];
      total += w;
    }
    for (std::size_t k = 0; k < s.dim_; ++k) u[k] /= total;
  }
  return s;
}

std::span<const double> SoftVerbalizer::vector(std::size_t class_id) const {
  return std::span<const double>(params_).subspan(class_id * dim_, dim_);
}

ClassScores SoftVerbalizer::scores(std::span<const double> hidden) const {
  ClassScores s;
  s.logits.resize(num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) s.logits[c] = dot(vector(c), hidden);
  s.probabilities = softmax(s.logits);
  return s;
}

ClassScores SoftVerbalizer::classify(const MLMBackend& backend, std::string_view abstract,
                                     const PromptTemplate& tmpl) const {
  return scores(backend.mask_hidden(cloze_for(backend, tmpl, abstract)));
}

// ---------------------------------------------------------------- tuning

LossAndGradient cross_entropy_gradient(const MLMBackend& backend, const Verbalizer& v,
                                       std::span<const LabeledExample> batch,
                                       const PromptTemplate& tmpl, TermAggregation aggregation,
                                       const SoftVerbalizer* soft) {
  require_weighted(v, "cross_entropy_gradient");
  if (batch.empty()) throw PreconditionError("empty training batch");
  const std::size_t d = backend.hidden_size();
  const std::size_t n_classes = v.num_classes();
  LossAndGradient out;
  out.backend_grad.assign(backend.parameters().size(), 0.0);
  if (soft) out.soft_grad.assign(soft->parameters().size(), 0.0);

  const auto prepared = soft ? std::vector<std::vector<PreparedTerm>>{} : prepare_terms(backend, v);
  std::vector<std::vector<std::vector<double>>> term_grad(prepared.size());
  for (std::size_t c = 0; c < prepared.size(); ++c) {
    term_grad[c].assign(prepared[c].size(), std::vector<double>(d, 0.0));
  }

  std::vector<double> dh(d);
  for (const auto& ex : batch) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= n_classes) {
      throw PreconditionError("example '" + ex.id + "' has an unknown label");
    }
    const MaskForward state = backend.forward(cloze_for(backend, tmpl, ex.abstract));
    std::vector<std::vector<double>> dots;
    const std::vector<double> logits =
        soft ? soft->scores(state.hidden).logits : hard_logits(prepared, state.hidden, aggregation, &dots);
    const auto probs = softmax(logits);
    out.loss += -std::log(probs[static_cast<std::size_t>(ex.label)]);

    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double dz = probs[c] - (static_cast<int>(c) == ex.label ? 1.0 : 0.0);
      if (soft) {
        const auto u = soft->vector(c);
        double* gu = &out.soft_grad[c * d];
        for (std::size_t k = 0; k < d; ++k) {
          gu[k] += dz * state.hidden[k];
          dh[k] += dz * u[k];
        }
        continue;
      }
      const auto coef = term_coefficients(prepared[c], dots[c], aggregation);
      for (std::size_t t = 0; t < prepared[c].size(); ++t) {
        const double g = dz * coef[t];
        if (g == 0.0) continue;
        const auto& vec = prepared[c][t].vector;
        auto& gv = term_grad[c][t];
        for (std::size_t k = 0; k < d; ++k) {
          dh[k] += g * vec[k];
          gv[k] += g * state.hidden[k];
        }
      }
    }
    backend.backward(state, dh, out.backend_grad);
  }

  std::vector<double> scaled(d);
  for (std::size_t c = 0; c < prepared.size(); ++c) {
    for (std::size_t t = 0; t < prepared[c].size(); ++t) {
      const auto& toks = prepared[c][t].tokens;
      const double inv = 1.0 / static_cast<double>(toks.size());
      for (std::size_t k = 0; k < d; ++k) scaled[k] = term_grad[c][t][k] * inv;
      for (TokenId id : toks) backend.accumulate_embedding_grad(id, scaled, out.backend_grad);
    }
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv_n;
  for (auto& g : out.backend_grad) g *= inv_n;
  for (auto& g : out.soft_grad) g *= inv_n;
  return out;
}

std::vector<int> predict(const MLMBackend& backend, const Verbalizer& v,
                         std::span<const LabeledExample> examples, const PromptTemplate& tmpl,
                         TermAggregation aggregation, const SoftVerbalizer* soft) {
  require_weighted(v, "predict");
  const auto prepared = soft ? std::vector<std::vector<PreparedTerm>>{} : prepare_terms(backend, v);
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto hidden = backend.mask_hidden(cloze_for(backend, tmpl, ex.abstract));
    const auto logits = soft ? soft->scores(hidden).logits : hard_logits(prepared, hidden, aggregation);
    out.push_back(static_cast<int>(argmax(logits)));
  }
  return out;
}

namespace {

double accuracy_of(const std::vector<int>& predicted, std::span<const LabeledExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) hits += predicted[i] == examples[i].label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

}  // namespace

TuningResult fine_tune(MLMBackend& backend, const Verbalizer& v, const FewShotSplit& split,
                       const TuningConfig& config, const PromptTemplate& tmpl, SoftVerbalizer* soft) {
  require_weighted(v, "fine_tune");
  if (split.train.empty()) throw PreconditionError("fine_tune needs a non-empty training split");
  if (config.batch_size <= 0 || config.epochs < 0) throw ConfigError("invalid tuning config");
  if (config.freeze_backend && !soft) {
    throw ConfigError("freeze_backend leaves nothing to tune without a soft verbalizer");
  }

  TuningResult result;
  Adam backend_opt(backend.parameters().size(), config.learning_rate);
  std::optional<Adam> soft_opt;
  if (soft) soft_opt.emplace(soft->parameters().size(), config.learning_rate);

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  const auto& val = split.val.empty() ? split.train : split.val;

  Checkpoint best_backend;
  std::vector<double> best_soft;
  double best_acc = -1.0;
  std::vector<LabeledExample> batch;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(split.train[order[i]]);
      auto lg = cross_entropy_gradient(backend, v, batch, tmpl, config.aggregation, soft);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + " (seed " +
                            std::to_string(config.seed) + ")");
      }
      loss_sum += lg.loss;
      ++batches;
      if (!config.freeze_backend) backend_opt.step(backend.parameters(), lg.backend_grad);
      if (soft) soft_opt->step(soft->parameters(), lg.soft_grad);
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)));
    const double acc = accuracy_of(predict(backend, v, val, tmpl, config.aggregation, soft), val);
    result.val_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch;
      best_backend = checkpoint(backend);
      if (soft) best_soft.assign(soft->parameters().begin(), soft->parameters().end());
    }
  }
  if (result.best_epoch > 0) {
    restore(backend, best_backend);
    if (soft) std::copy(best_soft.begin(), best_soft.end(), soft->parameters().begin());
    result.best_val_accuracy = best_acc;
  }
  return result;
}

int zero_shot_classify(const MLMBackend& backend, const Verbalizer& v, std::string_view abstract,
                       const PromptTemplate& tmpl, TermAggregation aggregation) {
  const std::string before = parameter_hash(backend);
  const auto scores = class_logits(backend, v, abstract, tmpl, aggregation);
  if (parameter_hash(backend) != before) {
    throw std::logic_error("zero-shot classification mutated backend parameters");
  }
  return static_cast<int>(scores.predicted());
}

}  // namespace kverb
