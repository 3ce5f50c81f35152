#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "kverb/errors.hpp"
#include "kverb/harness.hpp"
#include "kverb/pipeline.hpp"
#include "kverb/prompt_classifier.hpp"
#include "kverb/rng.hpp"
#include "kverb/text.hpp"
#include "kverb/tiny_mlm.hpp"
#include "oracles.hpp"
#include "toy_data.hpp"

using namespace kverb;
using namespace kverb::testing;

namespace {

/// Hand-wired backend: one-hot-ish embeddings, per-prompt hidden states and
/// vocabulary logits chosen by the test.
class StubBackend final : public MLMBackend {
 public:
  std::vector<std::string> vocab{"[UNK]", "[MASK]"};
  std::size_t dim = 2;
  mutable std::vector<double> params = std::vector<double>(4, 0.0);  // vocab x dim embeddings
  /// Keyed by a word that must appear in the prompt.
  std::map<std::string, std::vector<double>> hidden_by_key, logits_by_key;
  bool mutate_on_forward = false;

  TokenId add(const std::string& word, std::vector<double> embedding) {
    vocab.push_back(word);
    params.insert(params.end(), embedding.begin(), embedding.end());
    return static_cast<TokenId>(vocab.size() - 1);
  }

  std::unique_ptr<MLMBackend> clone() const override { return std::make_unique<StubBackend>(*this); }
  std::string mask_token() const override { return "[MASK]"; }
  std::vector<TokenId> tokenize(std::string_view text) const override {
    std::vector<TokenId> ids;
    for (const auto& w : word_tokens(text)) {
      TokenId id = 0;
      for (std::size_t i = 0; i < vocab.size(); ++i) {
        if (vocab[i] == w) id = static_cast<TokenId>(i);
      }
      ids.push_back(id);
    }
    return ids;
  }
  std::size_t vocab_size() const override { return vocab.size(); }
  std::size_t hidden_size() const override { return dim; }
  std::span<const double> token_embedding(TokenId id) const override {
    return std::span<const double>(params).subspan(static_cast<std::size_t>(id) * dim, dim);
  }
  std::vector<double> mask_logits(std::string_view prompt) const override {
    return lookup(logits_by_key, prompt, std::vector<double>(vocab.size(), 0.0));
  }
  MaskForward forward(std::string_view prompt) const override {
    if (mutate_on_forward) params[0] += 1.0;
    MaskForward f;
    f.hidden = lookup(hidden_by_key, prompt, std::vector<double>(dim, 0.0));
    return f;
  }
  void backward(const MaskForward&, std::span<const double>, std::span<double>) const override {}
  void accumulate_embedding_grad(TokenId, std::span<const double>, std::span<double>) const override {}
  std::span<double> parameters() override { return params; }
  std::span<const double> parameters() const override { return params; }

 private:
  static std::vector<double> lookup(const std::map<std::string, std::vector<double>>& table,
                                    std::string_view prompt, std::vector<double> fallback) {
    const auto words = word_tokens(prompt);
    for (const auto& [key, value] : table) {
      for (const auto& w : words) {
        if (w == key) return value;
      }
    }
    return fallback;
  }
};

std::vector<std::string> small_texts() {
  return {"alpha beta gamma", "delta epsilon", "zeta eta theta", "[MASK]"};
}

std::vector<ClassLabel> three_classes() {
  return {make_class(0, "Alpha"), make_class(1, "Delta"), make_class(2, "Zeta")};
}

Verbalizer small_verbalizer(Rng& rng) {
  auto w = [&] { return 0.05 + rng.uniform01(); };
  return weighted_verbalizer(three_classes(), {{{"beta", w()}, {"gamma", w()}, {"beta gamma", w()}},
                                               {{"epsilon", w()}},
                                               {{"eta theta", w()}, {"theta", w()}}});
}

std::string random_abstract(Rng& rng) {
  static const std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "epsilon",
                                              "zeta",  "eta",  "theta", "unknown"};
  std::string s;
  const auto n = 3 + rng.uniform_index(6);
  for (std::size_t i = 0; i < n; ++i) s += words[rng.uniform_index(words.size())] + " ";
  return s;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

const PromptTemplate kBare = PromptTemplate::parse("{text} {mask}");

}  // namespace

TEST_CASE("softmax matches hand-computed values") {
  const std::vector<double> logits{1.0, 2.0};
  const auto p = softmax(logits);
  CHECK(p[0] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(softmax(std::vector<double>{-3.5})[0] == 1.0);

  const auto big = softmax(std::vector<double>{1000.0, 1001.0});
  CHECK(big[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
}

TEST_CASE("property: softmax is a distribution") {
  Rng rng(1);
  for (std::size_t n : {2u, 7u, 19u, 53u}) {
    for (int trial = 0; trial < 250; ++trial) {
      std::vector<double> logits(n);
      for (auto& x : logits) x = 20.0 * rng.uniform01() - 10.0;
      const auto p = softmax(logits);
      const double total = std::accumulate(p.begin(), p.end(), 0.0);
      CHECK(std::abs(total - 1.0) < 1e-6);
      for (double x : p) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
      }
      const std::vector<long double> wide(logits.begin(), logits.end());
      const auto oracle = oracle_softmax(wide);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(p[i] - static_cast<double>(oracle[i])) < 1e-12);
    }
  }
}

TEST_CASE("argmax breaks ties toward the lowest id") {
  CHECK(argmax(std::vector<double>{0.3, 0.7, 0.7}) == 1);
  CHECK(argmax(std::vector<double>{1.0, 1.0, 1.0}) == 0);
  ClassScores s;
  s.logits = {2.0, 2.0};
  CHECK(s.predicted() == 0);
}

TEST_CASE("aggregation names parse") {
  CHECK(parse_term_aggregation("mean") == TermAggregation::mean);
  CHECK(parse_term_aggregation("weighted-mean") == TermAggregation::weighted_mean);
  CHECK(to_string(TermAggregation::max) == "max");
  CHECK_THROWS(parse_term_aggregation("median"));
}

TEST_CASE("term vectors: single token, permutation, repeats") {
  const auto texts = small_texts();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const TinyMLM m = random_tiny_mlm(texts, 6, seed);
    const auto beta = m.token_embedding(m.tokenize("beta")[0]);
    const auto single = term_vector(m, "beta");
    for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(single[k] - beta[k]) < 1e-12);

    const auto abc = term_vector(m, "alpha beta gamma");
    const auto cab = term_vector(m, "gamma alpha beta");
    const auto repeated = term_vector(m, "beta beta beta");
    for (std::size_t k = 0; k < 6; ++k) {
      CHECK(std::abs(abc[k] - cab[k]) < 1e-12);
      CHECK(std::abs(repeated[k] - beta[k]) < 1e-12);
    }
  }
  const TinyMLM m = random_tiny_mlm(texts, 4, 1);
  CHECK_THROWS_AS(term_vector(m, " ,. "), PreconditionError);
}

TEST_CASE("class logits match the oracle and scale with weights") {
  const auto texts = small_texts();
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const TinyMLM m = random_tiny_mlm(texts, 5, 100 + static_cast<std::uint64_t>(trial));
    const Verbalizer v = small_verbalizer(rng);
    const std::string abs = random_abstract(rng);
    const auto s = class_logits(m, v, abs, kBare);
    const auto o = oracle_class_logits(m, v, abs, kBare);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(s.logits[c] - static_cast<double>(o[c])) < 1e-10);
    CHECK(s.predicted() == oracle_argmax(o));
  }
  const TinyMLM m = random_tiny_mlm(texts, 5, 1);
  const Verbalizer raw = new_verbalizer(three_classes());
  CHECK_THROWS_AS(class_logits(m, raw, "alpha", kBare), PreconditionError);
  Verbalizer v = small_verbalizer(rng);
  CHECK_THROWS_AS(class_logits(m, v, "   ", kBare), PreconditionError);
}

TEST_CASE("max and weighted-mean aggregation") {
  StubBackend b;
  b.add("x", {1.0, 0.0});
  b.add("y", {0.0, 1.0});
  b.add("a", {0.0, 0.0});
  b.add("c", {0.0, 0.0});
  b.hidden_by_key["q"] = {2.0, 3.0};
  const Verbalizer v = weighted_verbalizer({make_class(0, "A"), make_class(1, "C")},
                                           {{{"x", 0.5}, {"y", 0.25}}, {}});
  // Class 0 term scores: a -> 0, x -> 2 * 0.5 = 1, y -> 3 * 0.25 = 0.75.
  const auto mean = class_logits(b, v, "q", kBare, TermAggregation::mean);
  CHECK(mean.logits[0] == doctest::Approx(1.75 / 3));
  const auto max = class_logits(b, v, "q", kBare, TermAggregation::max);
  CHECK(max.logits[0] == doctest::Approx(1.0));
  const auto wmean = class_logits(b, v, "q", kBare, TermAggregation::weighted_mean);
  CHECK(wmean.logits[0] == doctest::Approx(1.75 / 1.75));
  CHECK(mean.logits[1] == 0.0);
}

TEST_CASE("property: scaling every semantic weight keeps the prediction") {
  const auto texts = small_texts();
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const TinyMLM m = random_tiny_mlm(texts, 4, 1000 + static_cast<std::uint64_t>(trial));
    const Verbalizer v = small_verbalizer(rng);
    const std::string abs = random_abstract(rng);
    const auto base = class_logits(m, v, abs, kBare).predicted();
    for (double c : {0.1, 1.0, 3.0, 10.0}) {
      Verbalizer scaled = v;
      for (const auto& cls : v.classes()) {
        auto terms = v.terms(cls.id);
        for (auto& t : terms) t.semantic_weight = *t.semantic_weight * c;
        scaled = replace_terms(scaled, cls.id, terms);
      }
      CHECK(class_logits(m, scaled, abs, kBare).predicted() == base);
    }
  }
}

TEST_CASE("calibration agrees with a brute-force recomputation") {
  const auto texts = small_texts();
  Rng rng(2024);
  int removed = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const TinyMLM m = random_tiny_mlm(texts, 3, 5000 + static_cast<std::uint64_t>(trial), 1.5);
    REQUIRE(m.vocab_size() <= 10);
    const Verbalizer v = small_verbalizer(rng);
    std::vector<LabeledExample> support;
    const auto n = 1 + rng.uniform_index(5);
    for (std::size_t i = 0; i < n; ++i) {
      support.push_back({"s" + std::to_string(i), random_abstract(rng), static_cast<int>(rng.uniform_index(3))});
    }
    for (bool gold : {false, true}) {
      CalibrationConfig config;
      config.use_gold_labels = gold;
      const Verbalizer out = calibrate(m, v, support, kBare, config, nullptr);
      CHECK(out.stage() == Stage::calibrated);
      for (const auto& d : oracle_calibrate(m, v, support, kBare, gold)) {
        bool present = false;
        for (const auto& t : out.terms(d.class_id)) present = present || t.text == d.text;
        CHECK(present == d.kept);
        removed += d.kept ? 0 : 1;
      }
    }
  }
  CHECK(removed > 0);
}

TEST_CASE("calibration removes a term sitting exactly at the cut") {
  StubBackend b;
  const TokenId a = b.add("a", {0, 0});
  const TokenId bb = b.add("b", {0, 0});
  const TokenId c = b.add("c", {0, 0});
  b.add("first", {0, 0});
  b.add("second", {0, 0});
  b.add("topic", {0, 0});
  b.add("other", {0, 0});
  auto logits = [&](double la, double lb, double lc) {
    std::vector<double> l(b.vocab.size(), -1e4);
    l[static_cast<std::size_t>(a)] = la;
    l[static_cast<std::size_t>(bb)] = lb;
    l[static_cast<std::size_t>(c)] = lc;
    return l;
  };
  // p_a = 1/2 on both examples; p_b = 1/2 on the first and 0 on the second.
  b.logits_by_key["first"] = logits(0, 0, -1e4);
  b.logits_by_key["second"] = logits(0, -1e4, 0);
  const Verbalizer v = weighted_verbalizer({make_class(0, "Topic"), make_class(1, "Other")},
                                           {{{"a", 0.9}, {"b", 0.9}}, {}});
  const std::vector<LabeledExample> support{{"1", "first", 0}, {"2", "second", 1}};
  CalibrationConfig config;
  config.use_gold_labels = true;
  std::vector<std::string> warnings;
  const auto scores = calibration_scores(b, v, support, kBare, config,
                                         [&](const std::string& w) { warnings.push_back(w); });
  REQUIRE(scores.size() == 4);
  CHECK(*scores[1].ratio == 1.0);
  CHECK(*scores[2].ratio == 2.0);
  CHECK(*scores[1].normalized == 0.5);
  CHECK_FALSE(scores[1].kept);
  CHECK(scores[2].kept);
  CHECK(scores[0].kept);  // seed with zero prior stays
  const Verbalizer out = calibrate(b, v, support, kBare, config, nullptr);
  REQUIRE(out.terms(0).size() == 2);
  CHECK(out.terms(0)[1].text == "b");

  config.cut = 0.49;
  CHECK(calibrate(b, v, support, kBare, config, nullptr).terms(0).size() == 3);
}

TEST_CASE("calibration keeps classes with no support uncalibrated and warns") {
  const auto texts = small_texts();
  const TinyMLM m = random_tiny_mlm(texts, 3, 9);
  Rng rng(9);
  const Verbalizer v = small_verbalizer(rng);
  const std::vector<LabeledExample> support{{"1", "alpha beta", 0}};
  CalibrationConfig config;
  config.use_gold_labels = true;
  std::vector<std::string> warnings;
  const Verbalizer out = calibrate(m, v, support, kBare, config,
                                   [&](const std::string& w) { warnings.push_back(w); });
  CHECK(out.terms(1).size() == v.terms(1).size());
  CHECK(out.terms(2).size() == v.terms(2).size());
  CHECK(warnings.size() == 2);
  CHECK_THROWS_AS(calibrate(m, v, std::vector<LabeledExample>{}, kBare, config, nullptr), PreconditionError);
  CHECK_THROWS_AS(calibrate(m, out, support, kBare, config, nullptr), PreconditionError);
}

TEST_CASE("seed-only classes pass calibration unchanged") {
  const auto texts = small_texts();
  const TinyMLM m = random_tiny_mlm(texts, 3, 4);
  const Verbalizer v = weighted_verbalizer(three_classes(), {{}, {}, {}});
  const std::vector<LabeledExample> support{{"1", "alpha", 0}, {"2", "delta", 1}, {"3", "zeta", 2}};
  const Verbalizer out = calibrate(m, v, support, kBare, {}, nullptr);
  for (int c = 0; c < 3; ++c) {
    REQUIRE(out.terms(c).size() == 1);
    CHECK(out.terms(c)[0].text == v.terms(c)[0].text);
  }
}

TEST_CASE("ablation helpers") {
  Verbalizer raw = new_verbalizer(three_classes());
  raw = add_terms(raw, 0, std::vector<LabelTerm>{retrieved_term("beta", 2.0, TermSource::related_words)});
  const Verbalizer promoted = promote_unfiltered(raw);
  CHECK(promoted.stage() == Stage::filtered);
  CHECK(promoted.total_terms() == raw.total_terms());
  for (const auto& t : promoted.terms(0)) CHECK(*t.semantic_weight == 1.0);
  CHECK_THROWS_AS(promote_unfiltered(promoted), PreconditionError);

  Rng rng(3);
  const Verbalizer stripped = strip_semantic_weights(small_verbalizer(rng));
  for (const auto& c : stripped.classes()) {
    for (const auto& t : stripped.terms(c.id)) CHECK(*t.semantic_weight == 1.0);
  }
  CHECK_THROWS_AS(strip_semantic_weights(raw), PreconditionError);
}

TEST_CASE("soft verbalizer starts at the weighted mean of term vectors") {
  StubBackend b;
  b.add("a", {1.0, 0.0});
  b.add("c", {0.0, 0.0});
  b.add("x", {1.0, 2.0});
  b.add("y", {3.0, -1.0});
  const Verbalizer v = weighted_verbalizer({make_class(0, "A"), make_class(1, "C")},
                                           {{{"x", 0.5}, {"y", 2.0}}, {}});
  const SoftVerbalizer s = SoftVerbalizer::build(b, v);
  // (1*[1,0] + 0.5*[1,2] + 2*[3,-1]) / 3.5
  CHECK(s.vector(0)[0] == doctest::Approx(7.5 / 3.5));
  CHECK(s.vector(0)[1] == doctest::Approx(-1.0 / 3.5));
  CHECK(s.vector(1)[0] == 0.0);
  const std::vector<double> h{1.0, 1.0};
  const auto scores = s.scores(h);
  CHECK(scores.logits[0] == doctest::Approx(6.5 / 3.5));
  CHECK(scores.predicted() == 0);
}

TEST_CASE("gradient check against central differences") {
  const auto texts = small_texts();
  Rng rng(123);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    TinyMLM m = random_tiny_mlm(texts, 3, 700 + static_cast<std::uint64_t>(trial));
    const Verbalizer v = small_verbalizer(rng);
    std::vector<LabeledExample> batch;
    for (int i = 0; i < 3; ++i) {
      batch.push_back({std::to_string(i), random_abstract(rng), static_cast<int>(rng.uniform_index(3))});
    }
    const auto lg = cross_entropy_gradient(m, v, batch, kBare, TermAggregation::mean);
    CHECK(lg.loss == doctest::Approx(static_cast<double>(oracle_loss(m, v, batch, kBare))).epsilon(1e-10));
    auto params = m.parameters();
    std::vector<double> numeric(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      const long double up = oracle_loss(m, v, batch, kBare);
      params[i] = saved - h;
      const long double down = oracle_loss(m, v, batch, kBare);
      params[i] = saved;
      numeric[i] = static_cast<double>((up - down) / (2 * h));
    }
    CHECK(rel_error(lg.backend_grad, numeric) < 1e-4);
  }
}

TEST_CASE("gradient check for the soft verbalizer vectors") {
  const auto texts = small_texts();
  Rng rng(321);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    TinyMLM m = random_tiny_mlm(texts, 3, 900 + static_cast<std::uint64_t>(trial));
    const Verbalizer v = small_verbalizer(rng);
    SoftVerbalizer s = SoftVerbalizer::build(m, v);
    std::vector<LabeledExample> batch;
    for (int i = 0; i < 3; ++i) {
      batch.push_back({std::to_string(i), random_abstract(rng), static_cast<int>(rng.uniform_index(3))});
    }
    auto loss = [&] {
      long double total = 0;
      for (const auto& ex : batch) {
        const auto scores = s.classify(m, ex.abstract, kBare);
        const std::vector<long double> wide(scores.logits.begin(), scores.logits.end());
        total -= std::log(oracle_softmax(wide)[static_cast<std::size_t>(ex.label)]);
      }
      return total / batch.size();
    };
    const auto lg = cross_entropy_gradient(m, v, batch, kBare, TermAggregation::mean, &s);
    for (auto* space : {&lg.backend_grad, &lg.soft_grad}) {
      auto params = space == &lg.soft_grad ? s.parameters() : m.parameters();
      std::vector<double> numeric(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const long double up = loss();
        params[i] = saved - h;
        const long double down = loss();
        params[i] = saved;
        numeric[i] = static_cast<double>((up - down) / (2 * h));
      }
      CHECK(rel_error(*space, numeric) < 1e-4);
    }
  }
}

TEST_CASE("fine_tune on the toy corpus") {
  const ToyCorpus corpus = make_toy_corpus(20, 10, 1);
  Dataset pool{corpus.classes, corpus.train, 0};
  Verbalizer v = weighted_verbalizer(corpus.classes, {{{"cipher", 0.9}, {"encryption", 0.8}},
                                                      {{"sql", 0.9}, {"schema", 0.7}},
                                                      {{"robot", 0.9}, {"kinematics", 0.6}}});
  TinyMLMConfig model;
  model.dim = 16;
  const TinyMLM base = build_backend(v, pool, PromptTemplate::canonical(), model, PretrainConfig{});
  const FewShotSplit split = sample_split(pool, 5, 1);

  TuningConfig config;
  config.epochs = 8;
  config.learning_rate = 0.01;
  config.seed = 1;

  SUBCASE("zero epochs leaves the parameters untouched") {
    TinyMLM m = base;
    TuningConfig none = config;
    none.epochs = 0;
    const auto before = parameter_hash(m);
    const auto r = fine_tune(m, v, split, none);
    CHECK(r.best_epoch == 0);
    CHECK(parameter_hash(m) == before);
  }
  SUBCASE("tuning fits the split, restores the best epoch, and is deterministic") {
    TinyMLM m1 = base, m2 = base;
    const auto r1 = fine_tune(m1, v, split, config);
    const auto r2 = fine_tune(m2, v, split, config);
    CHECK(parameter_hash(m1) == parameter_hash(m2));
    CHECK(r1.val_accuracy == r2.val_accuracy);
    REQUIRE(r1.best_epoch >= 1);
    const double best = *std::max_element(r1.val_accuracy.begin(), r1.val_accuracy.end());
    CHECK(r1.best_val_accuracy == best);
    CHECK(r1.val_accuracy[static_cast<std::size_t>(r1.best_epoch - 1)] == best);
    for (int e = 0; e + 1 < r1.best_epoch; ++e) CHECK(r1.val_accuracy[static_cast<std::size_t>(e)] < best);
    const auto preds = predict(m1, v, split.val, PromptTemplate::canonical());
    CHECK(evaluate(preds, gold_labels(split.val)) == best);
    CHECK(evaluate(predict(m1, v, corpus.test, PromptTemplate::canonical()), gold_labels(corpus.test)) >= 0.9);
  }
  SUBCASE("soft verbalizer with a frozen backend") {
    TinyMLM m = base;
    SoftVerbalizer s = SoftVerbalizer::build(m, v);
    TuningConfig frozen = config;
    frozen.freeze_backend = true;
    const auto before = parameter_hash(m);
    fine_tune(m, v, split, frozen, PromptTemplate::canonical(), &s);
    CHECK(parameter_hash(m) == before);
    CHECK_THROWS_AS(fine_tune(m, v, split, frozen), ConfigError);
  }
  SUBCASE("a diverging loss is reported") {
    Verbalizer huge = v;
    auto terms = huge.terms(0);
    for (auto& t : terms) t.semantic_weight = 1e308;
    huge = replace_terms(huge, 0, terms);
    TinyMLM m = base;
    CHECK_THROWS_AS(fine_tune(m, huge, split, config), TrainingError);
  }
}

TEST_CASE("zero-shot classification is pure") {
  const auto texts = small_texts();
  const TinyMLM m = random_tiny_mlm(texts, 4, 42);
  Rng rng(42);
  const Verbalizer v = small_verbalizer(rng);
  const auto before = parameter_hash(m);
  for (int i = 0; i < 100; ++i) {
    const std::string abs = random_abstract(rng);
    const int y = zero_shot_classify(m, v, abs, kBare);
    CHECK(static_cast<std::size_t>(y) == oracle_argmax(oracle_class_logits(m, v, abs, kBare)));
  }
  CHECK(parameter_hash(m) == before);

  StubBackend b;
  b.add("a", {1.0, 0.0});
  b.add("c", {0.0, 1.0});
  b.hidden_by_key["q"] = {0.0, 5.0};
  const Verbalizer planted = weighted_verbalizer({make_class(0, "A"), make_class(1, "C")}, {{}, {}});
  CHECK(zero_shot_classify(b, planted, "q", kBare) == 1);
  b.mutate_on_forward = true;
  CHECK_THROWS_AS(zero_shot_classify(b, planted, "q", kBare), std::logic_error);
}
