// Acceptance checks 1-10. Prints one PASS/FAIL line per check and exits
// nonzero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kverb/errors.hpp"
#include "kverb/fileio.hpp"
#include "kverb/harness.hpp"
#include "kverb/kb_retrieval.hpp"
#include "kverb/nli_filter.hpp"
#include "kverb/pipeline.hpp"
#include "kverb/prompt_classifier.hpp"
#include "kverb/rng.hpp"
#include "kverb/text.hpp"
#include "mock_kb.hpp"
#include "oracles.hpp"
#include "toy_pipeline.hpp"

using namespace kverb;
using namespace kverb::testing;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

const PromptTemplate& bare() {
  static const PromptTemplate t = PromptTemplate::parse("{text} {mask}");
  return t;
}

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

Outcome exp_normalization() {
  Outcome o;
  Rng rng(1);
  for (std::size_t n : {2u, 7u, 19u, 53u}) {
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> logits(n);
      const double spread = 1.0 + 14.0 * rng.uniform01();
      for (auto& x : logits) x = spread * (2.0 * rng.uniform01() - 1.0);
      const auto p = softmax(logits);
      double total = 0;
      for (double x : p) {
        total += x;
        o.require(x > 0.0 && x < 1.0, "probability outside (0,1) at N=" + std::to_string(n));
      }
      o.require(std::abs(total - 1.0) <= 1e-6, "sum off by more than 1e-6 at N=" + std::to_string(n));
    }
  }
  o.detail = o.pass ? "4000 vectors, N in {2,7,19,53}" : o.detail;
  return o;
}

Outcome argmax_invariance() {
  Outcome o;
  const auto texts = small_texts();
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const TinyMLM m = random_tiny_mlm(texts, 4, 1000 + static_cast<std::uint64_t>(trial));
    const Verbalizer v = small_verbalizer(rng);
    const std::string abs = random_abstract(rng);
    const auto base = class_logits(m, v, abs, bare()).predicted();
    for (double c : {0.1, 1.0, 3.0, 10.0}) {
      Verbalizer scaled = v;
      for (const auto& cls : v.classes()) {
        auto terms = v.terms(cls.id);
        for (auto& t : terms) t.semantic_weight = *t.semantic_weight * c;
        scaled = replace_terms(scaled, cls.id, terms);
      }
      o.require(class_logits(m, scaled, abs, bare()).predicted() == base,
                "prediction changed at case " + std::to_string(trial));
    }
  }
  if (o.pass) o.detail = "200 cases x 4 scales";
  return o;
}

Outcome calibration_oracle() {
  Outcome o;
  const auto texts = small_texts();
  Rng rng(2024);
  std::size_t decisions = 0, removed = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const TinyMLM m = random_tiny_mlm(texts, 3, 5000 + static_cast<std::uint64_t>(trial), 1.5);
    o.require(m.vocab_size() <= 10, "vocabulary above 10 tokens");
    const Verbalizer v = small_verbalizer(rng);
    std::vector<LabeledExample> support;
    const auto n = 1 + rng.uniform_index(5);
    for (std::size_t i = 0; i < n; ++i) {
      support.push_back({"s" + std::to_string(i), random_abstract(rng), static_cast<int>(rng.uniform_index(3))});
    }
    for (bool gold : {false, true}) {
      CalibrationConfig config;
      config.use_gold_labels = gold;
      const Verbalizer out = calibrate(m, v, support, bare(), config, nullptr);
      for (const auto& d : oracle_calibrate(m, v, support, bare(), gold)) {
        bool present = false;
        for (const auto& t : out.terms(d.class_id)) present = present || t.text == d.text;
        o.require(present == d.kept, "term '" + d.text + "' disagrees at case " + std::to_string(trial));
        ++decisions;
        removed += d.kept ? 0 : 1;
      }
    }
  }
  o.require(removed > 0, "oracle never removed a term; the cut was not exercised");
  if (o.pass) o.detail = std::to_string(decisions) + " term decisions, " + std::to_string(removed) + " removals";
  return o;
}

Outcome filter_rule() {
  Outcome o;
  const FilterConfig d;
  o.require(d.mu_be == 0.5 && d.mu_ce == 0.1, "default thresholds are not (0.5, 0.1)");
  std::vector<double> grid;
  for (int i = -4; i <= 20; ++i) grid.push_back(i / 20.0);
  for (double mu_be : grid) {
    for (double mu_ce : grid) {
      const FilterConfig lo{mu_be, mu_ce, false};
      const FilterConfig be_up{mu_be + 0.05, mu_ce, false};
      const FilterConfig ce_down{mu_be, mu_ce - 0.05, false};
      for (double be : grid) {
        for (double ce : grid) {
          const bool k = keep_term(be, ce, lo);
          o.require(k == (be > mu_be && be > 0.0 && ce < mu_ce), "membership mismatch");
          o.require(!keep_term(be, ce, be_up) || k, "raising mu_be admitted a term");
          o.require(!keep_term(be, ce, ce_down) || k, "lowering mu_ce admitted a term");
        }
      }
      if (mu_be > 0.0 && mu_ce > 0.0) {
        o.require(!keep_term(mu_be, 0.0, lo), "be == mu_be kept");
        o.require(!keep_term(1.0, mu_ce, lo), "ce == mu_ce kept");
      }
    }
  }
  if (o.pass) o.detail = "25x25 threshold grid over 25x25 scores";
  return o;
}

Outcome mean_embedding() {
  Outcome o;
  const auto texts = small_texts();
  Rng rng(55);
  const std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"};
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const TinyMLM m = random_tiny_mlm(texts, 8, seed);
    const std::size_t d = m.hidden_size();
    const std::string& w = words[rng.uniform_index(words.size())];
    const auto e = m.token_embedding(m.tokenize(w)[0]);
    const auto single = term_vector(m, w);
    for (std::size_t k = 0; k < d; ++k) o.require(std::abs(single[k] - e[k]) <= 1e-6, "single-token idempotence");

    std::vector<std::string> parts;
    const auto n = 2 + rng.uniform_index(4);
    for (std::size_t i = 0; i < n; ++i) parts.push_back(words[rng.uniform_index(words.size())]);
    auto shuffled = parts;
    rng.shuffle(shuffled);
    const auto a = term_vector(m, join(parts, " "));
    const auto b = term_vector(m, join(shuffled, " "));
    for (std::size_t k = 0; k < d; ++k) o.require(std::abs(a[k] - b[k]) <= 1e-6, "permutation invariance");

    std::vector<std::string> repeated(1 + rng.uniform_index(5), w);
    const auto r = term_vector(m, join(repeated, " "));
    for (std::size_t k = 0; k < d; ++k) o.require(std::abs(r[k] - e[k]) <= 1e-6, "repeat-token collapse");
  }
  if (o.pass) o.detail = "200 random embedding tables";
  return o;
}

Outcome gradient_check() {
  Outcome o;
  const auto texts = small_texts();
  Rng rng(123);
  const double h = 1e-6;
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    TinyMLM m = random_tiny_mlm(texts, 3, 700 + static_cast<std::uint64_t>(trial));
    const Verbalizer v = small_verbalizer(rng);
    std::vector<LabeledExample> batch;
    for (int i = 0; i < 3; ++i) {
      batch.push_back({std::to_string(i), random_abstract(rng), static_cast<int>(rng.uniform_index(3))});
    }
    const auto lg = cross_entropy_gradient(m, v, batch, bare(), TermAggregation::mean);
    auto params = m.parameters();
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      const long double up = oracle_loss(m, v, batch, bare());
      params[i] = saved - h;
      const long double down = oracle_loss(m, v, batch, bare());
      params[i] = saved;
      const double numeric = static_cast<double>((up - down) / (2 * h));
      diff += (numeric - lg.backend_grad[i]) * (numeric - lg.backend_grad[i]);
      na += lg.backend_grad[i] * lg.backend_grad[i];
      nn += numeric * numeric;
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    worst = std::max(worst, rel);
    o.require(rel < 1e-4, "relative error " + std::to_string(rel) + " at case " + std::to_string(trial));
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "50 cases, worst relative error %.2e", worst);
  if (o.pass) o.detail = buf;
  return o;
}

Outcome end_to_end() {
  Outcome o;
  TempDir dir("accept-e2e");
  MockKBServer server;
  ToyPipeline toy = make_toy_pipeline(dir.path(), server);
  std::ostringstream log;

  PipelineConfig full = toy.config;
  const auto few = run_pipeline(full, log, nullptr);
  PipelineConfig zero = toy.config;
  zero.mode = ProtocolMode::zero_shot;
  const auto zs = run_pipeline(zero, log, nullptr);
  PipelineConfig no_ss = toy.config;
  no_ss.ss = false;
  const auto ablated = run_pipeline(no_ss, log, nullptr);
  if (few.reports.size() != 1 || zs.reports.size() != 1 || ablated.reports.size() != 1) {
    o.require(false, "expected one report per run");
    return o;
  }
  const double f = few.reports[0].mean, z = zs.reports[0].mean, a = ablated.reports[0].mean;
  o.require(few.reports[0].seeds.size() == 5 && few.reports[0].shots == 5, "not a K=5, 5-seed run");
  o.require(f >= 0.9, "few-shot mean below 0.9");
  o.require(z > 1.0 / 3.0 + 0.2, "zero-shot accuracy not above 1/3 + 0.2");
  o.require(a <= f + 0.05, "w/o SS beats full by more than 0.05");
  char buf[160];
  std::snprintf(buf, sizeof buf, "few-shot %.4f, zero-shot %.4f, w/o SS %.4f", f, z, a);
  o.detail = o.pass ? std::string(buf) : o.detail + " (" + buf + ")";
  return o;
}

Outcome zero_shot_purity() {
  Outcome o;
  const ToyCorpus corpus = make_toy_corpus(10, 40, 3);
  const Dataset pool{corpus.classes, corpus.train, 0};
  const Verbalizer v = weighted_verbalizer(corpus.classes, {{{"cipher", 0.9}}, {{"sql", 0.8}}, {{"robot", 0.7}}});
  TinyMLMConfig model;
  model.dim = 8;
  const TinyMLM backend = build_backend(v, pool, PromptTemplate::canonical(), model, PretrainConfig{});
  const std::string before = parameter_hash(backend);
  for (std::size_t i = 0; i < 100; ++i) zero_shot_classify(backend, v, corpus.test[i].abstract);
  o.require(parameter_hash(backend) == before, "parameter hash changed");
  if (o.pass) o.detail = "100 inputs, hash " + before.substr(0, 12);
  return o;
}

Outcome retrieval() {
  Outcome o;
  MockKBServer server;
  KBClientOptions options;
  options.related_words = {server.url("rw"), "query"};
  options.reverse_dictionary = {server.url("rd"), "query"};
  options.retry.initial_backoff = 10ms;
  options.rate.min_interval = 0ms;
  options.timeout = 300ms;
  HttpKBClient http(options);

  // Fallback exclusivity and zero-score exclusion.
  MockReply mixed;
  mixed.body = rw_body({{"a", 0.5}, {"b", 0.0}, {"c", -0.1}});
  server.set("rw", "first", mixed);
  MockReply zeros;
  zeros.body = rw_body({{"a", 0.0}});
  server.set("rw", "second", zeros);
  MockReply rd;
  rd.body = rw_body({{"x", 2.0}, {"y", 0.0}});
  server.set("rd", "first", rd);
  server.set("rd", "second", rd);
  const auto t1 = retrieve_terms(http, make_class(0, "First"));
  o.require(t1.size() == 1 && t1[0].text == "a", "RW threshold not applied");
  o.require(server.hits("rd", "first") == 0, "RD queried although RW had positive items");
  const auto t2 = retrieve_terms(http, make_class(1, "Second"));
  o.require(t2.size() == 1 && t2[0].text == "x" && t2[0].source == TermSource::reverse_dictionary,
            "fallback did not return only positive RD items");

  // Cache determinism.
  TempDir cache("accept-cache");
  const auto c1 = cached_retrieve(http, make_class(0, "First"), cache.path(), nullptr);
  const int hits = server.hits("rw", "first");
  CachingKBClient caching(http, cache.path(), nullptr);
  const auto entry = caching.entry_path(KnowledgeBase::related_words, "first");
  const std::string bytes = read_file(entry);
  const auto c2 = cached_retrieve(http, make_class(0, "First"), cache.path(), nullptr);
  o.require(c1 == c2, "cached result differs");
  o.require(server.hits("rw", "first") == hits, "cache hit contacted the server");
  o.require(read_file(entry) == bytes, "cache entry rewritten");

  // Retry on timeout.
  MockReply slow;
  slow.body = rw_body({{"late", 1.0}});
  slow.delay = 1000ms;
  slow.delayed_hits = 1;
  server.set("rw", "slow", slow);
  const auto r = fetch_related_words(http, "slow");
  o.require(r.items.size() == 1 && server.hits("rw", "slow") == 2, "timed-out attempt was not retried");

  o.require(server.url("rw").rfind("http://127.0.0.1:", 0) == 0, "mock server is not local");
  if (o.pass) o.detail = "fallback, zero scores, cache, timeout retry against 127.0.0.1";
  return o;
}

Outcome reproducibility() {
  Outcome o;
  TempDir dir("accept-repro");
  MockKBServer server;
  ToyPipeline toy = make_toy_pipeline(dir.path(), server);
  toy.config.epochs = 3;
  PipelineConfig a = toy.config, b = toy.config;
  a.out_dir = dir / "run_a";
  b.out_dir = dir / "run_b";
  std::ostringstream log;
  run_pipeline(a, log, nullptr);
  run_pipeline(b, log, nullptr);

  std::size_t compared = 0;
  for (auto seed : a.seeds) {
    const std::string run = "runs/k5_seed" + std::to_string(seed) + "/manifest.json";
    const auto ma = deserialize_manifest(read_file(a.out_dir / run));
    const auto mb = deserialize_manifest(read_file(b.out_dir / run));
    const std::set<std::string> ta(ma.train_ids.begin(), ma.train_ids.end());
    const std::set<std::string> tb(mb.train_ids.begin(), mb.train_ids.end());
    const std::set<std::string> va(ma.val_ids.begin(), ma.val_ids.end());
    const std::set<std::string> vb(mb.val_ids.begin(), mb.val_ids.end());
    o.require(!ta.empty() && ta == tb && va == vb, "split ids differ for seed " + std::to_string(seed));
    ++compared;
  }
  for (const auto& e : fs::directory_iterator(a.out_dir / "reports")) {
    const auto other = b.out_dir / "reports" / e.path().filename();
    o.require(fs::exists(other) && read_file(e.path()) == read_file(other),
              "report " + e.path().filename().string() + " differs");
    ++compared;
  }
  if (o.pass) o.detail = std::to_string(compared) + " split/report files identical across two runs";
  return o;
}

struct Check {
  int id;
  const char* name;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Check> checks{
      {1, "exp-normalization", 5, exp_normalization},
      {2, "argmax invariance under weight scaling", 30, argmax_invariance},
      {3, "calibration oracle equivalence", 5, calibration_oracle},
      {4, "filter rule", 0, filter_rule},
      {5, "mean embedding", 0, mean_embedding},
      {6, "gradient check", 60, gradient_check},
      {7, "end-to-end desk-scale run", 900, end_to_end},
      {8, "zero-shot purity", 0, zero_shot_purity},
      {9, "retrieval against mock KB", 0, retrieval},
      {10, "reproducibility", 0, reproducibility},
  };
  int failed = 0;
  for (const auto& c : checks) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(c.budget_s)) + " s budget";
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %2d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
