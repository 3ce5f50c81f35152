// kverb: knowledge-enriched verbalizer pipeline.
//
// Exit status: 0 success, 2 configuration error, 3 stage failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kverb/config.hpp"
#include "kverb/errors.hpp"
#include "kverb/fileio.hpp"
#include "kverb/harness.hpp"
#include "kverb/kb_retrieval.hpp"
#include "kverb/nli_filter.hpp"
#include "kverb/pipeline.hpp"
#include "kverb/prompt_classifier.hpp"
#include "kverb/tiny_mlm.hpp"

namespace fs = std::filesystem;
using namespace kverb;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string prompt = "canonical";
  std::string aggregation = "mean";
  std::size_t min_tokens = 30;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--template", c.prompt, "canonical, article, or a pattern with {text} and {mask}");
  cmd->add_option("--aggregation", c.aggregation, "mean, max, or weighted-mean");
  cmd->add_option("--min-tokens", c.min_tokens, "drop abstracts with fewer whitespace tokens");
}

IngestOptions ingest_options(const Common& c) {
  IngestOptions o;
  o.min_tokens = c.min_tokens;
  return o;
}

// ---------------------------------------------------------------- retrieve

struct RetrieveArgs {
  std::string classes, cache, out, verbalizer_out;
  KBClientOptions kb;
  int parallel = 2;
};

int cmd_retrieve(const RetrieveArgs& a) {
  const auto classes = read_class_file(a.classes);
  HttpKBClient http(a.kb);
  CachingKBClient cached(http, a.cache);
  const auto per_class = retrieve_all(cached, classes, a.parallel);
  std::vector<RawTerm> raw;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (const auto& t : per_class[i]) raw.push_back({classes[i].id, t});
    std::cout << classes[i].name << "\t" << per_class[i].size() << " terms\n";
  }
  write_raw_terms(a.out, raw);
  if (!a.verbalizer_out.empty()) save_verbalizer(raw_verbalizer(classes, raw), a.verbalizer_out);
  return 0;
}

// ---------------------------------------------------------------- train-nli

struct TrainNliArgs {
  std::string pairs, kind, out;
  EncoderTrainingConfig config;
};

int cmd_train_nli(const TrainNliArgs& a) {
  const auto report = binarize_scinli(read_nli_jsonl(a.pairs));
  for (const auto& [label, n] : report.dropped) std::cout << "dropped " << n << " '" << label << "' pairs\n";
  std::cout << report.pairs.size() << " pairs\n";
  const std::string trained_on = fs::path(a.pairs).filename().string();
  if (a.kind == "bi") {
    train_bi_encoder(report.pairs, a.config).save(a.out, trained_on);
  } else {
    train_cross_encoder(report.pairs, a.config).save(a.out, trained_on);
  }
  return 0;
}

// ---------------------------------------------------------------- filter

struct FilterArgs {
  std::string in, classes, be, ce, out;
  FilterConfig config;
  std::vector<double> sweep_be, sweep_ce;
  bool no_fl = false;
  Common common;
};

Verbalizer load_raw(const std::string& in, const std::string& classes) {
  if (fs::path(in).extension() != ".jsonl") return load_verbalizer(in);
  if (classes.empty()) throw ConfigError("--classes is required when --in is a raw terms file");
  return raw_verbalizer(read_class_file(classes), read_raw_terms(in));
}

int cmd_filter(const FilterArgs& a) {
  validate(a.config);
  const Verbalizer raw = load_raw(a.in, a.classes);
  Verbalizer out = raw;
  if (a.no_fl) {
    out = promote_unfiltered(raw);
  } else {
    if (a.be.empty() || a.ce.empty()) throw ConfigError("--be and --ce are required unless --no-fl is given");
    const BiEncoder be = BiEncoder::load(a.be);
    const CrossEncoder ce = CrossEncoder::load(a.ce);
    const auto prompt = PromptTemplate::named(a.common.prompt);
    const auto scores = score_terms(raw, be, ce, a.config, prompt);
    for (const auto& s : scores) {
      std::cout << s.class_id << "\t" << s.term.text << "\tbe=" << s.be_score << "\tce=" << s.ce_score
                << (s.kept ? "\tkept" : "\tdropped") << "\n";
    }
    if (!a.sweep_be.empty() || !a.sweep_ce.empty()) {
      const auto be_grid = a.sweep_be.empty() ? std::vector<double>{a.config.mu_be} : a.sweep_be;
      const auto ce_grid = a.sweep_ce.empty() ? std::vector<double>{a.config.mu_ce} : a.sweep_ce;
      std::cout << "mu_be\tmu_ce\tterms\n";
      for (double mb : be_grid) {
        for (double mc : ce_grid) {
          FilterConfig c = a.config;
          c.mu_be = mb;
          c.mu_ce = mc;
          validate(c);
          std::cout << mb << "\t" << mc << "\t" << apply_filter(raw, scores, c).total_terms() << "\n";
        }
      }
    }
    out = apply_filter(raw, scores, a.config);
  }
  save_verbalizer(out, a.out);
  std::cout << raw.total_terms() << " -> " << out.total_terms() << " terms\n";
  return 0;
}

// ---------------------------------------------------------------- backend

struct BackendArgs {
  std::string verbalizer, dataset, out;
  TinyMLMConfig model;
  PretrainConfig pretrain;
  Common common;
};

int cmd_backend(const BackendArgs& a) {
  const Verbalizer v = load_verbalizer(a.verbalizer);
  const Dataset pool = ingest(a.dataset, v.classes(), ingest_options(a.common));
  build_backend(v, pool, PromptTemplate::named(a.common.prompt), a.model, a.pretrain).save(a.out);
  return 0;
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  std::string verbalizer, backend, support, out;
  bool gold = false;
  Common common;
};

int cmd_calibrate(const CalibrateArgs& a) {
  const Verbalizer v = load_verbalizer(a.verbalizer);
  const TinyMLM backend = TinyMLM::load(a.backend);
  const Dataset support = ingest(a.support, v.classes(), ingest_options(a.common));
  CalibrationConfig cal;
  cal.use_gold_labels = a.gold;
  cal.aggregation = parse_term_aggregation(a.common.aggregation);
  const auto prompt = PromptTemplate::named(a.common.prompt);
  const auto scores = calibration_scores(backend, v, support.examples, prompt, cal);
  for (const auto& s : scores) {
    std::cout << s.class_id << "\t" << s.text << "\tP=" << s.class_probability << "\tprior=" << s.prior
              << "\tnorm=" << (s.normalized ? std::to_string(*s.normalized) : "-")
              << (s.kept ? "\tkept" : "\tremoved") << "\n";
  }
  save_verbalizer(calibrate(backend, v, support.examples, prompt, cal), a.out);
  return 0;
}

// ---------------------------------------------------------------- train / zero-shot

struct ClassifyArgs {
  std::string verbalizer, dataset, test, support, backend, out;
  std::size_t shots = 5;
  std::uint64_t seed = 1;
  bool soft = false, no_ss = false, no_cl = false, freeze = false;
  int epochs = 5, batch = 5;
  double lr = 3e-5;
  Common common;
};

Verbalizer prepare_verbalizer(const ClassifyArgs& a, const MLMBackend& backend,
                              const std::vector<LabeledExample>& support) {
  Verbalizer v = load_verbalizer(a.verbalizer);
  if (v.stage() == Stage::raw) {
    throw ConfigError(a.verbalizer + " is unfiltered; run `filter` (or `filter --no-fl`) first");
  }
  if (!a.no_cl && v.stage() == Stage::filtered && !support.empty()) {
    CalibrationConfig cal;
    cal.aggregation = parse_term_aggregation(a.common.aggregation);
    v = calibrate(backend, v, support, PromptTemplate::named(a.common.prompt), cal);
  }
  if (a.no_ss) v = strip_semantic_weights(v);
  return v;
}

int cmd_train(const ClassifyArgs& a) {
  const TinyMLM base = TinyMLM::load(a.backend);
  const Verbalizer file_v = load_verbalizer(a.verbalizer);
  const Dataset pool = ingest(a.dataset, file_v.classes(), ingest_options(a.common));
  const Dataset test = ingest(a.test, file_v.classes(), ingest_options(a.common));
  const Verbalizer v = prepare_verbalizer(a, base, pool.examples);

  ProtocolConfig p;
  p.method = a.no_ss ? "w/o SS" : "full";
  p.shots = {a.shots};
  p.seeds = {a.seed};
  p.tuning.epochs = a.epochs;
  p.tuning.learning_rate = a.lr;
  p.tuning.batch_size = a.batch;
  p.tuning.aggregation = parse_term_aggregation(a.common.aggregation);
  p.tuning.freeze_backend = a.freeze;
  p.prompt = PromptTemplate::named(a.common.prompt);
  p.soft = a.soft;
  std::optional<fs::path> run_dir;
  if (!a.out.empty()) run_dir = fs::path(a.out);
  const auto reports = run_protocol(base, v, pool, test.examples, p, run_dir);
  if (run_dir) write_reports(*run_dir / "reports", reports);
  std::cout << "accuracy " << reports.front().mean << "\n";
  return 0;
}

int cmd_zero_shot(const ClassifyArgs& a) {
  const TinyMLM backend = TinyMLM::load(a.backend);
  const Verbalizer file_v = load_verbalizer(a.verbalizer);
  const Dataset test = ingest(a.dataset, file_v.classes(), ingest_options(a.common));
  std::vector<LabeledExample> support;
  if (!a.support.empty()) support = ingest(a.support, file_v.classes(), ingest_options(a.common)).examples;
  const Verbalizer v = prepare_verbalizer(a, backend, support);
  const auto prompt = PromptTemplate::named(a.common.prompt);
  const auto aggregation = parse_term_aggregation(a.common.aggregation);
  std::vector<int> preds;
  for (const auto& ex : test.examples) {
    preds.push_back(zero_shot_classify(backend, v, ex.abstract, prompt, aggregation));
    std::cout << ex.id << "\t" << v.class_label(preds.back()).name << "\n";
  }
  std::cout << "accuracy " << evaluate(preds, gold_labels(test.examples)) << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval / run

int cmd_eval(const std::string& report_dir) {
  std::cout << format_report_table(read_reports(report_dir));
  return 0;
}

struct RunArgs {
  std::string config_path;
  std::vector<std::string> set;
  std::vector<std::pair<std::string, std::string>> flags;
};

int cmd_run(const RunArgs& a) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  overrides.insert(overrides.end(), a.flags.begin(), a.flags.end());
  std::optional<fs::path> path;
  if (!a.config_path.empty()) path = a.config_path;
  const PipelineConfig config = load_config(path, overrides);
  fs::create_directories(config.out_dir);
  write_file_atomic(config.out_dir / "config.txt", format_config(config));
  run_pipeline(config, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-enriched weighted verbalizers for prompt-based topic classification"};
  app.require_subcommand(1);

  RetrieveArgs retrieve;
  auto* c_retrieve = app.add_subcommand("retrieve", "query the knowledge bases for every class");
  c_retrieve->add_option("--classes", retrieve.classes, "class file")->required();
  c_retrieve->add_option("--cache", retrieve.cache, "cache directory")->required();
  c_retrieve->add_option("--out", retrieve.out, "raw terms JSONL")->required();
  c_retrieve->add_option("--verbalizer-out", retrieve.verbalizer_out, "also write the raw verbalizer");
  c_retrieve->add_option("--related-words-url", retrieve.kb.related_words.base_url);
  c_retrieve->add_option("--reverse-dictionary-url", retrieve.kb.reverse_dictionary.base_url);
  c_retrieve->add_option_function<std::string>(
      "--query-param",
      [&retrieve](const std::string& p) {
        retrieve.kb.related_words.query_param = p;
        retrieve.kb.reverse_dictionary.query_param = p;
      },
      "URL parameter carrying the query");
  c_retrieve->add_option("--parallel", retrieve.parallel);

  TrainNliArgs nli;
  auto* c_nli = app.add_subcommand("train-nli", "train a bi-encoder or cross-encoder on NLI pairs");
  c_nli->add_option("--pairs", nli.pairs, "NLI JSONL")->required();
  c_nli->add_option("--kind", nli.kind, "bi or cross")->required()->check(CLI::IsMember({"bi", "cross"}));
  c_nli->add_option("--out", nli.out, "output directory")->required();
  c_nli->add_option("--epochs", nli.config.epochs);
  c_nli->add_option("--lr", nli.config.learning_rate);
  c_nli->add_option("--batch", nli.config.batch_size);
  c_nli->add_option("--dim", nli.config.dim);
  c_nli->add_option("--seed", nli.config.seed);

  FilterArgs filter;
  auto* c_filter = app.add_subcommand("filter", "semantic filtering of retrieved terms");
  c_filter->add_option("--in", filter.in, "raw terms JSONL or raw verbalizer JSON")->required();
  c_filter->add_option("--classes", filter.classes, "class file (with a raw terms file)");
  c_filter->add_option("--be", filter.be, "bi-encoder directory");
  c_filter->add_option("--ce", filter.ce, "cross-encoder directory");
  c_filter->add_option("--out", filter.out)->required();
  c_filter->add_option("--sweep-mu-be", filter.sweep_be, "print survivor counts over these mu_be values")
      ->delimiter(',');
  c_filter->add_option("--sweep-mu-ce", filter.sweep_ce, "print survivor counts over these mu_ce values")
      ->delimiter(',');
  c_filter->add_option("--mu-be", filter.config.mu_be);
  c_filter->add_option("--mu-ce", filter.config.mu_ce);
  c_filter->add_flag("--ce-higher-is-relevant", filter.config.ce_higher_is_relevant);
  c_filter->add_flag("--no-fl", filter.no_fl, "keep every term with unit weight");
  add_common(c_filter, filter.common);

  BackendArgs backend;
  auto* c_backend = app.add_subcommand("backend", "build and pretrain the small masked language model");
  c_backend->add_option("--verbalizer", backend.verbalizer)->required();
  c_backend->add_option("--dataset", backend.dataset, "training pool JSONL")->required();
  c_backend->add_option("--out", backend.out)->required();
  c_backend->add_option("--dim", backend.model.dim);
  c_backend->add_option("--seed", backend.model.seed);
  c_backend->add_option("--epochs", backend.pretrain.epochs);
  c_backend->add_option("--lr", backend.pretrain.learning_rate);
  add_common(c_backend, backend.common);

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "prune terms by calibrated mask probability");
  c_cal->add_option("--verbalizer", cal.verbalizer)->required();
  c_cal->add_option("--backend", cal.backend)->required();
  c_cal->add_option("--support", cal.support, "support set JSONL")->required();
  c_cal->add_option("--out", cal.out)->required();
  c_cal->add_flag("--gold-labels", cal.gold, "group support examples by gold label");
  add_common(c_cal, cal.common);

  ClassifyArgs train;
  auto* c_train = app.add_subcommand("train", "few-shot prompt tuning for one (K, seed)");
  c_train->add_option("--verbalizer", train.verbalizer)->required();
  c_train->add_option("--dataset", train.dataset, "training pool JSONL")->required();
  c_train->add_option("--test", train.test, "test JSONL")->required();
  c_train->add_option("--backend", train.backend)->required();
  c_train->add_option("--shots", train.shots);
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--lr", train.lr);
  c_train->add_option("--batch", train.batch);
  c_train->add_option("--out", train.out, "run directory");
  c_train->add_flag("--soft", train.soft);
  c_train->add_flag("--freeze-backend", train.freeze);
  c_train->add_flag("--no-ss", train.no_ss, "set every semantic weight to 1");
  c_train->add_flag("--no-cl", train.no_cl, "skip calibration");
  add_common(c_train, train.common);

  ClassifyArgs zs;
  auto* c_zs = app.add_subcommand("zero-shot", "classify without parameter updates");
  c_zs->add_option("--verbalizer", zs.verbalizer)->required();
  c_zs->add_option("--dataset", zs.dataset, "test JSONL")->required();
  c_zs->add_option("--backend", zs.backend)->required();
  c_zs->add_option("--support", zs.support, "unlabeled support JSONL for calibration");
  c_zs->add_flag("--no-ss", zs.no_ss);
  c_zs->add_flag("--no-cl", zs.no_cl);
  add_common(c_zs, zs.common);

  std::string report_dir;
  auto* c_eval = app.add_subcommand("eval", "print a shots x method accuracy table");
  c_eval->add_option("--report", report_dir, "report directory")->required();

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "run the whole pipeline from a config file");
  c_run->add_option("--config", run.config_path, "key = value config file");
  c_run->add_option("--set", run.set, "override any config key (key=value)");
  auto flag_override = [&](const std::string& flag, const std::string& key, const std::string& help) {
    c_run->add_option_function<std::string>(
        flag, [&run, key](const std::string& v) { run.flags.emplace_back(key, v); }, help);
  };
  flag_override("--mu-be", "mu_be", "bi-encoder threshold");
  flag_override("--mu-ce", "mu_ce", "cross-encoder threshold");
  flag_override("--epochs", "epochs", "tuning epochs");
  flag_override("--lr", "lr", "tuning learning rate");
  flag_override("--batch", "batch", "tuning batch size");
  flag_override("--shots", "shots", "comma-separated shot counts");
  flag_override("--seeds", "seeds", "comma-separated seeds");
  flag_override("--mode", "mode", "few-shot or zero-shot");
  flag_override("--out-dir", "out_dir", "output directory");
  flag_override("--backend", "backend", "saved backend directory");
  auto flag_switch = [&](const std::string& flag, const std::string& key, const std::string& value,
                         const std::string& help) {
    c_run->add_flag_callback(flag, [&run, key, value] { run.flags.emplace_back(key, value); }, help);
  };
  flag_switch("--no-ss", "ss", "false", "unit semantic weights");
  flag_switch("--no-cl", "cl", "false", "skip calibration");
  flag_switch("--no-fl", "fl", "false", "skip semantic filtering");
  flag_switch("--soft", "soft", "true", "soft verbalizer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*c_retrieve) return cmd_retrieve(retrieve);
    if (*c_nli) return cmd_train_nli(nli);
    if (*c_filter) return cmd_filter(filter);
    if (*c_backend) return cmd_backend(backend);
    if (*c_cal) return cmd_calibrate(cal);
    if (*c_train) return cmd_train(train);
    if (*c_zs) return cmd_zero_shot(zs);
    if (*c_eval) return cmd_eval(report_dir);
    if (*c_run) return cmd_run(run);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
