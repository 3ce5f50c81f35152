#include "kverb/pipeline.hpp"

#include <algorithm>
#include <optional>

#include <json.hpp>

#include "kverb/errors.hpp"
#include "kverb/fileio.hpp"
#include "kverb/hashing.hpp"
#include "kverb/text.hpp"

namespace kverb {

namespace fs = std::filesystem;
using nlohmann::json;

std::string serialize_stage_manifest(const StageManifest& m) {
  json j = {{"stage", m.stage}, {"input_hash", m.input_hash}, {"outputs", m.outputs}};
  return j.dump(2) + "\n";
}

StageManifest deserialize_stage_manifest(std::string_view data) {
  try {
    const json j = json::parse(data);
    StageManifest m;
    m.stage = j.at("stage").get<std::string>();
    m.input_hash = j.at("input_hash").get<std::string>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("stage manifest: ") + e.what());
  }
}

TinyMLM build_backend(const Verbalizer& v, const Dataset& pool, const PromptTemplate& prompt,
                      const TinyMLMConfig& model, const PretrainConfig& pretrain) {
  std::vector<std::string> texts;
  texts.push_back(prompt.fill("", ""));
  for (const auto& c : v.classes()) {
    for (const auto& t : v.terms(c.id)) texts.push_back(t.text);
  }
  std::vector<std::string> corpus;
  for (const auto& ex : pool.examples) {
    texts.push_back(ex.abstract);
    corpus.push_back(ex.abstract);
  }
  TinyMLM m = TinyMLM::build(texts, model);
  m.pretrain(corpus, pretrain);
  return m;
}

namespace {

std::string file_hash(const fs::path& p) { return sha256_hex(read_file(p)); }

/// Accumulates named inputs into one digest.
class InputHash {
 public:
  InputHash& add(std::string_view name, std::string_view value) {
    text_ += std::string(name) + "=" + std::string(value) + "\n";
    return *this;
  }
  InputHash& file(std::string_view name, const fs::path& p) { return add(name, file_hash(p)); }
  std::string digest() const { return sha256_hex(text_); }

 private:
  std::string text_;
};

class Stages {
 public:
  Stages(fs::path out, std::ostream& log, PipelineResult& result)
      : out_(std::move(out)), log_(log), result_(result) {}

  fs::path path(const std::string& rel) const { return out_ / rel; }

  bool up_to_date(const std::string& stage, const std::string& input_hash) const {
    const fs::path mpath = manifest_path(stage);
    if (!fs::exists(mpath)) return false;
    StageManifest m;
    try {
      m = deserialize_stage_manifest(read_file(mpath));
    } catch (const ParseError&) {
      return false;
    }
    if (m.stage != stage || m.input_hash != input_hash) return false;
    for (const auto& [rel, hash] : m.outputs) {
      if (!fs::exists(out_ / rel) || file_hash(out_ / rel) != hash) return false;
    }
    return true;
  }

  /// Runs `body` unless the stage is current; `body` returns the output
  /// files it wrote, relative to out_dir.
  template <typename Body>
  void run(const std::string& stage, const std::string& input_hash, Body&& body) {
    if (up_to_date(stage, input_hash)) {
      log_ << "[" << stage << "] up to date, skipped\n";
      result_.skipped.push_back(stage);
      return;
    }
    log_ << "[" << stage << "] running\n";
    std::vector<std::string> outputs = body();
    StageManifest m{stage, input_hash, {}};
    for (const auto& rel : outputs) m.outputs[rel] = file_hash(out_ / rel);
    write_file_atomic(manifest_path(stage), serialize_stage_manifest(m));
    result_.ran.push_back(stage);
  }

  std::vector<std::string> recorded_outputs(const std::string& stage) const {
    std::vector<std::string> out;
    for (const auto& [rel, hash] : deserialize_stage_manifest(read_file(manifest_path(stage))).outputs) {
      out.push_back(rel);
    }
    return out;
  }

 private:
  fs::path manifest_path(const std::string& stage) const { return out_ / "stages" / (stage + ".json"); }

  fs::path out_;
  std::ostream& log_;
  PipelineResult& result_;
};

std::vector<std::string> encoder_files() {
  return {"encoders/bi/manifest.json", "encoders/bi/weights.json", "encoders/cross/manifest.json",
          "encoders/cross/weights.json"};
}

std::string calibrated_name(ProtocolMode mode, std::uint64_t seed) {
  if (mode == ProtocolMode::few_shot) return "verbalizer_calibrated.json";
  return "verbalizer_calibrated_seed" + std::to_string(seed) + ".json";
}

std::vector<std::string> relative_files_under(const fs::path& root, const fs::path& sub) {
  std::vector<std::string> out;
  if (!fs::exists(root / sub)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root / sub)) {
    if (e.is_regular_file() && e.path().filename().string().find(".tmp.") == std::string::npos) {
      out.push_back(fs::relative(e.path(), root).generic_string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, std::ostream& log, WarningSink warn) {
  if (config.fl && config.nli_data.empty()) {
    throw ConfigError("config key 'nli_data' is required unless fl = false");
  }
  const PromptTemplate prompt = PromptTemplate::named(config.prompt);
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  PipelineResult result;
  Stages stages(out, log, result);
  const std::string settings = config_hash(config);

  // retrieve
  const std::string raw_hash = InputHash()
                                   .file("classes", config.classes)
                                   .add("related_words_url", config.kb.related_words.base_url)
                                   .add("reverse_dictionary_url", config.kb.reverse_dictionary.base_url)
                                   .add("query_param", config.kb.related_words.query_param)
                                   .digest();
  stages.run("retrieve", raw_hash, [&] {
    const auto classes = read_class_file(config.classes);
    HttpKBClient http(config.kb);
    CachingKBClient cached(http, config.effective_cache_dir(), warn);
    const auto per_class = retrieve_all(cached, classes, config.kb_parallel);
    std::vector<RawTerm> raw;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      for (const auto& t : per_class[i]) raw.push_back({classes[i].id, t});
      log << "  " << classes[i].name << ": " << per_class[i].size() << " terms\n";
    }
    write_raw_terms(stages.path("raw_terms.jsonl"), raw);
    save_verbalizer(raw_verbalizer(classes, raw), stages.path("verbalizer_raw.json").string());
    return std::vector<std::string>{"raw_terms.jsonl", "verbalizer_raw.json"};
  });
  const Verbalizer raw = load_verbalizer(stages.path("verbalizer_raw.json").string());

  // train-nli
  if (config.fl) {
    const std::string nli_hash =
        InputHash().file("nli_data", config.nli_data).add("config", encoder_config_hash(config.nli)).digest();
    stages.run("train-nli", nli_hash, [&] {
      const auto report = binarize_scinli(read_nli_jsonl(config.nli_data));
      for (const auto& [label, n] : report.dropped) log << "  dropped " << n << " '" << label << "' pairs\n";
      const std::string trained_on = config.nli_data.filename().string() + "@" + nli_hash.substr(0, 12);
      train_bi_encoder(report.pairs, config.nli).save(stages.path("encoders/bi"), trained_on);
      train_cross_encoder(report.pairs, config.nli).save(stages.path("encoders/cross"), trained_on);
      return encoder_files();
    });
  }

  // filter
  InputHash filter_input;
  filter_input.file("raw", stages.path("verbalizer_raw.json")).add("fl", config.fl ? "true" : "false");
  if (config.fl) {
    for (const auto& f : encoder_files()) filter_input.file(f, stages.path(f));
    filter_input.add("mu_be", format_double(config.filter.mu_be))
        .add("mu_ce", format_double(config.filter.mu_ce))
        .add("ce_higher_is_relevant", config.filter.ce_higher_is_relevant ? "true" : "false")
        .add("template", prompt.pattern());
  }
  stages.run("filter", filter_input.digest(), [&] {
    Verbalizer filtered = raw;
    if (config.fl) {
      const BiEncoder be = BiEncoder::load(stages.path("encoders/bi"));
      const CrossEncoder ce = CrossEncoder::load(stages.path("encoders/cross"));
      filtered = semantic_filter(raw, be, ce, config.filter, prompt);
    } else {
      filtered = promote_unfiltered(raw);
    }
    log << "  " << raw.total_terms() << " -> " << filtered.total_terms() << " terms\n";
    for (const auto& d : cross_class_duplicates(filtered)) {
      if (warn) warn("term '" + d.text + "' appears under " + std::to_string(d.class_ids.size()) + " classes");
    }
    save_verbalizer(filtered, stages.path("verbalizer_filtered.json").string());
    return std::vector<std::string>{"verbalizer_filtered.json"};
  });
  const Verbalizer filtered = load_verbalizer(stages.path("verbalizer_filtered.json").string());

  IngestOptions ingest_options;
  ingest_options.min_tokens = config.min_tokens;
  const Dataset pool = ingest(config.train, filtered.classes(), ingest_options);
  const Dataset test = ingest(config.test, filtered.classes(), ingest_options);
  log << "dataset: " << pool.examples.size() << " training, " << test.examples.size() << " test ("
      << pool.excluded_short + test.excluded_short << " short abstracts excluded)\n";

  // backend
  TinyMLMConfig model = config.backend_model;
  model.max_length = config.max_length;
  fs::path backend_dir = config.backend;
  if (backend_dir.empty()) {
    backend_dir = stages.path("backend");
    const std::string backend_hash = InputHash()
                                         .file("train", config.train)
                                         .file("raw", stages.path("verbalizer_raw.json"))
                                         .add("min_tokens", std::to_string(config.min_tokens))
                                         .add("template", prompt.pattern())
                                         .add("dim", std::to_string(model.dim))
                                         .add("max_length", std::to_string(model.max_length))
                                         .add("seed", std::to_string(model.seed))
                                         .add("pretrain_epochs", std::to_string(config.pretrain.epochs))
                                         .add("pretrain_lr", format_double(config.pretrain.learning_rate))
                                         .add("pretrain_seed", std::to_string(config.pretrain.seed))
                                         .digest();
    stages.run("backend", backend_hash, [&] {
      build_backend(raw, pool, prompt, model, config.pretrain).save(backend_dir);
      return std::vector<std::string>{"backend/tiny_mlm.json"};
    });
  }
  const TinyMLM backend = TinyMLM::load(backend_dir);
  const std::string backend_file_hash = file_hash(backend_dir / "tiny_mlm.json");

  // calibrate
  std::vector<std::uint64_t> verbalizer_seeds =
      config.mode == ProtocolMode::few_shot ? std::vector<std::uint64_t>{0} : config.seeds;
  if (config.cl) {
    std::string seeds_text;
    for (auto s : config.seeds) seeds_text += std::to_string(s) + ",";
    const std::string cal_hash = InputHash()
                                     .file("filtered", stages.path("verbalizer_filtered.json"))
                                     .add("backend", backend_file_hash)
                                     .file("train", config.train)
                                     .add("min_tokens", std::to_string(config.min_tokens))
                                     .add("mode", to_string(config.mode))
                                     .add("seeds", seeds_text)
                                     .add("support_size", std::to_string(config.support_size))
                                     .add("gold", config.calibration_gold_labels ? "true" : "false")
                                     .add("aggregation", to_string(config.aggregation))
                                     .add("template", prompt.pattern())
                                     .digest();
    stages.run("calibrate", cal_hash, [&] {
      CalibrationConfig cal;
      cal.use_gold_labels = config.calibration_gold_labels;
      cal.aggregation = config.aggregation;
      std::vector<std::string> outputs;
      for (auto seed : verbalizer_seeds) {
        const auto support = config.mode == ProtocolMode::few_shot
                                 ? pool.examples
                                 : sample_support(pool, config.support_size, seed);
        const Verbalizer calibrated = calibrate(backend, filtered, support, prompt, cal, warn);
        log << "  " << filtered.total_terms() << " -> " << calibrated.total_terms() << " terms\n";
        const std::string name = calibrated_name(config.mode, seed);
        save_verbalizer(calibrated, stages.path(name).string());
        outputs.push_back(name);
      }
      return outputs;
    });
  }

  std::map<std::uint64_t, Verbalizer> verbalizers;
  InputHash exp_input;
  for (auto seed : verbalizer_seeds) {
    const fs::path p = config.cl ? stages.path(calibrated_name(config.mode, seed))
                                 : stages.path("verbalizer_filtered.json");
    Verbalizer v = load_verbalizer(p.string());
    if (!config.ss) v = strip_semantic_weights(v);
    exp_input.add("verbalizer", sha256_hex(serialize(v)));
    verbalizers.emplace(seed, std::move(v));
  }

  // experiment
  ProtocolConfig protocol;
  protocol.method = config.method_label();
  protocol.mode = config.mode;
  protocol.shots = config.shots;
  protocol.seeds = config.seeds;
  protocol.tuning.epochs = config.epochs;
  protocol.tuning.learning_rate = config.lr;
  protocol.tuning.batch_size = config.batch;
  protocol.tuning.aggregation = config.aggregation;
  protocol.tuning.freeze_backend = config.freeze_backend;
  protocol.prompt = prompt;
  protocol.soft = config.soft;
  protocol.max_parallel = config.max_parallel;
  protocol.config_hash = settings;
  protocol.config = settings_snapshot(config);

  exp_input.add("backend", backend_file_hash)
      .file("train", config.train)
      .file("test", config.test)
      .add("settings", settings);
  stages.run("experiment", exp_input.digest(), [&] {
    fs::remove_all(stages.path("reports"));
    fs::remove_all(stages.path("runs"));
    auto pick = [&](std::uint64_t seed) -> const Verbalizer& {
      return config.mode == ProtocolMode::few_shot ? verbalizers.at(0) : verbalizers.at(seed);
    };
    const auto reports = run_protocol(backend, pick, pool, test.examples, protocol, stages.path("runs"));
    write_reports(stages.path("reports"), reports);
    auto outputs = relative_files_under(out, "reports");
    for (auto& f : relative_files_under(out, "runs")) outputs.push_back(std::move(f));
    return outputs;
  });

  result.reports = read_reports(stages.path("reports"));
  log << "\n" << format_report_table(result.reports);
  return result;
}

}  // namespace kverb
