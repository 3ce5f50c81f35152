#include "kverb/harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "kverb/errors.hpp"
#include "kverb/fileio.hpp"
#include "kverb/rng.hpp"
#include "kverb/text.hpp"

namespace kverb {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetFormat parse_dataset_format(std::string_view s) {
  if (s == "jsonl") return DatasetFormat::jsonl;
  throw ConfigError("unsupported dataset format '" + std::string(s) + "'");
}

namespace {

std::string id_string(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw DatasetError("id must be a string or integer");
}

std::optional<int> resolve_label(const json& j, const std::vector<ClassLabel>& classes) {
  if (j.is_number_integer()) {
    const long long id = j.get<long long>();
    if (id >= 0 && id < static_cast<long long>(classes.size())) return static_cast<int>(id);
    return std::nullopt;
  }
  if (j.is_string()) {
    const std::string want = to_lower(trim(j.get<std::string>()));
    for (const auto& c : classes) {
      if (to_lower(c.name) == want) return c.id;
    }
  }
  return std::nullopt;
}

}  // namespace

Dataset ingest(const fs::path& path, const std::vector<ClassLabel>& classes, const IngestOptions& options) {
  if (classes.empty()) throw PreconditionError("ingest needs a declared class set");
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset " + path.string());

  Dataset ds;
  ds.classes = classes;
  std::set<std::string> unknown;
  std::set<std::string> ids;
  std::size_t records = 0;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetError(where + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("abstract") || !rec.contains("label")) {
      throw DatasetError(where + ": record needs id, abstract, and label");
    }
    ++records;
    LabeledExample ex;
    try {
      ex.id = id_string(rec["id"]);
    } catch (const DatasetError& e) {
      throw DatasetError(where + ": " + e.what());
    }
    if (!rec["abstract"].is_string()) throw DatasetError(where + ": abstract must be a string");
    ex.abstract = rec["abstract"].get<std::string>();
    const auto label = resolve_label(rec["label"], classes);
    if (!label) {
      unknown.insert(rec["label"].is_string() ? rec["label"].get<std::string>() : rec["label"].dump());
      continue;
    }
    ex.label = *label;
    if (!ids.insert(ex.id).second) throw DatasetError(where + ": duplicate id '" + ex.id + "'");
    if (whitespace_tokens(ex.abstract).size() < options.min_tokens) {
      ++ds.excluded_short;
      continue;
    }
    ds.examples.push_back(std::move(ex));
  }
  if (records == 0) throw DatasetError("dataset " + path.string() + " holds no records");
  if (!unknown.empty()) {
    throw DatasetError("unknown labels in " + path.string() + ": " +
                       join(std::vector<std::string>(unknown.begin(), unknown.end()), ", "));
  }
  return ds;
}

void write_dataset_jsonl(const fs::path& path, std::span<const LabeledExample> examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += json{{"id", ex.id}, {"abstract", ex.abstract}, {"label", ex.label}}.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

FewShotSplit sample_split(const Dataset& dataset, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw PreconditionError("shots must be positive");
  std::vector<std::vector<std::size_t>> by_class(dataset.classes.size());
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.examples[i].label)].push_back(i);
  }
  for (const auto& c : dataset.classes) {
    const auto have = by_class[static_cast<std::size_t>(c.id)].size();
    if (have < 2 * shots) {
      throw DatasetError("class '" + c.name + "' has " + std::to_string(have) + " examples; " +
                         std::to_string(shots) + "-shot sampling needs " + std::to_string(2 * shots));
    }
  }
  FewShotSplit split;
  split.seed = seed;
  split.shots = shots;
  Rng rng(seed);
  for (auto& members : by_class) {
    rng.shuffle(members);
    for (std::size_t i = 0; i < shots; ++i) split.train.push_back(dataset.examples[members[i]]);
    for (std::size_t i = shots; i < 2 * shots; ++i) split.val.push_back(dataset.examples[members[i]]);
  }
  return split;
}

std::vector<LabeledExample> sample_support(const Dataset& dataset, std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> order(dataset.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(std::min(size, order.size()));
  std::vector<LabeledExample> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(dataset.examples[i]);
  return out;
}

double evaluate(std::span<const int> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size()) {
    throw PreconditionError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(gold.size()) + " gold labels");
  }
  if (gold.empty()) throw PreconditionError("evaluate: no examples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predictions[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

std::vector<int> gold_labels(std::span<const LabeledExample> examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.label);
  return out;
}

std::string_view to_string(ProtocolMode m) {
  return m == ProtocolMode::few_shot ? "few-shot" : "zero-shot";
}

ProtocolMode parse_protocol_mode(std::string_view s) {
  if (s == "few-shot") return ProtocolMode::few_shot;
  if (s == "zero-shot") return ProtocolMode::zero_shot;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected few-shot or zero-shot)");
}

// ---------------------------------------------------------------- reports

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size()))};
}

}  // namespace

void summarize(RunReport& report) {
  std::tie(report.mean, report.std) = mean_std(report.accuracies);
}

bool is_consistent(const RunReport& report) {
  if (report.accuracies.size() != report.seeds.size()) return false;
  const auto [mean, std] = mean_std(report.accuracies);
  return std::abs(mean - report.mean) <= 1e-9 && std::abs(std - report.std) <= 1e-9;
}

std::string serialize_report(const RunReport& r) {
  json j;
  j["method"] = r.method;
  j["mode"] = std::string(to_string(r.mode));
  j["shots"] = r.shots;
  j["seeds"] = r.seeds;
  j["accuracies"] = r.accuracies;
  j["mean"] = r.mean;
  j["std"] = r.std;
  j["config_hash"] = r.config_hash;
  j["config"] = r.config;
  return j.dump(2) + "\n";
}

RunReport deserialize_report(std::string_view data) {
  RunReport r;
  try {
    const json j = json::parse(data);
    r.method = j.at("method").get<std::string>();
    r.mode = parse_protocol_mode(j.at("mode").get<std::string>());
    r.shots = j.at("shots").get<std::size_t>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.accuracies = j.at("accuracies").get<std::vector<double>>();
    r.mean = j.at("mean").get<double>();
    r.std = j.at("std").get<double>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  if (!is_consistent(r)) throw ParseError("report: mean/std disagree with the per-seed accuracies");
  return r;
}

std::string serialize_manifest(const RunManifest& m) {
  json j;
  j["seed"] = m.seed;
  j["shots"] = m.shots;
  j["config_hash"] = m.config_hash;
  j["epoch"] = m.epoch;
  j["val_acc"] = m.val_acc;
  j["test_acc"] = m.test_acc;
  j["train_ids"] = m.train_ids;
  j["val_ids"] = m.val_ids;
  return j.dump(2) + "\n";
}

RunManifest deserialize_manifest(std::string_view data) {
  RunManifest m;
  try {
    const json j = json::parse(data);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.shots = j.at("shots").get<std::size_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.epoch = j.at("epoch").get<int>();
    m.val_acc = j.at("val_acc").get<double>();
    m.test_acc = j.at("test_acc").get<double>();
    m.train_ids = j.value("train_ids", std::vector<std::string>{});
    m.val_ids = j.value("val_ids", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ParseError(std::string("run manifest: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------- protocol

namespace {

struct Job {
  std::size_t shots = 0;
  std::uint64_t seed = 0;
};

std::string run_name(ProtocolMode mode, const Job& job) {
  if (mode == ProtocolMode::zero_shot) return "zero_shot_seed" + std::to_string(job.seed);
  return "k" + std::to_string(job.shots) + "_seed" + std::to_string(job.seed);
}

RunManifest execute(const MLMBackend& backend, const Verbalizer& v, const Dataset& pool,
                    std::span<const LabeledExample> test, const std::vector<int>& gold,
                    const ProtocolConfig& config, const Job& job) {
  RunManifest m;
  m.seed = job.seed;
  m.shots = job.shots;
  m.config_hash = config.config_hash;
  if (config.mode == ProtocolMode::zero_shot) {
    std::vector<int> preds;
    preds.reserve(test.size());
    for (const auto& ex : test) {
      preds.push_back(zero_shot_classify(backend, v, ex.abstract, config.prompt, config.tuning.aggregation));
    }
    m.test_acc = evaluate(preds, gold);
    return m;
  }
  const FewShotSplit split = sample_split(pool, job.shots, job.seed);
  for (const auto& ex : split.train) m.train_ids.push_back(ex.id);
  for (const auto& ex : split.val) m.val_ids.push_back(ex.id);
  auto tuned = backend.clone();
  std::optional<SoftVerbalizer> soft;
  if (config.soft) soft = SoftVerbalizer::build(*tuned, v);
  TuningConfig tuning = config.tuning;
  tuning.seed = job.seed;
  const TuningResult result = fine_tune(*tuned, v, split, tuning, config.prompt, soft ? &*soft : nullptr);
  m.epoch = result.best_epoch;
  m.val_acc = result.best_val_accuracy;
  m.test_acc = evaluate(predict(*tuned, v, test, config.prompt, tuning.aggregation, soft ? &*soft : nullptr), gold);
  return m;
}

}  // namespace

std::vector<RunReport> run_protocol(const MLMBackend& backend, const Verbalizer& v, const Dataset& pool,
                                    std::span<const LabeledExample> test, const ProtocolConfig& config,
                                    const std::optional<fs::path>& run_dir) {
  return run_protocol(
      backend, [&v](std::uint64_t) -> const Verbalizer& { return v; }, pool, test, config, run_dir);
}

std::vector<RunReport> run_protocol(const MLMBackend& backend, const VerbalizerForSeed& verbalizer,
                                    const Dataset& pool, std::span<const LabeledExample> test,
                                    const ProtocolConfig& config, const std::optional<fs::path>& run_dir) {
  if (test.empty()) throw PreconditionError("run_protocol needs a non-empty test set");
  if (config.seeds.empty()) throw ConfigError("run_protocol needs at least one seed");
  const std::vector<std::size_t> shots =
      config.mode == ProtocolMode::zero_shot ? std::vector<std::size_t>{0} : config.shots;
  if (shots.empty()) throw ConfigError("few-shot mode needs at least one shot count");

  std::vector<Job> jobs;
  for (auto k : shots) {
    for (auto s : config.seeds) jobs.push_back({k, s});
  }
  const auto gold = gold_labels(test);
  std::vector<RunManifest> done(jobs.size());

  auto run_one = [&](std::size_t i) {
    done[i] = execute(backend, verbalizer(jobs[i].seed), pool, test, gold, config, jobs[i]);
    if (run_dir) {
      write_file_atomic(*run_dir / run_name(config.mode, jobs[i]) / "manifest.json", serialize_manifest(done[i]));
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, config.max_parallel));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_one(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    std::vector<std::thread> pool_threads;
    for (std::size_t w = 0; w < std::min(workers, jobs.size()); ++w) {
      pool_threads.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (failure || next >= jobs.size()) return;
            i = next++;
          }
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool_threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<RunReport> reports;
  std::size_t i = 0;
  for (auto k : shots) {
    RunReport r;
    r.method = config.method;
    r.mode = config.mode;
    r.shots = k;
    r.config_hash = config.config_hash;
    r.config = config.config;
    for (auto s : config.seeds) {
      r.seeds.push_back(s);
      r.accuracies.push_back(done[i++].test_acc);
    }
    summarize(r);
    reports.push_back(std::move(r));
  }
  return reports;
}

namespace {

std::string file_safe(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out;
}

}  // namespace

void write_reports(const fs::path& dir, const std::vector<RunReport>& reports) {
  for (const auto& r : reports) {
    const std::string name = file_safe(r.method) + "_" + std::string(to_string(r.mode)) + "_k" +
                             std::to_string(r.shots) + ".json";
    write_file_atomic(dir / name, serialize_report(r));
  }
}

std::vector<RunReport> read_reports(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("report directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunReport> out;
  for (const auto& f : files) {
    try {
      out.push_back(deserialize_report(read_file(f)));
    } catch (const ParseError& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
  }
  return out;
}

std::string format_report_table(const std::vector<RunReport>& reports) {
  std::vector<std::string> methods;
  std::set<std::size_t> shots;
  for (const auto& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    shots.insert(r.shots);
  }
  auto cell = [&](std::size_t k, const std::string& method) -> std::string {
    for (const auto& r : reports) {
      if (r.shots == k && r.method == method) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(2) << r.mean * 100.0 << " ± " << r.std * 100.0;
        return s.str();
      }
    }
    return "-";
  };
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"shots"});
  for (const auto& m : methods) rows.back().push_back(m);
  for (auto k : shots) {
    rows.push_back({k == 0 ? "zero-shot" : std::to_string(k)});
    for (const auto& m : methods) rows.back().push_back(cell(k, m));
  }
  // "±" is two bytes but one column wide.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80 ? 1 : 0;
    return w;
  };
  std::vector<std::size_t> widths(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) out << "  ";
      out << rows[r][c] << std::string(widths[c] - width(rows[r][c]), ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      out << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace kverb
