#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kverb/dataset.hpp"
#include "kverb/mlm_backend.hpp"
#include "kverb/prompt_classifier.hpp"
#include "kverb/prompt_template.hpp"
#include "kverb/verbalizer.hpp"

namespace kverb {

enum class DatasetFormat { jsonl };

DatasetFormat parse_dataset_format(std::string_view s);

struct IngestOptions {
  DatasetFormat format = DatasetFormat::jsonl;
  /// Abstracts with fewer whitespace tokens are dropped.
  std::size_t min_tokens = 30;
};

/// Reads `{id, abstract, label}` records. A label is a class name
/// (case-insensitive) or an integer id of `classes`. Throws DatasetError
/// listing every unknown label, or when the file holds no records.
Dataset ingest(const std::filesystem::path& path, const std::vector<ClassLabel>& classes,
               const IngestOptions& options = {});

void write_dataset_jsonl(const std::filesystem::path& path, std::span<const LabeledExample> examples);

/// K train and K validation examples per class, drawn without replacement.
/// Throws DatasetError naming the first class with fewer than 2K examples.
FewShotSplit sample_split(const Dataset& dataset, std::size_t shots, std::uint64_t seed);

/// Up to `size` examples drawn without replacement, in draw order.
std::vector<LabeledExample> sample_support(const Dataset& dataset, std::size_t size,
                                           std::uint64_t seed);

/// Fraction of exact matches. Throws PreconditionError on a length mismatch
/// or empty input.
double evaluate(std::span<const int> predictions, std::span<const int> gold);

std::vector<int> gold_labels(std::span<const LabeledExample> examples);

enum class ProtocolMode { few_shot, zero_shot };

std::string_view to_string(ProtocolMode m);
ProtocolMode parse_protocol_mode(std::string_view s);

struct RunReport {
  std::string method;
  ProtocolMode mode = ProtocolMode::few_shot;
  std::size_t shots = 0;  // 0 in zero-shot mode
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // aligned with seeds
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::string config_hash;
  std::map<std::string, std::string> config;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Fills mean and std from the per-seed accuracies.
void summarize(RunReport& report);
/// True when stored mean and std match a recomputation within 1e-9.
bool is_consistent(const RunReport& report);

std::string serialize_report(const RunReport& report);
/// Throws ParseError on malformed input or an inconsistent summary.
RunReport deserialize_report(std::string_view data);

struct RunManifest {
  std::uint64_t seed = 0;
  std::size_t shots = 0;
  std::string config_hash;
  int epoch = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  std::vector<std::string> train_ids;  // empty in zero-shot mode
  std::vector<std::string> val_ids;
};

std::string serialize_manifest(const RunManifest& m);
RunManifest deserialize_manifest(std::string_view data);

struct ProtocolConfig {
  std::string method = "full";
  ProtocolMode mode = ProtocolMode::few_shot;
  std::vector<std::size_t> shots{1, 5, 10, 20, 50};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  TuningConfig tuning;
  PromptTemplate prompt = PromptTemplate::canonical();
  bool soft = false;
  /// Runs executed concurrently; each owns a cloned backend.
  int max_parallel = 1;
  std::string config_hash;
  std::map<std::string, std::string> config;
};

/// For each (K, seed): sample a split from `pool`, tune a clone of `backend`,
/// and score it on `test`; zero-shot mode instead scores the untouched
/// backend once per seed and ignores the shot list. Run manifests are written
/// under `run_dir/k<K>_seed<S>/` (or `zero_shot_seed<S>/`) as runs finish,
/// so completed runs survive a later failure. Returns one report per K.
std::vector<RunReport> run_protocol(const MLMBackend& backend, const Verbalizer& v,
                                    const Dataset& pool, std::span<const LabeledExample> test,
                                    const ProtocolConfig& config,
                                    const std::optional<std::filesystem::path>& run_dir);

/// Verbalizer used by the runs of one seed.
using VerbalizerForSeed = std::function<const Verbalizer&(std::uint64_t seed)>;

/// As above, with a per-seed verbalizer (zero-shot calibration draws its
/// support set per seed).
std::vector<RunReport> run_protocol(const MLMBackend& backend, const VerbalizerForSeed& verbalizer,
                                    const Dataset& pool, std::span<const LabeledExample> test,
                                    const ProtocolConfig& config,
                                    const std::optional<std::filesystem::path>& run_dir);

/// Writes `<dir>/<method>_<mode>_k<K>.json` for each report.
void write_reports(const std::filesystem::path& dir, const std::vector<RunReport>& reports);
std::vector<RunReport> read_reports(const std::filesystem::path& dir);

/// Rows are shot counts (0 for zero-shot), columns are methods, cells are
/// "mean ± std" in percent.
std::string format_report_table(const std::vector<RunReport>& reports);

}  // namespace kverb
