#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kverb/harness.hpp"
#include "kverb/kb_retrieval.hpp"
#include "kverb/nli_filter.hpp"
#include "kverb/prompt_classifier.hpp"
#include "kverb/tiny_mlm.hpp"

namespace kverb {

/// Every pipeline setting. Each field has a default; the plain-text form is
/// one `key = value` per line with '#' comments (see config_keys()).
struct PipelineConfig {
  std::filesystem::path classes = "classes.txt";
  std::filesystem::path train = "train.jsonl";
  std::filesystem::path test = "test.jsonl";
  std::filesystem::path nli_data;  // required when fl is on
  std::filesystem::path backend;   // saved backend; built from the training pool when empty
  std::filesystem::path out_dir = "runs";
  std::filesystem::path cache_dir;  // defaults to <out_dir>/kb_cache

  KBClientOptions kb;
  int kb_parallel = 2;

  FilterConfig filter;
  bool ss = true;
  bool cl = true;
  bool fl = true;
  std::string method;  // report label; derived from the ablation flags when empty

  std::string prompt = "canonical";
  TermAggregation aggregation = TermAggregation::mean;
  bool soft = false;
  bool freeze_backend = false;
  int epochs = 5;
  double lr = 3e-5;
  int batch = 5;
  int max_length = 256;

  ProtocolMode mode = ProtocolMode::few_shot;
  std::vector<std::size_t> shots{1, 5, 10, 20, 50};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t support_size = 200;
  bool calibration_gold_labels = false;
  std::size_t min_tokens = 30;
  int max_parallel = 1;

  EncoderTrainingConfig nli;
  TinyMLMConfig backend_model;
  PretrainConfig pretrain;

  /// Canonical key/value snapshot, in sorted key order.
  std::map<std::string, std::string> values() const;
  std::filesystem::path effective_cache_dir() const;
  std::string method_label() const;
};

/// Recognized keys with their default values.
const std::map<std::string, std::string>& config_keys();

/// Applies one `key = value` setting. Throws ConfigError naming an unknown
/// key or an unparseable value.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);

/// Reads `path` (when given) over the defaults, then applies `overrides` in
/// order. Throws ConfigError on unknown keys, repeated keys in the file, or
/// malformed lines.
PipelineConfig load_config(const std::optional<std::filesystem::path>& path,
                           const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// `key = value` lines in sorted key order.
std::string format_config(const PipelineConfig& config);

/// Every value except the output locations (out_dir, cache_dir).
std::map<std::string, std::string> settings_snapshot(const PipelineConfig& config);

/// SHA-256 over settings_snapshot in sorted key order, so it does not depend
/// on the order keys were given in or on where outputs go.
std::string config_hash(const PipelineConfig& config);

}  // namespace kverb
