#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "kverb/config.hpp"
#include "kverb/harness.hpp"

namespace kverb {

/// Record written after a stage completes: the hash of everything it read
/// and the hash of every file it produced (paths relative to out_dir).
struct StageManifest {
  std::string stage;
  std::string input_hash;
  std::map<std::string, std::string> outputs;
};

std::string serialize_stage_manifest(const StageManifest& m);
StageManifest deserialize_stage_manifest(std::string_view data);

struct PipelineResult {
  std::vector<std::string> ran;
  std::vector<std::string> skipped;
  std::vector<RunReport> reports;
};

/// retrieve -> train-nli -> filter -> backend -> calibrate -> experiment,
/// then prints the report table to `log`. Stages whose recorded input hash
/// matches and whose outputs are intact are skipped. Disabled stages
/// (train-nli without fl, calibrate without cl, backend when one is
/// supplied) are neither run nor reported as skipped.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream& log,
                            WarningSink warn = stderr_warnings());

/// Vocabulary texts and pretraining corpus for a fresh backend: the training
/// abstracts, every term of `v`, and the prompt pattern.
TinyMLM build_backend(const Verbalizer& v, const Dataset& pool, const PromptTemplate& prompt,
                      const TinyMLMConfig& model, const PretrainConfig& pretrain);

}  // namespace kverb
