#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nlh/config.hpp"

namespace nlh {

inline constexpr const char* kToolVersion = "0.3.0";

struct PipelineOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> stages;  ///< empty selects every stage
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool strict = false;  ///< soft verification failures also give a nonzero exit code
  bool force = false;   ///< rerun stages even when their outputs match the config hash
  std::map<std::string, std::string> overrides;
  std::ostream* log = nullptr;
};

struct StageRecord {
  std::string name;
  std::string status;  ///< "ran" or "skipped"
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;
};

struct PipelineResult {
  int exit_code = 0;
  std::string config_hash;
  std::vector<StageRecord> stages;
  std::string report_text;  ///< verify summary when the verify stage ran
};

/// Stage names in dependency order.
const std::vector<std::string>& stage_names();
const std::vector<std::string>& stage_dependencies(const std::string& stage);
/// Output files (relative to the output directory) written by a stage.
std::vector<std::string> stage_outputs(const std::string& stage, const Config& cfg);

/// Loads the config (or the config recorded in a manifest.json), applies overrides.
Config resolve_config(const PipelineOptions& opt);

/// Runs the selected stages in dependency order and writes manifest.json last.
/// Exit codes: 0 success, 3 hard verification failure, 4 soft failure under --strict.
PipelineResult run_pipeline(const PipelineOptions& opt);

/// Reads the config hash carried by an artifact file; empty when absent.
std::string artifact_hash(const std::string& path);

}  // namespace nlh
