#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "depthfake/bench.hpp"
#include "depthfake/depth.hpp"
#include "depthfake/eval.hpp"
#include "depthfake/face.hpp"
#include "depthfake/manifest.hpp"
#include "depthfake/preprocess.hpp"
#include "depthfake/train.hpp"
#include "depthfake/types.hpp"

namespace depthfake::cli {

struct DatasetConfig {
  std::filesystem::path root;
  // Layout rules file; empty uses the FaceForensics++ layout.
  std::filesystem::path layout_file;
};

struct PrepareConfig {
  std::vector<ChannelConfig> configs = {std::begin(kAllChannelConfigs), std::end(kAllChannelConfigs)};
  bool allow_upscale = false;
};

struct EvalConfig {
  double threshold = eval::kDefaultThreshold;
  std::string checkpoint = "best";  // checkpoint name inside each model directory
};

struct BenchConfig {
  std::string platform = "cpu";
  int warmup = 20;
  int iters = 100;
  std::vector<ChannelConfig> configs = {std::begin(kAllChannelConfigs), std::end(kAllChannelConfigs)};
  bool include_face_extraction = false;
  std::filesystem::path lock_file = "/tmp/depthfake-bench.lock";
};

// "per_class" trains one model per fake class in the manifest plus one on
// FULL; "full" trains only the FULL model; a class name trains that class.
struct ExperimentConfig {
  DatasetConfig dataset;
  SplitFractions splits;
  std::uint64_t split_seed = 0;
  std::string scope = "per_class";
  RunConfig run;
  depth::EstimatorOptions depth;
  preprocess::DetectorOptions detector;
  PrepareConfig prepare;
  EvalConfig eval;
  BenchConfig bench;
  std::filesystem::path output_dir = "runs/default";
  std::filesystem::path cache_dir;  // empty: $DEPTHFAKE_CACHE_DIR, else <output_dir>/cache
  int jobs = 1;

  // Throws ConfigError naming the field path.
  void validate() const;
  std::filesystem::path resolved_cache_dir() const;
  std::filesystem::path manifest_path() const { return resolved_cache_dir() / "manifest.jsonl"; }
  // <output_dir>/<CONFIG>/<scope>
  std::filesystem::path model_dir(const std::string& scope_name) const;
};

// Strict: unknown keys and type errors raise ConfigError with the field path.
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Dotted-path overrides ("run.epochs" -> "1"). Values that parse as JSON are
// used as such, anything else as a string.
using Overrides = std::vector<std::pair<std::string, std::string>>;

// Defaults, then the config file (when non-empty), then overrides.
ExperimentConfig load_config(const std::filesystem::path& file, const Overrides& overrides = {});

std::string config_hash(const ExperimentConfig& c);

// provenance.json: command, full config, hashes, seeds and code version.
void write_provenance(const std::filesystem::path& dir, const std::string& command,
                      const ExperimentConfig& c, const nlohmann::json& extra = nlohmann::json::object());

struct PrepareSummary {
  std::size_t frames = 0;
  std::size_t processed = 0;  // frames whose stacks were computed this run
  std::size_t cached = 0;     // frames already complete in the cache
  std::size_t no_face = 0;
  std::size_t warnings = 0;
  std::vector<std::string> messages;
};

void to_json(nlohmann::json& j, const PrepareSummary& s);

PrepareSummary cmd_prepare(const ExperimentConfig& c);

// Scopes cmd_train would train for the prepared manifest.
std::vector<std::string> training_scopes(const ExperimentConfig& c, const std::vector<FrameRecord>& records);

// Records used by one scope: every REAL frame plus the fakes of the scope's
// class (all fakes for FULL).
std::vector<FrameRecord> scope_records(const std::vector<FrameRecord>& records, const std::string& scope);

struct TrainOutcome {
  std::string scope;
  train::TrainState state;
};

std::vector<TrainOutcome> cmd_train(const ExperimentConfig& c, bool resume = false);
eval::EvalReport cmd_eval(const ExperimentConfig& c);
std::vector<bench::BenchResult> cmd_bench(const ExperimentConfig& c);
std::string cmd_bench_report(const ExperimentConfig& c);
std::vector<eval::PlotRow> cmd_plot(const std::vector<std::filesystem::path>& reports,
                                    const std::filesystem::path& out_dir);

struct FixtureOptions {
  std::filesystem::path out;
  int videos_per_class = 4;
  int frames_per_video = 3;
  std::uint64_t seed = 0;
};

void cmd_fixture(const FixtureOptions& options);

// Process exit code for an exception: 1 validation, 2 runtime, 3 missing
// external resource.
int exit_code_for(const std::exception& e);

// Entry point of the `depthfake` executable.
int run(int argc, char** argv);

}  // namespace depthfake::cli
