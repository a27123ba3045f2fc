#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphstad/eval.hpp"
#include "graphstad/geometry.hpp"
#include "graphstad/inject.hpp"
#include "graphstad/model.hpp"
#include "graphstad/score.hpp"
#include "graphstad/train.hpp"
#include "graphstad/transfer.hpp"

namespace graphstad {

/// Synthetic dataset recipe.
struct DataConfig {
  Subdetector subdetector = Subdetector::Custom;
  std::optional<Dims> dims;  ///< custom geometries only
  std::size_t rbx_count = 36;
  int n_ls = 1500;
  /// Lumisections in the training part; 0 means the first two thirds.
  int train_ls = 0;
  std::int64_t run_id = 1;
  double spike_prob = 0.02;
  std::vector<ChannelCoord> contaminate;  ///< persistent dead channels
  bool contaminate_test = true;           ///< also kill them in the test part

  int train_count() const { return train_ls > 0 ? train_ls : (2 * n_ls) / 3; }
  GeometryPtr geometry() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
};

struct EvalConfig {
  std::vector<SuiteCase> cases = default_suite_cases();
  std::size_t samples_per_case = 200;
  double anomalous_fraction = 0.0117;
  StateMode state_mode = StateMode::Reset;
  std::vector<double> captures{0.90, 0.95, 0.99};
  bool skip_overflow = false;

  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

/// Complete experiment description. Every random draw derives from `seed`
/// through named substreams (data, source-data, init, source-init, train,
/// source-train, injection) unless a section pins its own seed.
struct ExperimentConfig {
  std::string experiment_id = "experiment";
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;  ///< overrides the derived data seed
  std::filesystem::path output_root = "runs";
  DataConfig data;
  nlohmann::json model = nlohmann::json::object();  ///< ModelSpec overrides
  TrainConfig train;
  TLConfig tl;
  std::optional<DataConfig> source_data;  ///< required unless tl.init_mode is RANDOM
  TrainConfig source_train;
  EvalConfig eval;
  bool run_eval = true;
  std::vector<std::uint64_t> repeat_seeds;  ///< extra init/train seeds for dispersion rows

  std::uint64_t resolved_data_seed() const;
  /// Throws ConfigError before any work is done.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Splits a generated run into its training and test parts.
struct DataSplit {
  MapSequence train;
  MapSequence test;
};
DataSplit generate_dataset(const DataConfig& cfg, std::uint64_t seed);

ModelSpec model_spec_for(const ExperimentConfig& cfg, const SegmentationMap& geometry);

struct PipelineSummary {
  std::filesystem::path dir;
  double test_mse = 0;
  double final_val_mse = 0;
  int best_epoch = 0;
  std::vector<MetricRow> metrics;
  nlohmann::json summary;
};

/// Runs every stage under `<output_root>/<experiment_id>`; finished stages
/// whose configuration is unchanged are loaded instead of recomputed.
PipelineSummary run_pipeline(const ExperimentConfig& cfg, bool quiet = true);
PipelineSummary run_pipeline(const std::filesystem::path& config_path, bool quiet = true);

/// ΔMSE rows (avg and best) of each run against the RANDOM/No-TL run.
/// Throws ConfigError when the runs disagree on geometry or data seed.
struct ComparisonRow {
  std::string run;
  std::string init_mode, train_mode;
  std::string row;  ///< "avg" | "best"
  double test_mse = 0;
  double delta = 0;  ///< (mse - base) / base
};
std::vector<ComparisonRow> compare_runs(const std::vector<std::filesystem::path>& dirs);
void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& os);
void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::filesystem::path& path);

/// FNV-1a of a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace graphstad
