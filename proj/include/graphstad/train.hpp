#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphstad/model.hpp"
#include "graphstad/preprocess.hpp"

namespace graphstad {

enum class Schedule { Fixed, OneCycle };

struct OneCycleParams {
  double max_lr = 1e-3;
  double div_factor = 25.0;
  double final_div_factor = 1e2;
  double pct_start = 0.3;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 6;
  int T = 5;
  int epochs = 60;
  Schedule schedule = Schedule::Fixed;
  OneCycleParams one_cycle;
  double val_fraction = 0.2;
  LossWeights loss;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// lr at `step` of a cosine one-cycle schedule over `total_steps` steps:
/// max_lr/div_factor → max_lr over the first pct_start of the steps, then down
/// to (max_lr/div_factor)/final_div_factor at the last step.
double one_cycle_lr(std::size_t step, std::size_t total_steps, const OneCycleParams& p);

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_mse = 0, train_kl = 0, train_l2 = 0;
  double val_mse = 0;
  double lr = 0;  ///< lr of the epoch's last step
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;  ///< one entry per optimizer step
  int best_epoch = 0;            ///< 0 when no epoch ran (initial parameters)
  double initial_val_mse = 0;

  /// Columns: epoch, train_mse, train_kl, train_l2, val_mse, lr.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  ParameterStore best;
  ParameterStore last;
  TrainHistory history;
};

/// Chronological split: the last val_fraction of the windows validate.
struct WindowSplit {
  std::vector<Window> train;
  std::vector<Window> val;
};
WindowSplit split_windows(std::vector<Window> windows, double val_fraction);

/// Stacks windows into a [B, T, n_ieta, n_iphi, n_depth] batch.
Tensor stack_windows(const std::vector<const Window*>& windows, const Dims& dims);

/// Masked MSE of the inference-mode reconstruction, averaged over windows.
double evaluate_mse(const GraphStadModel& model, const ParameterStore& store, const std::vector<Window>& windows,
                    std::size_t batch_size = 32);

/// Adam on the trainable entries of `init`. Parameters are rounded to
/// float32 after every step. Frozen entries (and the running statistics of
/// inference-mode BN layers) are never written.
TrainResult train(const GraphStadModel& model, const ParameterStore& init, const std::vector<Window>& windows,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = nullptr);

struct DispersionSummary {
  std::vector<double> test_mse;  ///< one per repetition
  double mean = 0, min = 0, max = 0;
  std::size_t best_index = 0;
};

/// Trains once per seed (model init and shuffling both follow the seed) and
/// summarises the test ℒ_MSE of each run's best checkpoint.
DispersionSummary repeat_experiments(const std::function<double(std::uint64_t seed)>& run_once,
                                     const std::vector<std::uint64_t>& seeds);

}  // namespace graphstad
