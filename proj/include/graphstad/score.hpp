#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphstad/model.hpp"
#include "graphstad/preprocess.hpp"

namespace graphstad {

enum class StateMode { Reset, Preserve };

std::string to_string(StateMode m);
StateMode state_mode_from_string(const std::string& s);

struct SeriesReconstruction {
  std::vector<Tensor> recon;        ///< per window, [T, n_ieta, n_iphi, n_depth], model scale
  std::vector<RnnState> state_in;   ///< empty states in reset mode
  std::vector<RnnState> state_out;
};

/// Inference-mode (z = μ) reconstruction of a window series. In preserve mode
/// the end state of window k seeds window k+1; windows must then follow each
/// other without a lumisection gap inside one run.
SeriesReconstruction reconstruct_series(const GraphStadModel& model, const ParameterStore& store,
                                        const std::vector<Window>& windows, StateMode mode,
                                        std::size_t batch_size = 32);

/// e_i = (1/T) Σ_t |x_i(t) − x̄_i(t)| on valid cells, 0 elsewhere. x and x̄ are
/// T stacked maps of `mask.size()` cells each.
std::vector<double> mae_window(std::span<const double> x, std::span<const double> xbar, std::size_t T,
                               const std::vector<double>& mask);

/// Window error in event-normalized units: the input and its reconstruction
/// are both mapped back through min-max and the input's median tables.
std::vector<double> window_error(const SegmentationMap& geometry, const MinMaxCalib& calib,
                                 const Window& window, const Tensor& recon,
                                 const std::vector<MedianTable>& medians);

inline constexpr double kSigmaFloor = 1e-12;

/// Per-channel standard deviation of training-window errors.
struct SigmaCalib {
  std::vector<double> sigma;  ///< per cell; 1 outside the valid mask
  StateMode mode = StateMode::Reset;
  std::size_t windows = 0;

  nlohmann::json to_json() const;
  static SigmaCalib from_json(const nlohmann::json& j);
};

/// Population standard deviation over windows, floored at kSigmaFloor.
SigmaCalib calibrate_sigma(const std::vector<std::vector<double>>& train_errors, const SegmentationMap& geometry,
                           StateMode mode);

/// a_i = e_i / σ_i.
std::vector<double> anomaly_score(const std::vector<double>& errors, const SigmaCalib& calib);

/// Largest α with at least `capture_rate` of `scores` strictly above it: the
/// value just below the ⌈r·n⌉-th largest score.
double threshold_for_capture(std::vector<double> scores, double capture_rate);

/// Errors of every window of a preprocessed series.
struct SeriesErrors {
  std::vector<std::vector<double>> errors;
  SeriesReconstruction recon;
};

SeriesErrors series_errors(const GraphStadModel& model, const ParameterStore& store, const MinMaxCalib& calib,
                           const PreprocessedSequence& seq, const std::vector<Window>& windows, StateMode mode);

}  // namespace graphstad
