#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "graphstad/inject.hpp"
#include "graphstad/model.hpp"
#include "graphstad/score.hpp"

namespace graphstad {

/// Rank-based (Mann-Whitney) AUC with ties counted half. Throws
/// ValidationError unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct ConfusionRates {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> fpr;        ///< FP / (FP + TN)
  std::optional<double> precision;  ///< TP / (TP + FP)
  std::optional<double> recall;     ///< TP / (TP + FN)
};

ConfusionRates confusion_rates(const std::vector<std::uint8_t>& flags, const std::vector<std::uint8_t>& labels);

/// Errors and scores of every sample of one suite case.
struct CaseScores {
  SuiteCase c;
  std::vector<std::vector<double>> errors;          ///< per sample, per cell
  std::vector<std::vector<double>> scores;          ///< per sample, per cell
  std::vector<std::vector<std::size_t>> injected;   ///< per sample, labeled cells

  /// Valid-cell scores and labels over all samples.
  void flatten(const SegmentationMap& geometry, std::vector<double>& scores_out,
               std::vector<std::uint8_t>& labels_out, std::vector<double>* errors_out = nullptr) const;
};

struct SuiteScoringInputs {
  const GraphStadModel* model = nullptr;
  const ParameterStore* store = nullptr;
  const MinMaxCalib* minmax = nullptr;
  const SigmaCalib* sigma = nullptr;
  const MapSequence* test = nullptr;  ///< raw test maps
  const EvalSuite* suite = nullptr;
};

/// Scores every (case, sample). In preserve mode each sample starts from the
/// recurrent state left by the clean test windows preceding its tile. The
/// state mode is taken from the sigma calibration.
std::vector<CaseScores> score_suite(const SuiteScoringInputs& in);

struct MetricRow {
  std::string kind;
  double rd = 0;
  double capture = 0;
  double threshold = 0;
  std::optional<double> fpr, precision, recall;
  double auc = 0;
};

/// One row per capture rate: α from the injected-cell scores, flags = a > α.
std::vector<MetricRow> case_metrics(const CaseScores& cs, const SegmentationMap& geometry,
                                    const std::vector<double>& captures);

/// Columns: kind, rd, capture, fpr, precision, recall, auc (undefined rates
/// are written as empty fields).
void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

/// n_ieta × n_iphi slice of a per-cell array at one depth bin (row-major,
/// iη bins as rows).
std::vector<double> depth_slice(const std::vector<double>& cells, const SegmentationMap& geometry,
                                std::size_t depth_bin);

/// Grayscale heatmap scaled to [min, max] of the values (16-bit PNG).
void write_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values, std::size_t width,
                       std::size_t height);
void write_grid_csv(const std::filesystem::path& path, const std::vector<double>& values, std::size_t width,
                    std::size_t height);
std::vector<double> read_grid_csv(const std::filesystem::path& path);

struct ReportInputs {
  const SegmentationMap* geometry = nullptr;
  const std::vector<CaseScores>* cases = nullptr;
  std::vector<double> train_mean_error;  ///< per cell
  double proximity_capture = 0.90;       ///< α used to call a healthy channel "high"
  std::size_t heatmap_samples = 1;       ///< samples per case rendered as heatmaps
  std::size_t histogram_bins = 40;
};

struct ReportBundle {
  std::vector<std::filesystem::path> heatmaps;  ///< CSV grids; PNGs sit next to them
  std::filesystem::path histograms;
  std::filesystem::path train_mean_error;
  std::filesystem::path proximity;
};

/// Error heatmaps, healthy-vs-anomalous histograms, the training mean-error
/// map and a proximity report of high-scoring healthy channels.
ReportBundle error_reports(const ReportInputs& in, const std::filesystem::path& dir);

/// Training error of persistently dead (contaminated) channels and the scores
/// of dead-channel injections that landed on them.
struct ContaminationRow {
  ChannelCoord coord;
  double train_mean_error = 0;
  std::size_t dead_injections = 0;       ///< dead-case samples that picked this channel
  std::size_t dead_below_threshold = 0;  ///< of those, scored at or below the threshold
};

struct ContaminationReport {
  double healthy_median = 0;  ///< median training error over the other valid channels
  double capture = 0;
  double threshold = 0;       ///< dead-case α at `capture`
  std::vector<ContaminationRow> rows;

  bool all_below_median() const;
  std::size_t injections() const;
  bool injections_below_threshold() const;
  nlohmann::json to_json() const;
};

ContaminationReport contamination_report(const SegmentationMap& geometry, const std::vector<ChannelCoord>& contaminated,
                                         const std::vector<double>& train_mean_error, const CaseScores& dead_case,
                                         double capture = 0.90);
void write_contamination_csv(const ContaminationReport& report, const std::filesystem::path& path);

/// Distance in (iη bin, iφ bin with wrap-around, depth bin) space.
double cell_distance(const SegmentationMap& geometry, std::size_t a, std::size_t b);

}  // namespace graphstad
