#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphstad/geometry.hpp"
#include "graphstad/preprocess.hpp"

namespace graphstad {

enum class AnomalyKind { Dead, Degraded, NoisyHot, FullyHot };

std::string to_string(AnomalyKind k);
AnomalyKind anomaly_kind_from_string(const std::string& s);

/// Channel-fault model γ_a = R_D · γ_h (dead: R_D = 0; fully hot: γ_a = ξ).
struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::Dead;
  double rd = 0.0;
  /// Number of affected windows. Windows are the stride-T tiles of the test
  /// sequence; the evaluated map of a window is its last lumisection.
  std::size_t n_ls = 1;
  std::size_t n_channels = 1;  ///< injected cells per affected window
  bool persist_T = true;       ///< modify all T maps of a window, not just the last
  int T = 5;
  /// Leave out cells whose R_D·γ_h would exceed ξ instead of clipping them.
  bool skip_overflow = false;
  std::uint64_t seed = 0;

  /// Checks kind/R_D consistency (R_D ≠ 1, dead ⇒ 0, degraded ∈ (0, 1), noisy > 1).
  void validate() const;
  nlohmann::json to_json() const;
  static AnomalySpec from_json(const nlohmann::json& j);
};

/// Anomalous value for a healthy value `gamma_h` in a map with ξ events.
/// `overflow` (optional) is set when R_D·γ_h exceeded ξ and was clipped.
double anomalous_value(double gamma_h, double xi, AnomalyKind kind, double rd, bool* overflow = nullptr);

struct Label {
  std::int64_t run_id = 0;
  int ls = 0;
  std::size_t cell = 0;

  auto operator<=>(const Label&) const = default;
};

struct LabeledSet {
  MapSequence maps;
  std::vector<Label> labels;  ///< sorted

  bool is_anomalous(std::int64_t run_id, int ls, std::size_t cell) const;
  /// Sparse (run, ls, iη, iφ, depth) records.
  nlohmann::json labels_json() const;
  static std::vector<Label> labels_from_json(const nlohmann::json& j, const SegmentationMap& geometry);
};

/// Injects anomalies into raw (pre-renormalization) maps. Locations are a pure
/// function of (seed, geometry, sequence length), so all kinds share them.
LabeledSet inject(const MapSequence& test, const AnomalySpec& spec);

/// One kind/factor combination of the evaluation suite.
struct SuiteCase {
  AnomalyKind kind = AnomalyKind::Dead;
  double rd = 0.0;

  std::string name() const;
};

/// Dead, degraded R_D ∈ {0.2, 0.4, 0.6, 0.8}, noisy-hot R_D = 2, fully hot.
std::vector<SuiteCase> default_suite_cases();

/// A test window (stride-T tile index) with its injected cells.
struct SuiteSample {
  std::size_t tile = 0;
  std::vector<std::size_t> cells;
};

/// Locations shared by every case; each sample yields one evaluated map per case.
struct EvalSuite {
  int T = 5;
  std::vector<SuiteCase> cases;
  std::vector<SuiteSample> samples;
  std::size_t channels_per_map = 0;
  double anomalous_fraction = 0.0;  ///< achieved: channels_per_map / valid channels
  bool skip_overflow = false;
  std::uint64_t seed = 0;

  std::size_t total_maps() const { return cases.size() * samples.size(); }
  nlohmann::json to_json() const;
  static EvalSuite from_json(const nlohmann::json& j);
};

/// `samples_per_case` samples cycle through the stride-T tiles of `test`;
/// every sample draws max(1, round(target_fraction · channels)) fresh cells.
EvalSuite build_eval_suite(const MapSequence& test, const std::vector<SuiteCase>& cases, std::size_t samples_per_case,
                           double target_fraction, int T, std::uint64_t seed, bool skip_overflow = false);

/// Raw T-map window of a sample with one case applied, plus the cells
/// actually labeled anomalous.
struct InjectedWindow {
  MapSequence maps;
  std::vector<std::size_t> cells;
};

InjectedWindow materialize_sample(const MapSequence& test, const std::vector<Window>& tiles, const EvalSuite& suite,
                                  std::size_t sample, const SuiteCase& c);

}  // namespace graphstad
