#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "graphstad/geometry.hpp"
#include "graphstad/tensor.hpp"

namespace graphstad {

inline constexpr double kMedianFloor = 1e-8;

/// γ̂ = γ / ξ. Throws ValidationError when ξ ≤ 0.
DigiOccupancyMap renormalize_events(const DigiOccupancyMap& map);

/// Per-LS medians over iφ of every (iη, depth) ring, floored at kMedianFloor.
/// Rings without valid channels hold 1.
struct MedianTable {
  int ls = 0;
  std::int64_t run_id = 0;
  Dims dims;
  std::vector<double> medians;  ///< [ieta_bin * n_depth + depth_bin]

  double at(std::size_t ieta_bin, std::size_t depth_bin) const { return medians[ieta_bin * dims.n_depth + depth_bin]; }
  nlohmann::json to_json() const;
  static MedianTable from_json(const nlohmann::json& j);
};

struct MedianRenormResult {
  DigiOccupancyMap map;
  MedianTable table;
};

MedianRenormResult median_renorm(const DigiOccupancyMap& map, const SegmentationMap& geometry);
/// Exact inverse; throws ValidationError when the table belongs to another
/// geometry or lumisection.
DigiOccupancyMap median_renorm_invert(const DigiOccupancyMap& map, const MedianTable& table,
                                      const SegmentationMap& geometry);

/// Per-channel affine scaling into [0, 1] fitted on a training split.
struct MinMaxCalib {
  Dims dims;
  std::vector<double> min;
  std::vector<double> max;
  std::vector<std::uint8_t> constant;  ///< 1 where max == min (valid cells only)

  nlohmann::json to_json() const;
  static MinMaxCalib from_json(const nlohmann::json& j);
};

MinMaxCalib minmax_fit(const MapSequence& train);
DigiOccupancyMap minmax_apply(const DigiOccupancyMap& map, const MinMaxCalib& calib, const SegmentationMap& geometry);
DigiOccupancyMap minmax_invert(const DigiOccupancyMap& map, const MinMaxCalib& calib, const SegmentationMap& geometry);

/// Channel graph where A(i, j) = 1 iff channels i and j share an RBX.
///
/// Nodes are the valid channels in sorted ChannelCoord order. The adjacency is
/// kept as RBX blocks; `adjacent` answers dense queries.
class GraphTopology {
 public:
  GraphTopology() = default;
  explicit GraphTopology(const SegmentationMap& geometry);

  std::size_t node_count() const noexcept { return coords_.size(); }
  const std::vector<ChannelCoord>& nodes() const noexcept { return coords_; }
  /// Flat cell of every node.
  const std::vector<std::size_t>& node_cells() const noexcept { return cells_; }
  /// RBX block of every node.
  const std::vector<std::size_t>& node_block() const noexcept { return block_; }
  /// Node indices per RBX block.
  const std::vector<std::vector<std::size_t>>& blocks() const noexcept { return blocks_; }
  std::size_t node_of_cell(std::size_t cell) const;

  bool adjacent(std::size_t i, std::size_t j) const { return block_[i] == block_[j]; }
  std::size_t degree(std::size_t i) const { return blocks_[block_[i]].size(); }
  /// Dense M×M adjacency (row-major); intended for small graphs and tests.
  std::vector<std::uint8_t> dense_adjacency() const;

 private:
  std::vector<ChannelCoord> coords_;
  std::vector<std::size_t> cells_;
  std::vector<std::size_t> block_;
  std::vector<std::vector<std::size_t>> blocks_;
  std::vector<std::int64_t> node_of_cell_;
};

GraphTopology build_adjacency(const SegmentationMap& geometry);

/// T consecutive maps stacked as [T, n_ieta, n_iphi, n_depth].
struct Window {
  std::int64_t run_id = 0;
  std::vector<int> ls;
  std::vector<std::size_t> map_index;  ///< positions in the source sequence
  Tensor data;
};

/// Contiguous-LS windows of length T advanced by `stride`. Windows crossing a run
/// boundary or an LS gap are not emitted. Throws ValidationError when T or
/// stride is not positive.
std::vector<Window> make_windows(const MapSequence& seq, int T, int stride);

/// Full forward chain (events → median → min-max) with the state required to
/// invert it.
struct PreprocessedSequence {
  MapSequence maps;                 ///< model-scale values
  std::vector<MedianTable> medians; ///< one per map
};

/// Applies events and median renormalization (no min-max).
PreprocessedSequence renormalize_sequence(const MapSequence& raw);
/// events → median → min-max using an already fitted calibration.
PreprocessedSequence preprocess_sequence(const MapSequence& raw, const MinMaxCalib& calib);
/// Inverts min-max then median renormalization; returns γ̂ (event-normalized).
DigiOccupancyMap postprocess_map(const DigiOccupancyMap& model_scale, const MedianTable& table,
                                 const MinMaxCalib& calib, const SegmentationMap& geometry);

}  // namespace graphstad
