#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace graphstad {

enum class Subdetector { HB, HE, Custom };

std::string to_string(Subdetector s);
Subdetector subdetector_from_string(const std::string& s);

/// Integer tower coordinate of a readout channel.
struct ChannelCoord {
  int ieta = 0;
  int iphi = 0;
  int depth = 0;

  auto operator<=>(const ChannelCoord&) const = default;
};

std::string to_string(const ChannelCoord& c);

/// Bin counts of a 3D occupancy histogram.
struct Dims {
  std::size_t n_ieta = 0;
  std::size_t n_iphi = 0;
  std::size_t n_depth = 0;

  std::size_t cells() const noexcept { return n_ieta * n_iphi * n_depth; }
  bool operator==(const Dims&) const = default;
};

/// Valid-channel mask plus channel → RBX partition over a (iη, iφ, depth) grid.
///
/// Cells are stored flat as [ieta_bin][iphi_bin][depth_bin]. iη bins run from
/// the most negative iη to the most positive; `ieta_values` records the iη value
/// held by each bin. iφ bin k holds iφ = k + 1 and depth bin d holds depth = d + 1.
class SegmentationMap {
 public:
  SegmentationMap() = default;
  SegmentationMap(Subdetector subdetector, Dims dims, std::vector<int> ieta_values,
                  std::vector<std::uint8_t> valid_mask, std::vector<int> rbx_index,
                  std::vector<std::string> rbx_names);

  Subdetector subdetector() const noexcept { return subdetector_; }
  const Dims& dims() const noexcept { return dims_; }
  const std::vector<int>& ieta_values() const noexcept { return ieta_values_; }
  const std::vector<std::uint8_t>& valid_mask() const noexcept { return valid_mask_; }
  const std::vector<std::string>& rbx_names() const noexcept { return rbx_names_; }
  std::size_t rbx_count() const noexcept { return rbx_names_.size(); }

  std::size_t flat_index(std::size_t ieta_bin, std::size_t iphi_bin, std::size_t depth_bin) const noexcept {
    return (ieta_bin * dims_.n_iphi + iphi_bin) * dims_.n_depth + depth_bin;
  }
  bool is_valid(std::size_t cell) const noexcept { return valid_mask_[cell] != 0; }
  /// RBX index of a cell, or -1 when the cell is not a physical channel.
  int rbx_of_cell(std::size_t cell) const noexcept { return rbx_index_[cell]; }
  const std::string& rbx_of(const ChannelCoord& c) const;

  /// Flat cell index of a coordinate; nullopt when outside the grid.
  std::optional<std::size_t> cell_of(const ChannelCoord& c) const;
  ChannelCoord coord_of(std::size_t cell) const;

  std::size_t channel_count() const noexcept { return channel_count_; }
  std::vector<std::size_t> valid_cells() const;
  /// Number of valid channels in every RBX, indexed like rbx_names().
  std::vector<std::size_t> rbx_sizes() const;

  bool operator==(const SegmentationMap&) const = default;

  nlohmann::json to_json() const;
  static SegmentationMap from_json(const nlohmann::json& j);

 private:
  void validate() const;

  Subdetector subdetector_ = Subdetector::Custom;
  Dims dims_;
  std::vector<int> ieta_values_;
  std::vector<std::uint8_t> valid_mask_;
  std::vector<int> rbx_index_;
  std::vector<std::string> rbx_names_;
  std::size_t channel_count_ = 0;
};

using GeometryPtr = std::shared_ptr<const SegmentationMap>;

/// One lumisection's occupancy histogram with its run conditions.
struct DigiOccupancyMap {
  std::vector<double> values;  ///< flat cells, same layout as SegmentationMap
  std::int64_t run_id = 0;
  int ls = 0;
  std::int64_t num_events = 0;    ///< ξ
  double received_luminosity = 0;  ///< β, pb^-1
};

/// Ordered lumisection maps sharing one geometry.
struct MapSequence {
  GeometryPtr geometry;
  std::vector<DigiOccupancyMap> maps;

  std::size_t size() const noexcept { return maps.size(); }
  /// Throws ValidationError if ls is not strictly increasing or a map has the
  /// wrong cell count.
  void validate() const;
  /// Maps [begin, end) as a new sequence sharing the geometry.
  MapSequence slice(std::size_t begin, std::size_t end) const;
};

/// Geometry factory. `rbx_count` RBXes are laid out as rbx_count/2 iφ sectors
/// per iη hemisphere. Custom geometries use a full mask over `custom_dims`.
SegmentationMap make_geometry(Subdetector subdetector, std::size_t rbx_count = 36,
                              std::optional<Dims> custom_dims = std::nullopt);

}  // namespace graphstad
