#include "graphstad/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "graphstad/errors.hpp"

namespace graphstad {

std::string to_string(Subdetector s) {
  switch (s) {
    case Subdetector::HB: return "hb";
    case Subdetector::HE: return "he";
    case Subdetector::Custom: return "custom";
  }
  return "custom";
}

Subdetector subdetector_from_string(const std::string& s) {
  if (s == "hb" || s == "HB") return Subdetector::HB;
  if (s == "he" || s == "HE") return Subdetector::HE;
  if (s == "custom") return Subdetector::Custom;
  throw ConfigError("unknown subdetector '" + s + "' (expected hb|he|custom)");
}

std::string to_string(const ChannelCoord& c) {
  return "(" + std::to_string(c.ieta) + "," + std::to_string(c.iphi) + "," + std::to_string(c.depth) + ")";
}

SegmentationMap::SegmentationMap(Subdetector subdetector, Dims dims, std::vector<int> ieta_values,
                                 std::vector<std::uint8_t> valid_mask, std::vector<int> rbx_index,
                                 std::vector<std::string> rbx_names)
    : subdetector_(subdetector),
      dims_(dims),
      ieta_values_(std::move(ieta_values)),
      valid_mask_(std::move(valid_mask)),
      rbx_index_(std::move(rbx_index)),
      rbx_names_(std::move(rbx_names)) {
  validate();
  channel_count_ = static_cast<std::size_t>(std::count(valid_mask_.begin(), valid_mask_.end(), 1));
}

void SegmentationMap::validate() const {
  const auto cells = dims_.cells();
  if (cells == 0) throw ConfigError("segmentation map with zero cells");
  if (ieta_values_.size() != dims_.n_ieta) throw ConfigError("ieta_values size does not match n_ieta");
  if (valid_mask_.size() != cells || rbx_index_.size() != cells)
    throw ConfigError("mask / rbx index size does not match dims");
  for (int v : ieta_values_)
    if (v == 0) throw ConfigError("ieta value 0 is not a valid tower index");
  if (!std::is_sorted(ieta_values_.begin(), ieta_values_.end()) ||
      std::adjacent_find(ieta_values_.begin(), ieta_values_.end()) != ieta_values_.end())
    throw ConfigError("ieta_values must be strictly increasing");
  for (std::size_t c = 0; c < cells; ++c) {
    if (valid_mask_[c] > 1) throw ConfigError("valid mask entries must be 0 or 1");
    const int r = rbx_index_[c];
    if (valid_mask_[c]) {
      if (r < 0 || static_cast<std::size_t>(r) >= rbx_names_.size())
        throw ConfigError("valid channel " + to_string(coord_of(c)) + " has no RBX");
    } else if (r != -1) {
      throw ConfigError("invalid cell " + std::to_string(c) + " assigned to an RBX");
    }
  }
  std::set<std::string> names(rbx_names_.begin(), rbx_names_.end());
  if (names.size() != rbx_names_.size()) throw ConfigError("duplicate RBX names");
}

const std::string& SegmentationMap::rbx_of(const ChannelCoord& c) const {
  auto cell = cell_of(c);
  if (!cell || !is_valid(*cell)) throw ValidationError("coordinate " + to_string(c) + " is not a valid channel");
  return rbx_names_[static_cast<std::size_t>(rbx_index_[*cell])];
}

std::optional<std::size_t> SegmentationMap::cell_of(const ChannelCoord& c) const {
  auto it = std::lower_bound(ieta_values_.begin(), ieta_values_.end(), c.ieta);
  if (it == ieta_values_.end() || *it != c.ieta) return std::nullopt;
  if (c.iphi < 1 || static_cast<std::size_t>(c.iphi) > dims_.n_iphi) return std::nullopt;
  if (c.depth < 1 || static_cast<std::size_t>(c.depth) > dims_.n_depth) return std::nullopt;
  const auto ieta_bin = static_cast<std::size_t>(it - ieta_values_.begin());
  return flat_index(ieta_bin, static_cast<std::size_t>(c.iphi - 1), static_cast<std::size_t>(c.depth - 1));
}

ChannelCoord SegmentationMap::coord_of(std::size_t cell) const {
  const auto depth_bin = cell % dims_.n_depth;
  const auto iphi_bin = (cell / dims_.n_depth) % dims_.n_iphi;
  const auto ieta_bin = cell / (dims_.n_depth * dims_.n_iphi);
  return {ieta_values_[ieta_bin], static_cast<int>(iphi_bin) + 1, static_cast<int>(depth_bin) + 1};
}

std::vector<std::size_t> SegmentationMap::valid_cells() const {
  std::vector<std::size_t> out;
  out.reserve(channel_count_);
  for (std::size_t c = 0; c < valid_mask_.size(); ++c)
    if (valid_mask_[c]) out.push_back(c);
  return out;
}

std::vector<std::size_t> SegmentationMap::rbx_sizes() const {
  std::vector<std::size_t> sizes(rbx_names_.size(), 0);
  for (std::size_t c = 0; c < valid_mask_.size(); ++c)
    if (valid_mask_[c]) ++sizes[static_cast<std::size_t>(rbx_index_[c])];
  return sizes;
}

nlohmann::json SegmentationMap::to_json() const {
  nlohmann::json j;
  j["subdetector"] = to_string(subdetector_);
  j["dims"] = {dims_.n_ieta, dims_.n_iphi, dims_.n_depth};
  j["ieta_values"] = ieta_values_;
  j["mask"] = valid_mask_;
  j["rbx_index"] = rbx_index_;
  j["rbx_names"] = rbx_names_;
  return j;
}

SegmentationMap SegmentationMap::from_json(const nlohmann::json& j) {
  try {
    const auto d = j.at("dims").get<std::vector<std::size_t>>();
    if (d.size() != 3) throw ConfigError("geometry dims must have 3 entries");
    return SegmentationMap(subdetector_from_string(j.at("subdetector").get<std::string>()), Dims{d[0], d[1], d[2]},
                           j.at("ieta_values").get<std::vector<int>>(),
                           j.at("mask").get<std::vector<std::uint8_t>>(), j.at("rbx_index").get<std::vector<int>>(),
                           j.at("rbx_names").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed geometry JSON: ") + e.what());
  }
}

void MapSequence::validate() const {
  if (!geometry) throw ValidationError("map sequence without geometry");
  const auto cells = geometry->dims().cells();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].values.size() != cells)
      throw ValidationError("map at ls " + std::to_string(maps[i].ls) + " has " +
                            std::to_string(maps[i].values.size()) + " cells, geometry has " + std::to_string(cells));
    if (i > 0 && maps[i].ls <= maps[i - 1].ls && maps[i].run_id == maps[i - 1].run_id)
      throw ValidationError("lumisections not strictly increasing at ls " + std::to_string(maps[i].ls));
  }
}

MapSequence MapSequence::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > maps.size()) throw ValidationError("sequence slice out of range");
  MapSequence out{geometry, {}};
  out.maps.assign(maps.begin() + static_cast<std::ptrdiff_t>(begin), maps.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

namespace {

std::string rbx_name(const std::string& prefix, bool plus_side, std::size_t sector) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%c%02zu", prefix.c_str(), plus_side ? 'P' : 'M', sector + 1);
  return buf;
}

// Valid depths of one HE |iη| ring.
std::vector<int> he_depths(int abs_ieta) {
  switch (abs_ieta) {
    case 16: return {3, 4};
    case 17: return {1, 2};
    case 18:
    case 19: return {1, 2, 3, 4, 5};
    case 28: return {1, 2, 3, 4, 5, 6, 7};
    default: return {1, 2, 3};
  }
}

}  // namespace

SegmentationMap make_geometry(Subdetector subdetector, std::size_t rbx_count, std::optional<Dims> custom_dims) {
  Dims dims;
  std::vector<int> ieta_values;
  std::string prefix;
  switch (subdetector) {
    case Subdetector::HB:
      dims = {32, 72, 2};
      for (int v = -16; v <= 16; ++v)
        if (v != 0) ieta_values.push_back(v);
      prefix = "HB";
      break;
    case Subdetector::HE:
      dims = {28, 72, 7};
      for (int v = -29; v <= -16; ++v) ieta_values.push_back(v);
      for (int v = 16; v <= 29; ++v) ieta_values.push_back(v);
      prefix = "HE";
      break;
    case Subdetector::Custom: {
      if (!custom_dims) throw ConfigError("custom geometry requires dims");
      dims = *custom_dims;
      if (dims.n_ieta == 0 || dims.n_ieta % 2 != 0)
        throw ConfigError("custom geometry needs an even, non-zero number of ieta bins (two hemispheres)");
      const int half = static_cast<int>(dims.n_ieta / 2);
      for (int v = -half; v <= half; ++v)
        if (v != 0) ieta_values.push_back(v);
      prefix = "RBX";
      break;
    }
  }
  if (dims.n_iphi == 0 || dims.n_depth == 0) throw ConfigError("geometry dims must be positive");
  if (rbx_count == 0 || rbx_count % 2 != 0)
    throw ConfigError("rbx_count must be a positive even number (two hemispheres), got " + std::to_string(rbx_count));
  const std::size_t sectors = rbx_count / 2;
  if (dims.n_iphi % sectors != 0)
    throw ConfigError("iphi bins (" + std::to_string(dims.n_iphi) + ") not partitionable into " +
                      std::to_string(sectors) + " sectors per hemisphere");
  const std::size_t sector_width = dims.n_iphi / sectors;

  std::vector<std::string> names;
  for (int side = 0; side < 2; ++side)
    for (std::size_t s = 0; s < sectors; ++s) names.push_back(rbx_name(prefix, side == 1, s));

  std::vector<std::uint8_t> mask(dims.cells(), 0);
  std::vector<int> rbx(dims.cells(), -1);
  for (std::size_t e = 0; e < dims.n_ieta; ++e) {
    const int ieta = ieta_values[e];
    const int abs_ieta = ieta < 0 ? -ieta : ieta;
    for (std::size_t d = 0; d < dims.n_depth; ++d) {
      const int depth = static_cast<int>(d) + 1;
      bool valid = true;
      if (subdetector == Subdetector::HB) {
        valid = depth == 1 || abs_ieta >= 15;
      } else if (subdetector == Subdetector::HE) {
        const auto ds = he_depths(abs_ieta);
        valid = std::find(ds.begin(), ds.end(), depth) != ds.end();
      }
      if (!valid) continue;
      for (std::size_t p = 0; p < dims.n_iphi; ++p) {
        const std::size_t cell = (e * dims.n_iphi + p) * dims.n_depth + d;
        mask[cell] = 1;
        rbx[cell] = static_cast<int>((ieta > 0 ? sectors : 0) + p / sector_width);
      }
    }
  }
  return SegmentationMap(subdetector, dims, std::move(ieta_values), std::move(mask), std::move(rbx), std::move(names));
}

}  // namespace graphstad
