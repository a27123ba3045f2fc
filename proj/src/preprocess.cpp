#include "graphstad/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "graphstad/errors.hpp"

namespace graphstad {

using nlohmann::json;

DigiOccupancyMap renormalize_events(const DigiOccupancyMap& map) {
  if (map.num_events <= 0)
    throw ValidationError("ls " + std::to_string(map.ls) + ": number of events must be positive, got " +
                          std::to_string(map.num_events));
  DigiOccupancyMap out = map;
  const double xi = static_cast<double>(map.num_events);
  for (double& v : out.values) v /= xi;
  return out;
}

namespace {

double median_of(std::vector<double>& v) {
  const auto n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

void check_dims(const Dims& expected, const Dims& got, const char* what) {
  if (!(expected == got)) throw ValidationError(std::string(what) + " does not match the map geometry");
}

}  // namespace

json MedianTable::to_json() const {
  return {{"ls", ls}, {"run_id", run_id}, {"dims", {dims.n_ieta, dims.n_iphi, dims.n_depth}}, {"medians", medians}};
}

MedianTable MedianTable::from_json(const json& j) {
  MedianTable t;
  t.ls = j.at("ls").get<int>();
  t.run_id = j.at("run_id").get<std::int64_t>();
  const auto d = j.at("dims").get<std::vector<std::size_t>>();
  t.dims = {d.at(0), d.at(1), d.at(2)};
  t.medians = j.at("medians").get<std::vector<double>>();
  return t;
}

MedianRenormResult median_renorm(const DigiOccupancyMap& map, const SegmentationMap& geometry) {
  const auto& dims = geometry.dims();
  if (map.values.size() != dims.cells()) throw ValidationError("map size does not match geometry");
  MedianRenormResult out{map, {map.ls, map.run_id, dims, std::vector<double>(dims.n_ieta * dims.n_depth, 1.0)}};
  std::vector<double> ring;
  ring.reserve(dims.n_iphi);
  for (std::size_t e = 0; e < dims.n_ieta; ++e) {
    for (std::size_t d = 0; d < dims.n_depth; ++d) {
      ring.clear();
      for (std::size_t p = 0; p < dims.n_iphi; ++p) {
        const auto cell = geometry.flat_index(e, p, d);
        if (geometry.is_valid(cell)) ring.push_back(map.values[cell]);
      }
      if (ring.empty()) continue;
      const double med = std::max(median_of(ring), kMedianFloor);
      out.table.medians[e * dims.n_depth + d] = med;
      for (std::size_t p = 0; p < dims.n_iphi; ++p) {
        const auto cell = geometry.flat_index(e, p, d);
        if (geometry.is_valid(cell)) out.map.values[cell] = map.values[cell] / med;
      }
    }
  }
  return out;
}

DigiOccupancyMap median_renorm_invert(const DigiOccupancyMap& map, const MedianTable& table,
                                      const SegmentationMap& geometry) {
  const auto& dims = geometry.dims();
  check_dims(dims, table.dims, "median table");
  if (table.medians.size() != dims.n_ieta * dims.n_depth) throw ValidationError("median table has wrong ring count");
  if (table.ls != map.ls || table.run_id != map.run_id)
    throw ValidationError("median table for ls " + std::to_string(table.ls) + " applied to ls " +
                          std::to_string(map.ls));
  DigiOccupancyMap out = map;
  for (std::size_t e = 0; e < dims.n_ieta; ++e)
    for (std::size_t p = 0; p < dims.n_iphi; ++p)
      for (std::size_t d = 0; d < dims.n_depth; ++d) {
        const auto cell = geometry.flat_index(e, p, d);
        if (geometry.is_valid(cell)) out.values[cell] = map.values[cell] * table.at(e, d);
      }
  return out;
}

json MinMaxCalib::to_json() const {
  return {{"dims", {dims.n_ieta, dims.n_iphi, dims.n_depth}}, {"min", min}, {"max", max}, {"constant", constant}};
}

MinMaxCalib MinMaxCalib::from_json(const json& j) {
  MinMaxCalib c;
  const auto d = j.at("dims").get<std::vector<std::size_t>>();
  c.dims = {d.at(0), d.at(1), d.at(2)};
  c.min = j.at("min").get<std::vector<double>>();
  c.max = j.at("max").get<std::vector<double>>();
  c.constant = j.at("constant").get<std::vector<std::uint8_t>>();
  return c;
}

MinMaxCalib minmax_fit(const MapSequence& train) {
  train.validate();
  if (train.maps.empty()) throw ValidationError("min-max fit needs at least one map");
  const auto& geo = *train.geometry;
  const auto cells = geo.dims().cells();
  MinMaxCalib calib{geo.dims(), std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0),
                    std::vector<std::uint8_t>(cells, 0)};
  for (std::size_t c = 0; c < cells; ++c) {
    if (!geo.is_valid(c)) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& m : train.maps) {
      lo = std::min(lo, m.values[c]);
      hi = std::max(hi, m.values[c]);
    }
    calib.min[c] = lo;
    calib.max[c] = hi;
    calib.constant[c] = hi == lo ? 1 : 0;
  }
  return calib;
}

DigiOccupancyMap minmax_apply(const DigiOccupancyMap& map, const MinMaxCalib& calib, const SegmentationMap& geometry) {
  check_dims(geometry.dims(), calib.dims, "min-max calibration");
  if (map.values.size() != calib.min.size()) throw ValidationError("map size does not match calibration");
  DigiOccupancyMap out = map;
  for (std::size_t c = 0; c < out.values.size(); ++c) {
    if (!geometry.is_valid(c) || calib.constant[c]) {
      out.values[c] = 0.0;
      continue;
    }
    out.values[c] = (map.values[c] - calib.min[c]) / (calib.max[c] - calib.min[c]);
  }
  return out;
}

DigiOccupancyMap minmax_invert(const DigiOccupancyMap& map, const MinMaxCalib& calib, const SegmentationMap& geometry) {
  check_dims(geometry.dims(), calib.dims, "min-max calibration");
  if (map.values.size() != calib.min.size()) throw ValidationError("map size does not match calibration");
  DigiOccupancyMap out = map;
  for (std::size_t c = 0; c < out.values.size(); ++c) {
    if (!geometry.is_valid(c)) {
      out.values[c] = 0.0;
      continue;
    }
    out.values[c] = calib.constant[c] ? calib.min[c] : map.values[c] * (calib.max[c] - calib.min[c]) + calib.min[c];
  }
  return out;
}

GraphTopology::GraphTopology(const SegmentationMap& geometry) {
  std::vector<std::pair<ChannelCoord, std::size_t>> nodes;
  for (auto cell : geometry.valid_cells()) nodes.emplace_back(geometry.coord_of(cell), cell);
  std::sort(nodes.begin(), nodes.end());
  blocks_.resize(geometry.rbx_count());
  node_of_cell_.assign(geometry.dims().cells(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    coords_.push_back(nodes[i].first);
    cells_.push_back(nodes[i].second);
    const auto b = static_cast<std::size_t>(geometry.rbx_of_cell(nodes[i].second));
    block_.push_back(b);
    blocks_[b].push_back(i);
    node_of_cell_[nodes[i].second] = static_cast<std::int64_t>(i);
  }
}

std::size_t GraphTopology::node_of_cell(std::size_t cell) const {
  if (cell >= node_of_cell_.size() || node_of_cell_[cell] < 0)
    throw ValidationError("cell " + std::to_string(cell) + " is not a graph node");
  return static_cast<std::size_t>(node_of_cell_[cell]);
}

std::vector<std::uint8_t> GraphTopology::dense_adjacency() const {
  const auto m = node_count();
  std::vector<std::uint8_t> a(m * m, 0);
  for (const auto& block : blocks_)
    for (auto i : block)
      for (auto j : block) a[i * m + j] = 1;
  return a;
}

GraphTopology build_adjacency(const SegmentationMap& geometry) { return GraphTopology(geometry); }

std::vector<Window> make_windows(const MapSequence& seq, int T, int stride) {
  if (T <= 0) throw ValidationError("window length T must be positive, got " + std::to_string(T));
  if (stride <= 0) throw ValidationError("window stride must be positive, got " + std::to_string(stride));
  seq.validate();
  const auto& dims = seq.geometry->dims();
  const auto cells = dims.cells();
  const auto t = static_cast<std::size_t>(T);
  std::vector<Window> out;
  std::size_t start = 0;
  while (start + t <= seq.maps.size()) {
    // First break in contiguity inside [start, start + T).
    std::size_t brk = 0;
    for (std::size_t k = start + 1; k < start + t; ++k) {
      const auto& prev = seq.maps[k - 1];
      const auto& cur = seq.maps[k];
      if (cur.run_id != prev.run_id || cur.ls != prev.ls + 1) {
        brk = k;
        break;
      }
    }
    if (brk != 0) {
      start = brk;  // restart the tiling at the first map after the gap
      continue;
    }
    Window w;
    w.run_id = seq.maps[start].run_id;
    w.data = Tensor({t, dims.n_ieta, dims.n_iphi, dims.n_depth});
    for (std::size_t k = 0; k < t; ++k) {
      const auto& m = seq.maps[start + k];
      w.ls.push_back(m.ls);
      w.map_index.push_back(start + k);
      std::copy(m.values.begin(), m.values.end(), w.data.data.begin() + static_cast<std::ptrdiff_t>(k * cells));
    }
    out.push_back(std::move(w));
    start += static_cast<std::size_t>(stride);
  }
  return out;
}

PreprocessedSequence renormalize_sequence(const MapSequence& raw) {
  raw.validate();
  PreprocessedSequence out{{raw.geometry, {}}, {}};
  out.maps.maps.reserve(raw.size());
  out.medians.reserve(raw.size());
  for (const auto& m : raw.maps) {
    auto r = median_renorm(renormalize_events(m), *raw.geometry);
    out.maps.maps.push_back(std::move(r.map));
    out.medians.push_back(std::move(r.table));
  }
  return out;
}

PreprocessedSequence preprocess_sequence(const MapSequence& raw, const MinMaxCalib& calib) {
  auto out = renormalize_sequence(raw);
  for (auto& m : out.maps.maps) m = minmax_apply(m, calib, *raw.geometry);
  return out;
}

DigiOccupancyMap postprocess_map(const DigiOccupancyMap& model_scale, const MedianTable& table,
                                 const MinMaxCalib& calib, const SegmentationMap& geometry) {
  return median_renorm_invert(minmax_invert(model_scale, calib, geometry), table, geometry);
}

}  // namespace graphstad
