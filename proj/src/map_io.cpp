#include "graphstad/map_io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "graphstad/checkpoint.hpp"
#include "graphstad/errors.hpp"

namespace graphstad {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<fs::path> save_runs(const MapSequence& seq, const fs::path& dir) {
  seq.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::map<std::int64_t, std::vector<const DigiOccupancyMap*>> runs;
  for (const auto& m : seq.maps) runs[m.run_id].push_back(&m);

  std::vector<fs::path> written;
  for (const auto& [run_id, maps] : runs) {
    const auto stem = "run_" + std::to_string(run_id);
    json j = seq.geometry->to_json();
    j["run_id"] = run_id;
    j["ls"] = json::array();
    j["xi"] = json::array();
    j["beta"] = json::array();
    const auto bin_path = dir / (stem + ".bin");
    std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot open " + bin_path.string() + " for writing");
    for (const auto* m : maps) {
      j["ls"].push_back(m->ls);
      j["xi"].push_back(m->num_events);
      j["beta"].push_back(m->received_luminosity);
      for (double v : m->values) detail::write_f32_le(bin, v);
    }
    bin.close();
    if (!bin) throw IoError("failed writing " + bin_path.string());
    const auto json_path = dir / (stem + ".json");
    std::ofstream js(json_path, std::ios::trunc);
    if (!js) throw IoError("cannot open " + json_path.string() + " for writing");
    js << j.dump() << '\n';
    if (!js) throw IoError("failed writing " + json_path.string());
    written.push_back(json_path);
  }
  return written;
}

MapSequence load_runs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::pair<std::int64_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() == ".json" && name.rfind("run_", 0) == 0) {
      try {
        files.emplace_back(std::stoll(name.substr(4, name.size() - 9)), entry.path());
      } catch (const std::exception&) {
        throw IoError("unparsable run file name " + entry.path().string());
      }
    }
  }
  if (files.empty()) throw IoError("no run_<id>.json files in " + dir.string());
  std::sort(files.begin(), files.end());

  MapSequence seq;
  for (const auto& [run_id, json_path] : files) {
    std::ifstream js(json_path);
    if (!js) throw IoError("cannot open " + json_path.string());
    json j;
    try {
      js >> j;
    } catch (const json::exception& e) {
      throw IoError("malformed " + json_path.string() + ": " + e.what());
    }
    auto geometry = std::make_shared<const SegmentationMap>(SegmentationMap::from_json(j));
    if (!seq.geometry) seq.geometry = geometry;
    else if (!(*seq.geometry == *geometry))
      throw ValidationError("run " + std::to_string(run_id) + " in " + dir.string() + " uses a different geometry");

    auto bin_path = json_path;
    bin_path.replace_extension(".bin");
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw IoError("cannot open " + bin_path.string());
    const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    const auto ls = j.at("ls").get<std::vector<int>>();
    const auto xi = j.at("xi").get<std::vector<std::int64_t>>();
    const auto beta = j.at("beta").get<std::vector<double>>();
    const auto cells = seq.geometry->dims().cells();
    if (xi.size() != ls.size() || beta.size() != ls.size())
      throw IoError("ls/xi/beta length mismatch in " + json_path.string());
    if (blob.size() != 4 * cells * ls.size())
      throw IoError("blob " + bin_path.string() + " has " + std::to_string(blob.size()) + " bytes, expected " +
                    std::to_string(4 * cells * ls.size()));
    for (std::size_t k = 0; k < ls.size(); ++k) {
      DigiOccupancyMap m;
      m.run_id = run_id;
      m.ls = ls[k];
      m.num_events = xi[k];
      m.received_luminosity = beta[k];
      m.values.resize(cells);
      for (std::size_t c = 0; c < cells; ++c) m.values[c] = detail::read_f32_le(blob.data() + 4 * (k * cells + c));
      seq.maps.push_back(std::move(m));
    }
  }
  seq.validate();
  return seq;
}

}  // namespace graphstad
