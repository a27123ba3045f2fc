#pragma once

#include <filesystem>

#include <json.hpp>

#include "graphstad/parameter_store.hpp"

namespace graphstad {

/// Parameters plus free-form metadata (model spec, geometry, provenance).
struct Checkpoint {
  ParameterStore store;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Writes `<dir>/manifest.json` and `<dir>/params.bin` (little-endian float32,
/// row-major, entries in sorted-name order). Returns the directory.
std::filesystem::path save_checkpoint(const ParameterStore& store, const std::filesystem::path& dir,
                                      const nlohmann::json& metadata = nlohmann::json::object());

/// Throws CorruptionError when manifest and blob disagree.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

namespace detail {
void write_f32_le(std::ostream& os, double v);
float read_f32_le(const unsigned char* p);
}  // namespace detail

}  // namespace graphstad
