#pragma once

#include <filesystem>
#include <vector>

#include "graphstad/geometry.hpp"

namespace graphstad {

/// Writes one `run_<id>.json` + `run_<id>.bin` pair per run contained in the
/// sequence. The blob is little-endian float32, map after map, cells in
/// geometry order. Returns the written JSON paths.
std::vector<std::filesystem::path> save_runs(const MapSequence& seq, const std::filesystem::path& dir);

/// Loads every `run_*.json` in `dir` (ascending run id) into one sequence.
/// All runs must share one geometry.
MapSequence load_runs(const std::filesystem::path& dir);

}  // namespace graphstad
