#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "graphstad/geometry.hpp"
#include "graphstad/random.hpp"
#include "graphstad/synthgen.hpp"

namespace gtest_util {

inline graphstad::GeometryPtr custom_geometry(std::size_t ne, std::size_t np, std::size_t nd, std::size_t rbx = 4) {
  return std::make_shared<const graphstad::SegmentationMap>(
      graphstad::make_geometry(graphstad::Subdetector::Custom, rbx, graphstad::Dims{ne, np, nd}));
}

inline graphstad::GeometryPtr standard_geometry(graphstad::Subdetector sd) {
  return std::make_shared<const graphstad::SegmentationMap>(graphstad::make_geometry(sd));
}

inline graphstad::MapSequence synthetic_run(const graphstad::GeometryPtr& geo, int n_ls, std::uint64_t seed) {
  return graphstad::generate_run(graphstad::make_profile(geo, n_ls, seed));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("graphstad_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace gtest_util
