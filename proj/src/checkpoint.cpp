#include "graphstad/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "graphstad/errors.hpp"

namespace graphstad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

void write_f32_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  os.write(bytes, 4);
}

float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

fs::path save_checkpoint(const ParameterStore& store, const fs::path& dir, const json& metadata) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "graphstad-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float32-le";
  manifest["metadata"] = metadata;
  manifest["entries"] = json::array();

  const auto blob_path = dir / "params.bin";
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot open " + blob_path.string() + " for writing");
  std::uint64_t offset = 0;
  for (const auto& [name, entry] : store) {
    manifest["entries"].push_back({{"name", name},
                                   {"shape", entry.tensor.shape},
                                   {"trainable", entry.trainable},
                                   {"offset", offset},
                                   {"count", entry.tensor.size()}});
    for (double v : entry.tensor.data) detail::write_f32_le(blob, v);
    offset += 4 * entry.tensor.size();
  }
  blob.close();
  if (!blob) throw IoError("failed writing " + blob_path.string());

  const auto manifest_path = dir / "manifest.json";
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw IoError("cannot open " + manifest_path.string() + " for writing");
  mf << manifest.dump(1) << '\n';
  mf.close();
  if (!mf) throw IoError("failed writing " + manifest_path.string());
  return dir;
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto blob_path = dir / "params.bin";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw CorruptionError("<manifest>", std::string("unparsable manifest.json: ") + e.what());
  }
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw IoError("cannot open " + blob_path.string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  Checkpoint out;
  if (manifest.contains("metadata")) out.metadata = manifest["metadata"];
  std::uint64_t expected_offset = 0;
  try {
    for (const auto& e : manifest.at("entries")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto count = e.at("count").get<std::uint64_t>();
      if (count != numel(shape))
        throw CorruptionError(name, "count " + std::to_string(count) + " does not match shape " + shape_str(shape));
      if (offset != expected_offset)
        throw CorruptionError(name, "offset " + std::to_string(offset) + " leaves a gap or overlap (expected " +
                                        std::to_string(expected_offset) + ")");
      if (offset + 4 * count > blob.size())
        throw CorruptionError(name, "blob truncated: needs " + std::to_string(offset + 4 * count) + " bytes, has " +
                                        std::to_string(blob.size()));
      Tensor t(shape);
      for (std::size_t i = 0; i < count; ++i) t.data[i] = detail::read_f32_le(blob.data() + offset + 4 * i);
      out.store.insert(name, std::move(t), e.at("trainable").get<bool>());
      expected_offset = offset + 4 * count;
    }
  } catch (const json::exception& e) {
    throw CorruptionError("<manifest>", std::string("malformed entry list: ") + e.what());
  }
  if (expected_offset != blob.size())
    throw CorruptionError("<unlisted>", "blob holds " + std::to_string(blob.size() - expected_offset) +
                                            " bytes not referenced by any manifest entry");
  return out;
}

}  // namespace graphstad
