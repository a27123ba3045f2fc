#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>

#include "graphstad/errors.hpp"
#include "graphstad/eval.hpp"

namespace graphstad {

void write_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values, std::size_t width,
                       std::size_t height) {
  if (values.size() != width * height || width == 0 || height == 0) throw ValidationError("heatmap size mismatch");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(width * 2);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double v = span > 0 ? (values[r * width + c] - lo) / span : 0.0;
      const auto q = static_cast<unsigned>(std::clamp(v, 0.0, 1.0) * 65535.0 + 0.5);
      row[2 * c] = static_cast<png_byte>(q >> 8);
      row[2 * c + 1] = static_cast<png_byte>(q & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace graphstad
