#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hsrgan::io {

// 8-bit RGB raster, row-major interleaved.
struct Rgb8Image {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Rgb8Image& image);
Rgb8Image read_png(const std::filesystem::path& path);

}  // namespace hsrgan::io
