#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aog/types.hpp"

namespace aog {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int x, int y, int c = 0) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

// Reads PGM (P5) or PPM (P6), 8-bit maxval. Throws IoError if the file cannot
// be opened, FormatError on anything else (including formats we do not
// support, e.g. PNG).
Image load_image(const std::string& path);

// Writes gray images as P5, RGB as P6.
void save_image(const Image& image, const std::string& path);

}  // namespace aog
