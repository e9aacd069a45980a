#pragma once

#include <filesystem>

#include "bevtrack/grid.hpp"

namespace bevtrack {

// Planar RGB raster, channel values in [0, 1].
struct Image {
  Grid<float> pixels;

  Image() = default;
  Image(int width, int height, float fill = 0.0f) : pixels(3, height, width, fill) {}

  int width() const { return pixels.cols(); }
  int height() const { return pixels.rows(); }
  float& operator()(int c, int row, int col) { return pixels(c, row, col); }
  float operator()(int c, int row, int col) const { return pixels(c, row, col); }
  bool operator==(const Image&) const = default;
};

// 8-bit PNG I/O. Gray and RGBA inputs are expanded/stripped to RGB.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace bevtrack
