#include "bevtrack/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_packing(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  std::vector<png_byte> buffer(stride * height);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) rows[r] = buffer.data() + r * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image image(width, height);
  for (int r = 0; r < height; ++r)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) image(c, r, x) = rows[r][3 * x + c] / 255.0f;
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const int width = image.width();
  const int height = image.height();
  std::vector<png_byte> buffer(static_cast<std::size_t>(width) * height * 3);
  for (int r = 0; r < height; ++r)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image(c, r, x), 0.0f, 1.0f);
        buffer[(static_cast<std::size_t>(r) * width + x) * 3 + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }

  AtomicFile out(path);
  FilePtr fp(std::fopen(out.temp_path().c_str(), "wb"));
  if (!fp) throw IoError("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r)
    png_write_row(png, buffer.data() + static_cast<std::size_t>(r) * width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  fp.reset();
  out.commit();
}

}  // namespace bevtrack
