#include "dfr/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "dfr/error.hpp"

namespace dfr {

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw RuntimeFailure("cannot open image: " + path.string());

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw RuntimeFailure("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeFailure("libpng initialization failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeFailure("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rows[y][x * 3 + c] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw RuntimeFailure("cannot write image: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("libpng initialization failed");
  }
  const int w = img.width();
  const int h = img.height();
  std::vector<png_byte> buffer(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    double v = img.data()[i];
    v = std::isfinite(v) ? std::min(1.0, std::max(0.0, v)) : 0.0;
    buffer[i] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * 3;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("failed writing PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dfr
