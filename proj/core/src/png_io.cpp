#include "icl/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace icl {

uint8_t scalar_to_u8(real v) {
  v = std::clamp(v, real(-1), real(1));
  double scaled = 255.0 * (double(v) + 1.0) / 2.0;
  long r = std::lround(scaled); // rounds half away from zero
  if (r < 0) r = 0;
  if (r > 255) r = 255;
  return uint8_t(r);
}

real u8_to_scalar(uint8_t p) { return real(2) * (real(p) / real(255)) - real(1); }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Canvas read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  ICL_CHECK_IO(fp != nullptr, "cannot open '" << path << "' for reading");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ICL_CHECK_IO(png, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw RuntimeError("png_create_info_struct failed");
  }
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeError("png decode error for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);

  // Normalize every input to 8-bit RGB.
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  data.resize(size_t(h) * w * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = data.data() + size_t(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Canvas canvas = Canvas::zeros(int(h), int(w));
  real* px = canvas.pixels.value_mut().data();
  const int64_t plane = int64_t(h) * w;
  for (int64_t y = 0; y < int64_t(h); ++y)
    for (int64_t x = 0; x < int64_t(w); ++x)
      for (int64_t c = 0; c < 3; ++c)
        px[c * plane + y * w + x] = u8_to_scalar(data[size_t((y * w + x) * 3 + c)]);
  return canvas;
}

void write_png(const std::string& path, const Canvas& canvas) {
  ICL_CHECK(canvas.pixels.defined() && canvas.pixels.rank() == 3 && canvas.pixels.dim(0) == 3,
            "write_png: canvas pixels must be [3, h, w]");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  ICL_CHECK_IO(fp != nullptr, "cannot open '" << path << "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ICL_CHECK_IO(png, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw RuntimeError("png_create_info_struct failed");
  }
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeError("png encode error for '" + path + "'");
  }
  png_init_io(png, fp.get());

  const int h = canvas.height, w = canvas.width;
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const real* px = canvas.pixels.value().data();
  const int64_t plane = int64_t(h) * w;
  data.resize(size_t(h) * w * 3);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        data[size_t((y * w + x) * 3 + c)] = scalar_to_u8(px[c * plane + y * w + x]);
  rows.resize(size_t(h));
  for (int y = 0; y < h; ++y) rows[size_t(y)] = data.data() + size_t(y) * w * 3;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

} // namespace icl
