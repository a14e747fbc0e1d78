// PNG output for previews, via libpng.
#pragma once

#include <cstdio>
#include <memory>
#include <string>

#include <png.h>

#include "rawsim/errors.hpp"
#include "rawsim/render.hpp"

namespace rawsim {

inline void write_png(const std::string& path, const Image8& image) {
  if (image.rows <= 0 || image.cols <= 0) throw ParameterError("write_png: empty image");
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"),
                                                     &std::fclose);
  if (!fp) throw FormatError("write_png: cannot open " + path, 0);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("write_png: init failed", 0);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError("write_png: info init failed", 0);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("write_png: encode failed for " + path, 0);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols),
               static_cast<png_uint_32>(image.rows), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < image.rows; ++r) {
    png_write_row(png, const_cast<png_bytep>(&image.rgb[static_cast<size_t>(r) * image.cols * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace rawsim
